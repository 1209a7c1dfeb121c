//! Hysteresis operators on a refined threshold triangle, history-dependent
//! multistep integration, and adaptive estimation and control of plants
//! with distributed hysteretic inputs.

pub mod adaptive;
pub mod error;
pub mod experiment;
pub mod integrator;
pub mod kernel;
pub mod mesh;
pub mod operator;
pub mod plant;
pub mod scenario;

pub use error::{Error, Result};
