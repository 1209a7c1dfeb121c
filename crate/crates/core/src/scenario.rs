//! Experiment configuration and the builders that turn it into runnable
//! systems. Shared by the command-line front end and the test suites.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    lyapunov_solve, multisine, AdjointDrive, AdjointWeight, ClosedLoopChecks, ClosedLoopSystem, IdentificationSystem,
    LyapunovPair, SlidingConfig,
};
use crate::error::{Error, Result};
use crate::integrator::{PcScheme, Startup};
use crate::kernel::RidgeFunction;
use crate::mesh::{project_analytic, DistributedParameter, Point, TriDomain};
use crate::operator::{ChannelSpec, OperatorBank, ScalarizerA};
use crate::plant::{
    regulator_transform, tracking_transform, FeedbackTransform, Reference, RoboticModel, WingMode, WingModel,
    WingParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    MeshInfo,
    ApproxError,
    IntegrateBenchmark,
    SimulatePlant,
    Identify,
    ControlWing,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::MeshInfo,
        Self::ApproxError,
        Self::IntegrateBenchmark,
        Self::SimulatePlant,
        Self::Identify,
        Self::ControlWing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MeshInfo => "mesh-info",
            Self::ApproxError => "approx-error",
            Self::IntegrateBenchmark => "integrate-benchmark",
            Self::SimulatePlant => "simulate-plant",
            Self::Identify => "identify",
            Self::ControlWing => "control-wing",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::MeshInfo => "cell count, areas and quadrature points of one refinement level",
            Self::ApproxError => "max-over-time quadrature error e_j against a fine level, with fitted rate",
            Self::IntegrateBenchmark => {
                "convergence order of the predictor-corrector on an integro-differential benchmark"
            }
            Self::SimulatePlant => "open-loop wing section with hysteretic lift under multi-sine forcing",
            Self::Identify => "online estimation of the distributed parameter with a level sweep",
            Self::ControlWing => "sliding-mode adaptive tracking control of the wing section",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Analytic distributed parameter `μ(s1, s2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MuFamily {
    Constant,
    /// Lipschitz with a kink along `s1 = s2`-parallel lines.
    #[default]
    Lipschitz,
    /// Smooth bump centred in the triangle.
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuSpec {
    pub family: MuFamily,
    pub offset: f64,
    pub scale: f64,
}

impl Default for MuSpec {
    fn default() -> Self {
        Self {
            family: MuFamily::Lipschitz,
            offset: 1.0,
            scale: 1.0,
        }
    }
}

impl MuSpec {
    pub fn eval(&self, s: Point) -> f64 {
        let shape = match self.family {
            MuFamily::Constant => 0.0,
            MuFamily::Lipschitz => 0.5 * (2.0 * s[0]).sin() * s[1].cos() + 0.3 * (s[1] - s[0] - 0.5).abs(),
            MuFamily::Smooth => (-(s[0] * s[0] + s[1] * s[1])).exp(),
        };
        self.offset + self.scale * shape
    }

    pub fn function(&self) -> impl Fn(Point) -> f64 + Sync + '_ {
        move |s| self.eval(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub s_lo: f64,
    pub s_hi: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { s_lo: -1.0, s_hi: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub level: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { level: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    pub fine_level: usize,
    pub levels: Vec<usize>,
    pub segments: usize,
    pub amplitude: f64,
    pub samples_per_segment: usize,
    /// Accepted band for the fitted slope of `log2 e_j`.
    pub slope_band: [f64; 2],
    /// Largest accepted `max C_j / min C_j`.
    pub max_constant_spread: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            fine_level: 7,
            levels: vec![2, 3, 4, 5],
            segments: 100,
            amplitude: 1.4,
            samples_per_segment: 8,
            slope_band: [-2.4, -1.6],
            max_constant_spread: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StartupConfig {
    #[default]
    RungeKutta,
    LowerOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub order: usize,
    pub startup: StartupConfig,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            order: 4,
            startup: StartupConfig::RungeKutta,
        }
    }
}

impl IntegratorConfig {
    pub fn scheme(&self) -> Result<PcScheme> {
        let startup = match self.startup {
            StartupConfig::RungeKutta => Startup::RungeKutta,
            StartupConfig::LowerOrder => Startup::LowerOrder,
        };
        PcScheme::with_startup(self.order, startup)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub orders: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub horizon: f64,
    /// Accepted `|slope − p|` per order, same length as `orders`.
    pub slope_tolerance: Vec<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            orders: vec![2, 4],
            step_sizes: vec![4e-3, 2e-3, 1e-3, 5e-4],
            horizon: 2.0,
            slope_tolerance: vec![0.3, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    /// Diagonal of `G0`.
    pub g0: Vec<f64>,
    /// Diagonal of `G1`.
    pub g1: Vec<f64>,
    /// Diagonal of `Q` for the Lyapunov equation.
    pub q: Vec<f64>,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            g0: vec![4.0, 4.0],
            g1: vec![4.0, 4.0],
            q: vec![8.0, 8.0, 5.2, 5.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub amplitude: f64,
    pub tones: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            amplitude: 20.0,
            tones: 6,
            w_lo: 0.5,
            w_hi: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub level: usize,
    pub step: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub excitation: ExcitationConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            level: 3,
            step: 1e-3,
            horizon: 10.0,
            x0: vec![0.0, 0.1, 0.0, 0.0],
            excitation: ExcitationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub plant_level: usize,
    pub estimator_level: usize,
    pub sweep_levels: Vec<usize>,
    pub reference_level: usize,
    pub gain: f64,
    pub drive: AdjointDrive,
    pub weight: AdjointWeight,
    pub step: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub excitation: ExcitationConfig,
    pub record_every: usize,
    /// Required `‖X̃(T)‖ / ‖X̃(0)‖`.
    pub max_state_error_ratio: f64,
    /// Required mismatch reduction factor.
    pub min_mismatch_reduction: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            plant_level: 3,
            estimator_level: 3,
            sweep_levels: vec![1, 2, 3, 4],
            reference_level: 6,
            gain: 6000.0,
            drive: AdjointDrive::StateError,
            weight: AdjointWeight::Lyapunov,
            step: 5e-3,
            horizon: 40.0,
            x0: vec![0.05, 0.1, 0.0, 0.0],
            xhat0: vec![0.0; 4],
            excitation: ExcitationConfig {
                amplitude: 6.0,
                ..ExcitationConfig::default()
            },
            record_every: 20,
            max_state_error_ratio: 1e-3,
            min_mismatch_reduction: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub plant_level: usize,
    pub ctrl_level: usize,
    pub k: f64,
    pub epsilon: f64,
    pub gain: f64,
    pub step: f64,
    pub horizon: f64,
    pub reference_amplitude: Vec<f64>,
    pub reference_omega: Vec<f64>,
    pub x0: Vec<f64>,
    /// Uniform perturbation of `x0` drawn from the run seed.
    pub x0_perturbation: f64,
    pub checks: ClosedLoopChecks,
    /// Fail the run (exit 4) unless the chattering flag equals this.
    pub expect_chattering: Option<bool>,
    /// Required fraction of steps satisfying the dissipation inequality.
    pub min_dissipation_fraction: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            plant_level: 5,
            ctrl_level: 3,
            k: 20.0,
            epsilon: 0.01,
            gain: 20.0,
            step: 5e-4,
            horizon: 10.0,
            reference_amplitude: vec![0.1, 0.3],
            reference_omega: vec![2.0, 3.0],
            x0: vec![0.05, -0.1, 0.0, 0.0],
            x0_perturbation: 0.02,
            checks: ClosedLoopChecks::default(),
            expect_chattering: None,
            min_dissipation_fraction: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub domain: DomainConfig,
    pub ridge: RidgeFunction,
    pub mu: MuSpec,
    pub kappa_seed: f64,
    pub mesh: MeshConfig,
    pub approx: ApproxConfig,
    pub integrator: IntegratorConfig,
    pub benchmark: BenchmarkConfig,
    pub wing: WingParams,
    pub wing_mode: WingMode,
    pub gains: GainConfig,
    pub simulate: SimulateConfig,
    pub identify: IdentifyConfig,
    pub control: ControlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            seed: 0,
            domain: DomainConfig::default(),
            ridge: RidgeFunction::saturation(),
            mu: MuSpec::default(),
            kappa_seed: 0.0,
            mesh: MeshConfig::default(),
            approx: ApproxConfig::default(),
            integrator: IntegratorConfig::default(),
            benchmark: BenchmarkConfig::default(),
            wing: WingParams::default(),
            wing_mode: WingMode::default(),
            gains: GainConfig::default(),
            simulate: SimulateConfig::default(),
            identify: IdentifyConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

fn vector(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(invalid(format!("{what} needs {n} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} must be finite")));
    }
    Ok(DVector::from_row_slice(v))
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Checks every field the selected kind reads.
    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        match self.kind {
            ExperimentKind::MeshInfo => {
                if self.mesh.level > crate::mesh::DEFAULT_MAX_LEVEL {
                    return Err(invalid(format!("mesh.level {} exceeds the level cap", self.mesh.level)));
                }
            }
            ExperimentKind::ApproxError => {
                let a = &self.approx;
                if a.fine_level > crate::mesh::DEFAULT_MAX_LEVEL {
                    return Err(invalid("approx.fine_level exceeds the level cap"));
                }
                if a.levels.len() < 2 || a.levels.iter().any(|&j| j >= a.fine_level) {
                    return Err(invalid("approx.levels needs at least two levels, all below fine_level"));
                }
                if a.segments == 0 || a.samples_per_segment == 0 {
                    return Err(invalid("approx.segments and samples_per_segment must be positive"));
                }
            }
            ExperimentKind::IntegrateBenchmark => {
                let b = &self.benchmark;
                if b.step_sizes.len() < 3 {
                    return Err(invalid("benchmark.step_sizes needs at least three entries"));
                }
                if b.orders.len() != b.slope_tolerance.len() {
                    return Err(invalid("benchmark.slope_tolerance needs one entry per order"));
                }
                for &p in &b.orders {
                    PcScheme::new(p)?;
                }
                positive(b.horizon, "benchmark.horizon")?;
                for &h in &b.step_sizes {
                    crate::integrator::step_count(h, b.horizon)?;
                }
            }
            ExperimentKind::SimulatePlant => {
                self.integrator.scheme()?;
                self.wing_model()?;
                self.gain_matrices()?;
                vector(&self.simulate.x0, 4, "simulate.x0")?;
                crate::integrator::step_count(self.simulate.step, self.simulate.horizon)?;
            }
            ExperimentKind::Identify => {
                self.integrator.scheme()?;
                self.wing_model()?;
                self.lyapunov_pair()?;
                let c = &self.identify;
                vector(&c.x0, 4, "identify.x0")?;
                vector(&c.xhat0, 4, "identify.xhat0")?;
                positive(c.gain, "identify.gain")?;
                crate::integrator::step_count(c.step, c.horizon)?;
                let max = c
                    .sweep_levels
                    .iter()
                    .chain([&c.plant_level, &c.estimator_level, &c.reference_level])
                    .max()
                    .copied()
                    .unwrap_or(0);
                if max > crate::mesh::DEFAULT_MAX_LEVEL {
                    return Err(invalid("identify levels exceed the level cap"));
                }
            }
            ExperimentKind::ControlWing => {
                self.integrator.scheme()?;
                self.wing_model()?;
                self.lyapunov_pair()?;
                let c = &self.control;
                SlidingConfig::new(c.k, c.epsilon)?;
                positive(c.gain, "control.gain")?;
                vector(&c.x0, 4, "control.x0")?;
                vector(&c.reference_amplitude, 2, "control.reference_amplitude")?;
                vector(&c.reference_omega, 2, "control.reference_omega")?;
                crate::integrator::step_count(c.step, c.horizon)?;
                if c.plant_level.max(c.ctrl_level) > crate::mesh::DEFAULT_MAX_LEVEL {
                    return Err(invalid("control levels exceed the level cap"));
                }
                if !(0.0..1.0).contains(&c.checks.tail_fraction) || c.checks.tail_fraction == 0.0 {
                    return Err(invalid("control.checks.tail_fraction must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<TriDomain> {
        TriDomain::new(self.domain.s_lo, self.domain.s_hi).map_err(|e| invalid(e.to_string()))
    }

    pub fn wing_model(&self) -> Result<Arc<WingModel>> {
        Ok(Arc::new(WingModel::new(self.wing.clone(), self.wing_mode)?))
    }

    pub fn gain_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g0 = vector(&self.gains.g0, 2, "gains.g0")?;
        let g1 = vector(&self.gains.g1, 2, "gains.g1")?;
        Ok((DMatrix::from_diagonal(&g0), DMatrix::from_diagonal(&g1)))
    }

    pub fn regulator(&self) -> Result<FeedbackTransform> {
        let (g0, g1) = self.gain_matrices()?;
        let model: Arc<dyn RoboticModel> = self.wing_model()?;
        regulator_transform(model, g0, g1)
    }

    pub fn tracking(&self) -> Result<FeedbackTransform> {
        let (g0, g1) = self.gain_matrices()?;
        let model: Arc<dyn RoboticModel> = self.wing_model()?;
        let c = &self.control;
        let reference = Reference::sinusoid(c.reference_amplitude.clone(), c.reference_omega.clone());
        tracking_transform(model, reference, g0, g1)
    }

    pub fn lyapunov_pair(&self) -> Result<LyapunovPair> {
        let q = vector(&self.gains.q, 4, "gains.q")?;
        let core = self.regulator()?.core().clone();
        lyapunov_solve(core.a(), &DMatrix::from_diagonal(&q))
    }

    /// `Π_level μ` of the configured analytic parameter.
    pub fn mu_at(&self, level: usize) -> Result<DistributedParameter> {
        let oversample = (level + 2).max(6).min(crate::mesh::DEFAULT_MAX_LEVEL.max(level));
        let mu = self.mu.clone();
        project_analytic(self.domain()?, &move |s| mu.eval(s), level, oversample)
    }

    /// Lift bank on the wing: input `θ`, mixer `M⁻¹D`, one channel.
    pub fn wing_bank(
        &self,
        transform: &FeedbackTransform,
        level: usize,
        x_phys0: DVector<f64>,
    ) -> Result<OperatorBank> {
        OperatorBank::new(
            self.domain()?,
            &[ChannelSpec {
                ridge: self.ridge.clone(),
                level,
            }],
            ScalarizerA::Coordinate(1),
            transform.mixer(1),
            0.0,
            x_phys0,
            self.kappa_seed,
        )
    }

    fn excitation(&self, e: &ExcitationConfig) -> crate::plant::SignalFn {
        multisine(2, e.tones, e.amplitude, e.w_lo, e.w_hi, self.seed)
    }

    pub fn simulate_excitation(&self) -> crate::plant::SignalFn {
        self.excitation(&self.simulate.excitation)
    }

    /// Estimator levels in run order and the index of each role.
    pub fn identify_levels(&self) -> (Vec<usize>, usize, usize) {
        let c = &self.identify;
        let mut levels = c.sweep_levels.clone();
        for l in [c.estimator_level, c.reference_level] {
            if !levels.contains(&l) {
                levels.push(l);
            }
        }
        let main = levels.iter().position(|&l| l == c.estimator_level).expect("inserted");
        let reference = levels.iter().position(|&l| l == c.reference_level).expect("inserted");
        (levels, main, reference)
    }

    /// Plant plus estimators and the stacked initial state.
    pub fn identification_system(&self) -> Result<(IdentificationSystem, DVector<f64>)> {
        let c = &self.identify;
        let transform = self.regulator()?;
        let core = transform.core().clone();
        let x0 = vector(&c.x0, 4, "identify.x0")?;
        let xhat0 = vector(&c.xhat0, 4, "identify.xhat0")?;
        let mu_star = self.mu_at(c.plant_level)?;
        let plant_bank = self.wing_bank(&transform, c.plant_level, x0.clone())?;
        let (levels, _, _) = self.identify_levels();
        let banks = levels
            .iter()
            .map(|&l| self.wing_bank(&transform, l, x0.clone()))
            .collect::<Result<Vec<_>>>()?;
        let weight = match c.weight {
            AdjointWeight::Identity => DMatrix::identity(4, 4),
            AdjointWeight::Lyapunov => self.lyapunov_pair()?.p,
        };
        let domain = self.domain()?;
        let system = IdentificationSystem::new(
            core,
            plant_bank,
            mu_star,
            self.excitation(&c.excitation),
            banks,
            c.gain,
            c.drive,
            weight,
        )?;
        let inits: Vec<_> = levels
            .iter()
            .map(|&l| (xhat0.clone(), DistributedParameter::zeros(domain, &[l])))
            .collect();
        let z0 = system.initial_state(&x0, &inits)?;
        Ok((system, z0))
    }

    /// Initial tracking error, perturbed by the seed.
    pub fn control_x0(&self) -> Result<DVector<f64>> {
        let c = &self.control;
        let mut x0 = vector(&c.x0, 4, "control.x0")?;
        if c.x0_perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for v in x0.iter_mut() {
                *v += rng.random_range(-c.x0_perturbation..=c.x0_perturbation);
            }
        }
        Ok(x0)
    }

    /// Closed-loop system with `μ̂(0) = 0` and its initial state.
    pub fn closed_loop_system(&self) -> Result<(ClosedLoopSystem, DVector<f64>)> {
        let c = &self.control;
        let transform = self.tracking()?;
        let core = transform.core().clone();
        let x0 = self.control_x0()?;
        let phys0 = transform.physical_state(0.0, &x0);
        let plant_bank = self.wing_bank(&transform, c.plant_level, phys0.clone())?;
        let ctrl_bank = self.wing_bank(&transform, c.ctrl_level, phys0)?;
        let mu_star = self.mu_at(c.plant_level)?;
        let system = ClosedLoopSystem::new(
            core,
            plant_bank,
            mu_star,
            ctrl_bank,
            self.lyapunov_pair()?,
            SlidingConfig::new(c.k, c.epsilon)?,
            c.gain,
            transform.reference().cloned(),
        )?;
        let z0 = system.initial_state(&x0, &DistributedParameter::zeros(self.domain()?, &[c.ctrl_level]))?;
        Ok((system, z0))
    }

    /// Reads a config from JSON text, applying `key.path=value` overrides first.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| invalid(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| invalid(e.to_string()))
    }
}

/// Sets `a.b.c=value` in a JSON tree; `value` is parsed as JSON when possible, else taken as a string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(invalid(format!("override path `{path}` has an empty segment")));
        }
        let obj = match node {
            serde_json::Value::Object(map) => map,
            other => {
                *other = serde_json::Value::Object(Default::default());
                other.as_object_mut().expect("just set")
            }
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_json_with_overrides(
            r#"{"kind": "mesh-info"}"#,
            &[
                "mesh.level=5".into(),
                "kind=control-wing".into(),
                "control.epsilon=0.1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.mesh.level, 5);
        assert_eq!(cfg.kind, ExperimentKind::ControlWing);
        assert_eq!(cfg.control.epsilon, 0.1);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json_with_overrides(r#"{"mesh": {"lvl": 2}}"#, &[]).is_err());
        assert!(ExperimentConfig::from_json_with_overrides("{", &[]).is_err());
        assert!(ExperimentConfig::from_json_with_overrides("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn kinds_parse() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.name()), Some(k));
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig {
            kind: ExperimentKind::ControlWing,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.control.epsilon = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn designed_boundary_layer_block() {
        let pair = ExperimentConfig::default().lyapunov_pair().unwrap();
        // P22 = (qa/g0 + qb)/(2 g1) for each decoupled pitch/plunge block.
        let p22 = pair.p.view((2, 2), (2, 2)).into_owned();
        assert!((p22 - DMatrix::<f64>::identity(2, 2) * 0.9).amax() < 1e-12);
    }
}
