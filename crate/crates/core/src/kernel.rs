//! Elementary generalized-play kernels.
//!
//! A kernel is indexed by a threshold pair `s = (s1, s2)` with `s1 <= s2`.
//! Along a monotone piece of the input its output is pushed up by the right
//! envelope `γ(f - s2)` while the input rises and down by the left envelope
//! `γ(f - s1)` while it falls. The update never reads time values, so the
//! output is rate independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form of a [`RidgeFunction`].
///
/// `params` depends on the family:
/// * `saturation`: `[level, slope]`, both optional (default `[1, 1]`), giving
///   `γ(x) = clamp(slope * x, -level, level)`.
/// * `table`: flattened breakpoints `[x0, y0, x1, y1, ...]` with strictly
///   increasing `x`; linear in between and constant beyond the ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec {
    pub family: RidgeFamily,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub bound: Option<f64>,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeFamily {
    Saturation,
    Table,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Saturation { level: f64, slope: f64 },
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

/// Monotone, bounded shape function whose shifts form the kernel envelopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RidgeSpec", into = "RidgeSpec")]
pub struct RidgeFunction {
    shape: Shape,
    alpha: f64,
    bound: f64,
}

impl RidgeFunction {
    /// `γ(x) = max(-1, min(1, x))`.
    pub fn saturation() -> Self {
        Self::scaled_saturation(1.0, 1.0).expect("unit saturation is valid")
    }

    /// `γ(x) = clamp(slope * x, -level, level)`.
    pub fn scaled_saturation(level: f64, slope: f64) -> Result<Self> {
        Self::try_from(RidgeSpec {
            family: RidgeFamily::Saturation,
            params: vec![level, slope],
            alpha: 1.0,
            bound: None,
        })
    }

    /// Piecewise-linear table through `(xs[i], ys[i])`.
    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidRidge(format!(
                "table has {} abscissae but {} ordinates",
                xs.len(),
                ys.len()
            )));
        }
        let params = xs.iter().zip(&ys).flat_map(|(x, y)| [*x, *y]).collect();
        Self::try_from(RidgeSpec {
            family: RidgeFamily::Table,
            params,
            alpha: 1.0,
            bound: None,
        })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Saturation { level, slope } => (slope * x).clamp(-level, *level),
            Shape::Table { xs, ys } => {
                let n = xs.len();
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= xs[n - 1] {
                    return ys[n - 1];
                }
                let i = xs.partition_point(|&b| b <= x) - 1;
                let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
                // Clamped so rounding cannot break monotonicity between breakpoints.
                let lo = ys[i].min(ys[i + 1]);
                let hi = ys[i].max(ys[i + 1]);
                (ys[i] + w * (ys[i + 1] - ys[i])).clamp(lo, hi)
            }
        }
    }

    /// Hölder exponent stated for this ridge.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Sup-norm bound.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Global Lipschitz constant of the piecewise-linear shape.
    pub fn lipschitz(&self) -> f64 {
        match &self.shape {
            Shape::Saturation { slope, .. } => *slope,
            Shape::Table { xs, ys } => xs
                .windows(2)
                .zip(ys.windows(2))
                .map(|(x, y)| (y[1] - y[0]).abs() / (x[1] - x[0]))
                .fold(0.0, f64::max),
        }
    }

    pub fn family(&self) -> RidgeFamily {
        match self.shape {
            Shape::Saturation { .. } => RidgeFamily::Saturation,
            Shape::Table { .. } => RidgeFamily::Table,
        }
    }
}

impl Default for RidgeFunction {
    fn default() -> Self {
        Self::saturation()
    }
}

impl TryFrom<RidgeSpec> for RidgeFunction {
    type Error = Error;

    fn try_from(spec: RidgeSpec) -> Result<Self> {
        if !(spec.alpha > 0.0 && spec.alpha <= 1.0) {
            return Err(Error::InvalidRidge(format!(
                "Hölder exponent must lie in (0, 1], got {}",
                spec.alpha
            )));
        }
        let (shape, sup) = match spec.family {
            RidgeFamily::Saturation => {
                let level = spec.params.first().copied().unwrap_or(1.0);
                let slope = spec.params.get(1).copied().unwrap_or(1.0);
                if spec.params.len() > 2 {
                    return Err(Error::InvalidRidge("saturation takes at most [level, slope]".into()));
                }
                if !(level.is_finite() && level > 0.0) {
                    return Err(Error::InvalidRidge(format!(
                        "saturation level {level} must be positive"
                    )));
                }
                if !(slope.is_finite() && slope > 0.0) {
                    return Err(Error::InvalidRidge(format!(
                        "saturation slope {slope} must be positive"
                    )));
                }
                (Shape::Saturation { level, slope }, level)
            }
            RidgeFamily::Table => {
                if spec.params.len() < 4 || !spec.params.len().is_multiple_of(2) {
                    return Err(Error::InvalidRidge(
                        "table needs at least two (x, y) breakpoints".into(),
                    ));
                }
                let xs: Vec<f64> = spec.params.iter().step_by(2).copied().collect();
                let ys: Vec<f64> = spec.params.iter().skip(1).step_by(2).copied().collect();
                if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidRidge("table entries must be finite".into()));
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidRidge(
                        "table abscissae must be strictly increasing".into(),
                    ));
                }
                if ys.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidRidge("ridge must be nondecreasing".into()));
                }
                let sup = ys.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
                (Shape::Table { xs, ys }, sup)
            }
        };
        let bound = match spec.bound {
            Some(b) if b + 1e-12 < sup => {
                return Err(Error::InvalidRidge(format!(
                    "stated bound {b} is below the actual sup-norm {sup}"
                )))
            }
            Some(b) => b,
            None => sup,
        };
        Ok(Self {
            shape,
            alpha: spec.alpha,
            bound,
        })
    }
}

impl From<RidgeFunction> for RidgeSpec {
    fn from(r: RidgeFunction) -> Self {
        let (family, params) = match r.shape {
            Shape::Saturation { level, slope } => (RidgeFamily::Saturation, vec![level, slope]),
            Shape::Table { xs, ys } => (
                RidgeFamily::Table,
                xs.iter().zip(&ys).flat_map(|(x, y)| [*x, *y]).collect(),
            ),
        };
        RidgeSpec {
            family,
            params,
            alpha: r.alpha,
            bound: Some(r.bound),
        }
    }
}

/// A point `(s1, s2)` of the threshold triangle, `s1 <= s2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub s1: f64,
    pub s2: f64,
}

impl ThresholdPair {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1.is_finite() && s2.is_finite()) || s1 > s2 {
            return Err(Error::InvalidThreshold {
                s1,
                s2,
                reason: "need finite s1 <= s2".into(),
            });
        }
        Ok(Self { s1, s2 })
    }

    /// Envelope `[γ(f - s2), γ(f - s1)]` at input value `f`.
    #[inline]
    pub fn envelope(&self, gamma: &RidgeFunction, f: f64) -> (f64, f64) {
        (gamma.eval(f - self.s2), gamma.eval(f - self.s1))
    }
}

/// Memory of one kernel: its current output and the last input it saw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlayKernelState {
    pub kappa: f64,
    pub last_input: f64,
}

impl PlayKernelState {
    /// Seeds the memory, clamped into the envelope at `f0`.
    pub fn init(gamma: &RidgeFunction, s: ThresholdPair, f0: f64, kappa_seed: f64) -> Self {
        let (lo, hi) = s.envelope(gamma, f0);
        Self {
            kappa: kappa_seed.clamp(lo, hi),
            last_input: f0,
        }
    }

    /// Processes one monotone input piece ending at `f_new`.
    #[inline]
    pub fn step(&mut self, gamma: &RidgeFunction, s: ThresholdPair, f_new: f64) {
        self.kappa = step_kappa(gamma, s, self.kappa, self.last_input, f_new);
        self.last_input = f_new;
    }
}

/// One kernel update on the monotone piece `f_old -> f_new`.
#[inline]
pub(crate) fn step_kappa(gamma: &RidgeFunction, s: ThresholdPair, kappa: f64, f_old: f64, f_new: f64) -> f64 {
    if f_new == f_old {
        return kappa;
    }
    let (lo, hi) = s.envelope(gamma, f_new);
    let k = if f_new > f_old { kappa.max(lo) } else { kappa.min(hi) };
    // No-op for monotone γ; kept so confinement holds for any table.
    k.clamp(lo, hi)
}

/// Interpolates inside `[a, b]` without leaving the segment's value range.
#[inline]
pub(crate) fn lerp_within(a: f64, b: f64, w: f64) -> f64 {
    (a + w * (b - a)).clamp(a.min(b), a.max(b))
}

/// Piecewise-linear input `f` given by its breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearInput {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearInput {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidInput("need at least one breakpoint".into()));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("breakpoints must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.start() || t > self.end() || t.is_nan() {
            return Err(Error::TimeOutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        Ok(())
    }

    /// Value of `f(t)`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let i = self.times.partition_point(|&b| b <= t);
        if i == self.times.len() {
            return Ok(self.values[i - 1]);
        }
        if i == 0 {
            return Ok(self.values[0]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        Ok(lerp_within(self.values[i - 1], self.values[i], (t - t0) / (t1 - t0)))
    }

    /// Truncation of the history at time `t` (adds `f(t)` as the last breakpoint).
    pub fn truncate(&self, t: f64) -> Result<Self> {
        self.check_time(t)?;
        let i = self.times.partition_point(|&b| b <= t);
        let mut times = self.times[..i].to_vec();
        let mut values = self.values[..i].to_vec();
        if times.last() != Some(&t) {
            let v = self.value_at(t)?;
            times.push(t);
            values.push(v);
        }
        Self::new(times, values)
    }
}

/// Kernel output `κ(s, t, f)` obtained by walking the history up to `t`.
pub fn kernel_eval(
    gamma: &RidgeFunction,
    s: ThresholdPair,
    f: &PiecewiseLinearInput,
    t: f64,
    kappa_seed: f64,
) -> Result<f64> {
    f.check_time(t)?;
    let mut state = PlayKernelState::init(gamma, s, f.values[0], kappa_seed);
    for (&tb, &v) in f.times.iter().zip(&f.values).skip(1) {
        if tb > t {
            break;
        }
        state.step(gamma, s, v);
    }
    let last_full = f.times.partition_point(|&b| b <= t);
    if last_full < f.times.len() && f.times[last_full - 1] < t {
        state.step(gamma, s, f.value_at(t)?);
    }
    Ok(state.kappa)
}
