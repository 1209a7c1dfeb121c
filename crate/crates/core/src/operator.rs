//! Quadrature approximations of the hysteresis integral operator.
//!
//! An [`OperatorBank`] holds one kernel per mesh cell and per channel, all
//! driven by the same scalar input `a(X)`. Channel `i` at level `j` realises
//!
//! ```text
//! (h_{i,j} a(X))(t) ∘ μ_i = Σ_k κ(ξ_{j,k}, t, a(X)) v_{i,k} m(Δ_{j,k})
//! ```
//!
//! and the mixer `b(X)` combines the channels into the plant input.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{lerp_within, step_kappa, PiecewiseLinearInput, PlayKernelState, RidgeFunction, ThresholdPair};
use crate::mesh::{project_analytic, refine, ChannelValues, DistributedParameter, Point, TriDomain};

/// Cell count above which kernel updates fan out over threads.
const PARALLEL_CELLS: usize = 1 << 14;

pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Scalar input map `a : ℝ^m → ℝ`.
#[derive(Clone)]
pub enum ScalarizerA {
    Coordinate(usize),
    Linear(DVector<f64>),
    Map(StateFn),
}

impl ScalarizerA {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Coordinate(i) => x[*i],
            Self::Linear(w) => w.dot(x),
            Self::Map(f) => f(x),
        }
    }
}

impl fmt::Debug for ScalarizerA {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Coordinate(i) => write!(f, "Coordinate({i})"),
            Self::Linear(w) => write!(f, "Linear({:?})", w.as_slice()),
            Self::Map(_) => f.write_str("Map(..)"),
        }
    }
}

/// Mixing matrix `b : ℝ^m → ℝ^{q×ℓ}`.
#[derive(Clone)]
pub enum MixerB {
    Constant(DMatrix<f64>),
    Map { rows: usize, cols: usize, f: MatrixFn },
}

impl MixerB {
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Self::Constant(b) => b.clone(),
            Self::Map { f, .. } => f(x),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Constant(b) => b.shape(),
            Self::Map { rows, cols, .. } => (*rows, *cols),
        }
    }
}

impl fmt::Debug for MixerB {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(b) => write!(f, "Constant({}x{})", b.nrows(), b.ncols()),
            Self::Map { rows, cols, .. } => write!(f, "Map({rows}x{cols})"),
        }
    }
}

/// One channel of the diagonal bank `H_j`.
#[derive(Clone, Debug)]
pub struct Channel {
    ridge: RidgeFunction,
    level: usize,
    cell_area: f64,
    thresholds: Vec<ThresholdPair>,
    kappa: Vec<f64>,
}

impl Channel {
    pub fn ridge(&self) -> &RidgeFunction {
        &self.ridge
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn thresholds(&self) -> &[ThresholdPair] {
        &self.thresholds
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    fn step(&mut self, f_old: f64, f_new: f64) {
        let (g, s) = (&self.ridge, &self.thresholds);
        if self.kappa.len() >= PARALLEL_CELLS {
            self.kappa
                .par_iter_mut()
                .zip(s.par_iter())
                .for_each(|(k, &p)| *k = step_kappa(g, p, *k, f_old, f_new));
        } else {
            for (k, &p) in self.kappa.iter_mut().zip(s) {
                *k = step_kappa(g, p, *k, f_old, f_new);
            }
        }
    }
}

/// Channel configuration for [`OperatorBank::new`].
#[derive(Clone, Debug)]
pub struct ChannelSpec {
    pub ridge: RidgeFunction,
    pub level: usize,
}

/// Saved kernel memory, for provisional evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct BankSnapshot {
    kappa: Vec<Vec<f64>>,
    last_input: f64,
    last_time: f64,
    last_state: DVector<f64>,
}

/// Streaming evaluator of `𝓗_j X = b(X) H_j(a(X))`.
#[derive(Clone, Debug)]
pub struct OperatorBank {
    domain: TriDomain,
    channels: Vec<Channel>,
    a: ScalarizerA,
    b: MixerB,
    last_input: f64,
    last_time: f64,
    last_state: DVector<f64>,
}

impl OperatorBank {
    /// Builds the bank at `(t0, x0)` with every kernel seeded at `kappa_seed`
    /// (clamped into its envelope at `a(x0)`).
    pub fn new(
        domain: TriDomain,
        specs: &[ChannelSpec],
        a: ScalarizerA,
        b: MixerB,
        t0: f64,
        x0: DVector<f64>,
        kappa_seed: f64,
    ) -> Result<Self> {
        let (_, cols) = b.shape();
        if cols != specs.len() {
            return Err(Error::DimensionMismatch(format!(
                "mixer has {cols} columns for {} channels",
                specs.len()
            )));
        }
        let f0 = a.eval(&x0);
        if !f0.is_finite() {
            return Err(Error::NaNDetected { t: t0 });
        }
        let channels = specs
            .iter()
            .map(|spec| {
                let mesh = refine(domain, spec.level)?;
                let thresholds = mesh.thresholds();
                let kappa = thresholds
                    .iter()
                    .map(|&s| PlayKernelState::init(&spec.ridge, s, f0, kappa_seed).kappa)
                    .collect();
                Ok(Channel {
                    ridge: spec.ridge.clone(),
                    level: spec.level,
                    cell_area: mesh.cell_area(),
                    thresholds,
                    kappa,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain,
            channels,
            a,
            b,
            last_input: f0,
            last_time: t0,
            last_state: x0,
        })
    }

    /// Single-channel bank driven directly by a scalar input (`a = X_0`, `b = 1`).
    pub fn scalar(domain: TriDomain, ridge: RidgeFunction, level: usize, t0: f64, f0: f64) -> Result<Self> {
        Self::new(
            domain,
            &[ChannelSpec { ridge, level }],
            ScalarizerA::Coordinate(0),
            MixerB::Constant(DMatrix::from_element(1, 1, 1.0)),
            t0,
            DVector::from_element(1, f0),
            0.0,
        )
    }

    pub fn domain(&self) -> TriDomain {
        self.domain
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn levels(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.level).collect()
    }

    pub fn dof(&self) -> usize {
        self.channels.iter().map(|c| c.kappa.len()).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.b.shape().0
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    pub fn last_input(&self) -> f64 {
        self.last_input
    }

    pub fn last_state(&self) -> &DVector<f64> {
        &self.last_state
    }

    pub fn scalarizer(&self) -> &ScalarizerA {
        &self.a
    }

    pub fn mixer(&self) -> &MixerB {
        &self.b
    }

    /// Steps every kernel over the linear piece from the last sample to `a(x_new)`.
    pub fn advance(&mut self, x_new: &DVector<f64>, t_new: f64) -> Result<()> {
        let f_new = self.a.eval(x_new);
        self.advance_raw(f_new, x_new.clone(), t_new)
    }

    /// Steps the kernels with an explicit scalar input; `b` keeps using the last state.
    pub fn advance_input(&mut self, f_new: f64, t_new: f64) -> Result<()> {
        let x = self.last_state.clone();
        self.advance_raw(f_new, x, t_new)
    }

    fn advance_raw(&mut self, f_new: f64, x_new: DVector<f64>, t_new: f64) -> Result<()> {
        if t_new < self.last_time || t_new.is_nan() {
            return Err(Error::NonMonotoneTime {
                t_last: self.last_time,
                t_new,
            });
        }
        if !f_new.is_finite() {
            return Err(Error::NaNDetected { t: t_new });
        }
        let f_old = self.last_input;
        for c in &mut self.channels {
            c.step(f_old, f_new);
        }
        self.last_input = f_new;
        self.last_time = t_new;
        self.last_state = x_new;
        Ok(())
    }

    pub fn snapshot(&self) -> BankSnapshot {
        BankSnapshot {
            kappa: self.channels.iter().map(|c| c.kappa.clone()).collect(),
            last_input: self.last_input,
            last_time: self.last_time,
            last_state: self.last_state.clone(),
        }
    }

    pub fn restore(&mut self, snap: &BankSnapshot) {
        for (c, k) in self.channels.iter_mut().zip(&snap.kappa) {
            c.kappa.copy_from_slice(k);
        }
        self.last_input = snap.last_input;
        self.last_time = snap.last_time;
        self.last_state.clone_from(&snap.last_state);
    }

    fn check_levels(&self, mu: &DistributedParameter) -> Result<()> {
        if mu.levels() != self.levels() {
            return Err(Error::LevelMismatch(format!(
                "parameter levels {:?} vs bank levels {:?}",
                mu.levels(),
                self.levels()
            )));
        }
        Ok(())
    }

    /// Channel outputs `(h_{i,j} a(X))(t) ∘ μ_i`.
    pub fn apply_hj(&self, mu: &DistributedParameter) -> Result<DVector<f64>> {
        self.check_levels(mu)?;
        Ok(DVector::from_iterator(
            self.channels.len(),
            self.channels
                .iter()
                .zip(mu.channels())
                .map(|(c, m)| c.cell_area * c.kappa.iter().zip(&m.values).map(|(k, v)| k * v).sum::<f64>()),
        ))
    }

    /// `y(t) = b(X(t)) · H_j(a(X))(t) ∘ μ`.
    pub fn apply_h(&self, mu: &DistributedParameter) -> Result<DVector<f64>> {
        let hj = self.apply_hj(mu)?;
        Ok(self.b.eval(&self.last_state) * hj)
    }

    /// Explicit matrix `W(t)` acting on the concatenated cell values.
    pub fn operator_matrix(&self) -> OperatorMatrix {
        let b = self.b.eval(&self.last_state);
        let dof = self.dof();
        let mut w = DMatrix::zeros(b.nrows(), dof);
        let mut offset = 0;
        for (i, c) in self.channels.iter().enumerate() {
            for (k, kap) in c.kappa.iter().enumerate() {
                let s = kap * c.cell_area;
                for r in 0..b.nrows() {
                    w[(r, offset + k)] = b[(r, i)] * s;
                }
            }
            offset += c.kappa.len();
        }
        OperatorMatrix {
            domain: self.domain,
            levels: self.levels(),
            w,
        }
    }

    /// Riesz representative of `δμ ↦ zᵀ W δμ` without forming `W`.
    pub fn adjoint(&self, z: &DVector<f64>) -> Result<DistributedParameter> {
        let b = self.b.eval(&self.last_state);
        if z.len() != b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "adjoint needs a vector of length {}, got {}",
                b.nrows(),
                z.len()
            )));
        }
        let btz = b.transpose() * z;
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| ChannelValues {
                level: c.level,
                values: c.kappa.iter().map(|k| k * btz[i]).collect(),
            })
            .collect();
        DistributedParameter::new(self.domain, channels)
    }
}

/// The linear map `values(μ) ↦ 𝓗_j X(t) ∘ μ` at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    domain: TriDomain,
    levels: Vec<usize>,
    w: DMatrix<f64>,
}

impl OperatorMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn apply(&self, mu: &DistributedParameter) -> Result<DVector<f64>> {
        if mu.levels() != self.levels {
            return Err(Error::LevelMismatch(format!(
                "parameter levels {:?} vs operator levels {:?}",
                mu.levels(),
                self.levels
            )));
        }
        Ok(&self.w * DVector::from_vec(mu.flat_values()))
    }

    /// Cell values `(Wᵀz)_{i,k} / m(Δ_{j,k})`.
    pub fn adjoint_apply(&self, z: &DVector<f64>) -> Result<DistributedParameter> {
        if z.len() != self.w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "adjoint needs a vector of length {}, got {}",
                self.w.nrows(),
                z.len()
            )));
        }
        let wtz = self.w.transpose() * z;
        let mut flat = wtz.as_slice().to_vec();
        let mut offset = 0;
        for &l in &self.levels {
            let n = 1usize << (2 * l);
            let m = self.domain.cell_area(l);
            for v in &mut flat[offset..offset + n] {
                *v /= m;
            }
            offset += n;
        }
        DistributedParameter::from_flat(self.domain, &self.levels, &flat)
    }
}

/// One row of a rate table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub level: usize,
    pub error: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub fine_level: usize,
    pub alpha: f64,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log2 e_j` against `j`.
    pub slope: f64,
}

impl RateReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    /// `max C_j / min C_j`.
    pub fn constant_spread(&self) -> f64 {
        let (lo, hi) = self.rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
            (lo.min(r.constant), hi.max(r.constant))
        });
        hi / lo
    }

    /// CSV `j,e_j,C_j` followed by a `slope` row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "e_j", "C_j"])?;
        for r in &self.rows {
            out.write_record(&[
                r.level.to_string(),
                format!("{:e}", r.error),
                format!("{:e}", r.constant),
            ])?;
        }
        out.write_record(&["slope".to_string(), format!("{:e}", self.slope), String::new()])?;
        out.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Measures `e_j = max_t |(h_J f)(t)∘μ_J − (h_j f)(t)∘μ_j|` with `μ_J` the
/// centroid samples of `mu_fn` at level `J` and `μ_j` its restriction.
///
/// Each input segment is traversed in `samples_per_segment` equal substeps;
/// kernels are exact along them, so the substeps only refine the time grid
/// on which the maximum is taken.
pub fn rate_experiment(
    domain: TriDomain,
    gamma: &RidgeFunction,
    f: &PiecewiseLinearInput,
    mu_fn: &(dyn Fn(Point) -> f64 + Sync),
    fine_level: usize,
    levels: &[usize],
    samples_per_segment: usize,
) -> Result<RateReport> {
    if let Some(&bad) = levels.iter().find(|&&j| j >= fine_level) {
        return Err(Error::LevelMismatch(format!(
            "coarse level {bad} is not below the fine level {fine_level}"
        )));
    }
    let n_sub = samples_per_segment.max(1);
    let mu_fine = project_analytic(domain, mu_fn, fine_level, fine_level)?;
    let coarse: Vec<DistributedParameter> = levels.iter().map(|&j| mu_fine.restrict(j)).collect::<Result<_>>()?;

    let (t0, f0) = (f.start(), f.values()[0]);
    let mut fine_bank = OperatorBank::scalar(domain, gamma.clone(), fine_level, t0, f0)?;
    let mut banks = levels
        .iter()
        .map(|&j| OperatorBank::scalar(domain, gamma.clone(), j, t0, f0))
        .collect::<Result<Vec<_>>>()?;

    let mut errors = vec![0.0f64; levels.len()];
    let mut record = |fine: &OperatorBank, banks: &[OperatorBank]| -> Result<()> {
        let y = fine.apply_hj(&mu_fine)?[0];
        for ((e, b), mu) in errors.iter_mut().zip(banks).zip(&coarse) {
            *e = e.max((y - b.apply_hj(mu)?[0]).abs());
        }
        Ok(())
    };
    record(&fine_bank, &banks)?;
    for seg in 1..f.len() {
        let (ta, tb) = (f.times()[seg - 1], f.times()[seg]);
        let (fa, fb) = (f.values()[seg - 1], f.values()[seg]);
        for i in 1..=n_sub {
            let w = i as f64 / n_sub as f64;
            let t = ta + w * (tb - ta);
            let v = lerp_within(fa, fb, w);
            fine_bank.advance_input(v, t)?;
            for b in &mut banks {
                b.advance_input(v, t)?;
            }
            record(&fine_bank, &banks)?;
        }
    }

    let alpha = gamma.alpha();
    let rows: Vec<RateRow> = levels
        .iter()
        .zip(&errors)
        .map(|(&j, &e)| RateRow {
            level: j,
            error: e,
            constant: e * 2f64.powf((alpha + 1.0) * j as f64),
        })
        .collect();
    let xs: Vec<f64> = levels.iter().map(|&j| j as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    Ok(RateReport {
        fine_level,
        alpha,
        rows,
        slope: fit_slope(&xs, &ys),
    })
}

/// Oscillating input with `segments` monotone pieces of randomly varied
/// amplitude inside `[-amplitude, amplitude]`, on a unit time step.
///
/// Successive extrema alternate in sign and shrink on average, so the
/// history leaves nested minor loops across the whole threshold triangle.
pub fn oscillatory_input(segments: usize, amplitude: f64, seed: u64) -> Result<PiecewiseLinearInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(segments + 1);
    values.push(0.0);
    for k in 0..segments {
        let envelope = 1.0 - 0.7 * (k as f64 / segments.max(1) as f64);
        let mag = amplitude * envelope * rng.random_range(0.35..1.0);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        values.push(sign * mag);
    }
    let times = (0..=segments).map(|k| k as f64).collect();
    PiecewiseLinearInput::new(times, values)
}
