//! Lyapunov gain synthesis, online identification of the distributed
//! parameter, and the sliding-mode adaptive controller.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{HistoryRhs, PcScheme, Stepper, Trajectory};
use crate::mesh::DistributedParameter;
use crate::operator::OperatorBank;
use crate::plant::{spectral_abscissa, with_provisional, LinearCore, Reference, SignalFn};

/// Solution of `AᵀP + PA = −Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovPair {
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// `‖AᵀP + PA + Q‖_max`.
    pub residual: f64,
}

fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a + q
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && m.clone().cholesky().is_some()
}

/// Dense solve over the `n(n+1)/2` entries of the symmetric unknown.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LyapunovPair> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch("A and Q must be square of equal size".into()));
    }
    let abscissa = spectral_abscissa(a);
    if abscissa.is_nan() || abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    if !is_spd(q) {
        return Err(Error::InvalidInput("Q must be symmetric positive definite".into()));
    }
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let size = n * (n + 1) / 2;
    let mut op = DMatrix::zeros(size, size);
    for k in 0..n {
        for l in k..n {
            let row = idx(k, l);
            for m in 0..n {
                op[(row, idx(m, l))] += a[(m, k)];
                op[(row, idx(k, m))] += a[(m, l)];
            }
        }
    }
    let lu = op.lu();
    let unpack = |v: &DVector<f64>| DMatrix::from_fn(n, n, |i, j| v[idx(i, j)]);
    let pack = |m: &DMatrix<f64>| {
        let mut v = DVector::zeros(size);
        for i in 0..n {
            for j in i..n {
                v[idx(i, j)] = m[(i, j)];
            }
        }
        v
    };
    let singular = || Error::SingularSystem("Lyapunov operator is singular".into());
    let mut p = unpack(&lu.solve(&(-pack(q))).ok_or_else(singular)?);
    // One refinement pass brings the residual down to rounding level.
    let r = lyapunov_residual(a, &p, q);
    p -= unpack(&lu.solve(&pack(&r)).ok_or_else(singular)?);
    p = (&p + p.transpose()) * 0.5;
    if p.clone().cholesky().is_none() {
        return Err(Error::SingularSystem(
            "Lyapunov solution is not positive definite".into(),
        ));
    }
    let residual = lyapunov_residual(a, &p, q).amax();
    Ok(LyapunovPair {
        q: q.clone(),
        p,
        residual,
    })
}

/// Gain and boundary layer of the sliding law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingConfig {
    pub k: f64,
    pub epsilon: f64,
}

impl SlidingConfig {
    pub fn new(k: f64, epsilon: f64) -> Result<Self> {
        if !(k > 0.0 && epsilon > 0.0 && k.is_finite() && epsilon.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "need k > 0 and epsilon > 0, got {k}, {epsilon}"
            )));
        }
        Ok(Self { k, epsilon })
    }
}

/// `v = −k s/‖s‖` outside the boundary layer `‖s‖ < ε`, `v = −(k/ε) s` inside.
pub fn sliding_law(s: &DVector<f64>, cfg: SlidingConfig) -> DVector<f64> {
    let n = s.norm();
    if n >= cfg.epsilon {
        s * (-cfg.k / n)
    } else {
        s * (-cfg.k / cfg.epsilon)
    }
}

/// `v` for the state `X`, with `s = BᵀPX`.
pub fn sliding_control(x: &DVector<f64>, pair: &LyapunovPair, b: &DMatrix<f64>, cfg: SlidingConfig) -> DVector<f64> {
    sliding_law(&(b.transpose() * &pair.p * x), cfg)
}

/// Vector fed to the adjoint in the estimator update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointDrive {
    /// `μ̂̇ = Γ (B𝓗X)* W (X − X̂)`; cancels the cross term of the error system.
    #[default]
    StateError,
    /// `μ̂̇ = −Γ (B𝓗X)* W X̂`.
    Estimate,
    /// `μ̂̇ = −Γ (B𝓗X)* W X`.
    Measured,
}

/// Weight `W` applied before the adjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointWeight {
    Identity,
    /// The Lyapunov matrix `P` of `A`.
    #[default]
    Lyapunov,
}

/// Multi-sine excitation `u_i(t) = amp Σ_k sin(ω_k t + φ_{ik}) / n_tones` with
/// frequencies spread log-uniformly over `[w_lo, w_hi]` and seeded phases.
pub fn multisine(channels: usize, tones: usize, amplitude: f64, w_lo: f64, w_hi: f64, seed: u64) -> SignalFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tones = tones.max(1);
    let omegas: Vec<f64> = (0..tones)
        .map(|k| {
            let r = if tones == 1 { 0.0 } else { k as f64 / (tones - 1) as f64 };
            w_lo * (w_hi / w_lo).powf(r)
        })
        .collect();
    let phases: Vec<Vec<f64>> = (0..channels)
        .map(|_| {
            (0..tones)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect()
        })
        .collect();
    let scale = amplitude / tones as f64;
    Arc::new(move |t| {
        DVector::from_fn(channels, |i, _| {
            scale
                * omegas
                    .iter()
                    .zip(&phases[i])
                    .map(|(w, p)| (w * t + p).sin())
                    .sum::<f64>()
        })
    })
}

/// `(X̂, μ̂)` of one estimator.
pub type EstimatorState = (DVector<f64>, DistributedParameter);

/// Plant plus any number of estimators, integrated as one system.
///
/// State layout: `[X; X̂_1; μ̂_1; X̂_2; μ̂_2; ...]` with `μ̂_e` as flat cell values.
pub struct IdentificationSystem {
    core: LinearCore,
    plant_bank: OperatorBank,
    mu_star: DistributedParameter,
    excitation: SignalFn,
    banks: Vec<OperatorBank>,
    levels: Vec<Vec<usize>>,
    gain: f64,
    drive: AdjointDrive,
    weight: DMatrix<f64>,
    last_input: Option<DVector<f64>>,
}

impl IdentificationSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        core: LinearCore,
        plant_bank: OperatorBank,
        mu_star: DistributedParameter,
        excitation: SignalFn,
        estimator_banks: Vec<OperatorBank>,
        gain: f64,
        drive: AdjointDrive,
        weight: DMatrix<f64>,
    ) -> Result<Self> {
        let m = core.state_dim();
        if weight.shape() != (m, m) {
            return Err(Error::DimensionMismatch("adjoint weight must be m×m".into()));
        }
        if plant_bank.levels() != mu_star.levels() {
            return Err(Error::LevelMismatch(
                "true parameter levels differ from plant bank".into(),
            ));
        }
        if gain.is_nan() || gain <= 0.0 {
            return Err(Error::ConfigInvalid(format!(
                "adaptation gain must be positive, got {gain}"
            )));
        }
        let levels = estimator_banks.iter().map(|b| b.levels()).collect();
        Ok(Self {
            core,
            plant_bank,
            mu_star,
            excitation,
            banks: estimator_banks,
            levels,
            gain,
            drive,
            weight,
            last_input: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.core.state_dim()
            + self
                .banks
                .iter()
                .map(|b| self.core.state_dim() + b.dof())
                .sum::<usize>()
    }

    /// Initial state from `X(0)`, `X̂(0)` and `μ̂(0)` per estimator.
    pub fn initial_state(&self, x0: &DVector<f64>, estimators: &[EstimatorState]) -> Result<DVector<f64>> {
        if estimators.len() != self.banks.len() {
            return Err(Error::DimensionMismatch("one initial condition per estimator".into()));
        }
        let mut z = x0.as_slice().to_vec();
        for ((xh, mu), lv) in estimators.iter().zip(&self.levels) {
            if &mu.levels() != lv {
                return Err(Error::LevelMismatch(
                    "initial estimate level differs from its bank".into(),
                ));
            }
            z.extend(xh.iter());
            z.extend(mu.flat_values());
        }
        Ok(DVector::from_vec(z))
    }

    fn offsets(&self, e: usize) -> (usize, usize) {
        let m = self.core.state_dim();
        let mut off = m;
        for b in &self.banks[..e] {
            off += m + b.dof();
        }
        (off, off + m)
    }

    pub fn banks(&self) -> &[OperatorBank] {
        &self.banks
    }

    pub fn plant_bank(&self) -> &OperatorBank {
        &self.plant_bank
    }

    pub fn mu_star(&self) -> &DistributedParameter {
        &self.mu_star
    }

    /// Splits a stacked state into `X` and the per-estimator `(X̂, μ̂)`.
    pub fn unpack(&self, z: &DVector<f64>) -> Result<(DVector<f64>, Vec<EstimatorState>)> {
        let m = self.core.state_dim();
        let x = z.rows(0, m).into_owned();
        let ests = (0..self.banks.len())
            .map(|e| {
                let (ox, om) = self.offsets(e);
                let dof = self.banks[e].dof();
                let mu = DistributedParameter::from_flat(
                    self.banks[e].domain(),
                    &self.levels[e],
                    &z.as_slice()[om..om + dof],
                )?;
                Ok((z.rows(ox, m).into_owned(), mu))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((x, ests))
    }

    /// `|(𝓗_j X)∘(μ* − μ̂)|` for estimator `e` on its committed bank.
    pub fn output_mismatch(&self, e: usize, mu_hat: &DistributedParameter) -> Result<f64> {
        let star = self.mu_star.to_levels(&self.levels[e])?;
        let diff = star.axpby(1.0, mu_hat, -1.0)?;
        Ok(self.banks[e].apply_h(&diff)?.norm())
    }

    /// `‖μ* − μ̂‖` at the estimator level.
    pub fn parameter_error(&self, e: usize, mu_hat: &DistributedParameter) -> Result<f64> {
        let star = self.mu_star.to_levels(&self.levels[e])?;
        Ok(star.axpby(1.0, mu_hat, -1.0)?.norm())
    }
}

impl HistoryRhs for IdentificationSystem {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&mut self, t: f64, z: &DVector<f64>, _history: &Trajectory) -> Result<DVector<f64>> {
        let m = self.core.state_dim();
        let x = z.rows(0, m).into_owned();
        let u = (self.excitation)(t);
        let y = with_provisional(&mut self.plant_bank, t, &x, |b| b.apply_h(&self.mu_star))?;
        let mut dz = DVector::zeros(z.len());
        dz.rows_mut(0, m)
            .copy_from(&(self.core.a() * &x + self.core.b() * (&y + &u)));
        let bt = self.core.b().transpose();
        for e in 0..self.banks.len() {
            let (ox, om) = self.offsets(e);
            let dof = self.banks[e].dof();
            let xh = z.rows(ox, m).into_owned();
            let mu =
                DistributedParameter::from_flat(self.banks[e].domain(), &self.levels[e], &z.as_slice()[om..om + dof])?;
            let target = match self.drive {
                AdjointDrive::StateError => &x - &xh,
                AdjointDrive::Estimate => -&xh,
                AdjointDrive::Measured => -&x,
            };
            let v = &bt * (&self.weight * target);
            let (ye, nu) = with_provisional(&mut self.banks[e], t, &x, |b| Ok((b.apply_h(&mu)?, b.adjoint(&v)?)))?;
            dz.rows_mut(ox, m)
                .copy_from(&(self.core.a() * &xh + self.core.b() * (&ye + &u)));
            for (d, n) in dz.as_mut_slice()[om..om + dof].iter_mut().zip(nu.flat_values()) {
                *d = self.gain * n;
            }
        }
        self.last_input = Some(u);
        Ok(dz)
    }

    fn commit(&mut self, t: f64, z: &DVector<f64>, _history: &Trajectory) -> Result<()> {
        let x = z.rows(0, self.core.state_dim()).into_owned();
        self.plant_bank.advance(&x, t)?;
        for b in &mut self.banks {
            b.advance(&x, t)?;
        }
        Ok(())
    }

    fn input(&self) -> Option<DVector<f64>> {
        self.last_input.clone()
    }
}

/// Sampled diagnostics of one estimator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorTrace {
    pub level: Vec<usize>,
    pub state_error: Vec<f64>,
    pub output_mismatch: Vec<f64>,
    pub parameter_error: Vec<f64>,
    /// `sup_t ‖X̂_e − X̂_ref‖` against the reference estimator, if any.
    pub sup_diff_to_reference: Option<f64>,
    pub final_estimate: Option<DistributedParameter>,
    pub final_state_error: f64,
    pub initial_state_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct IdentifyRecord {
    pub times: Vec<f64>,
    /// Measured state and excitation at the sample times.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    pub traces: Vec<EstimatorTrace>,
}

impl IdentifyRecord {
    /// Ratio of mismatch rms over the first and last tenth of the run.
    pub fn mismatch_reduction(&self, e: usize) -> f64 {
        let m = &self.traces[e].output_mismatch;
        let n = (m.len() / 10).max(1);
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        rms(&m[..n]) / rms(&m[m.len() - n..])
    }

    /// Trajectory `(t, X, X̂_e, u)` for CSV output.
    pub fn trajectory(&self, e: usize) -> Trajectory {
        let mut tr = Trajectory::new();
        for (n, t) in self.times.iter().enumerate() {
            let (x, xh) = (&self.states[n], &self.estimates[e][n]);
            let stacked = DVector::from_iterator(x.len() + xh.len(), x.iter().chain(xh.iter()).copied());
            tr.push(*t, stacked, self.inputs.get(n).cloned());
        }
        tr
    }
}

/// Co-integrates the plant with every estimator and records diagnostics.
///
/// `reference` picks the estimator against which `sup_t ‖X̂_e − X̂_ref‖`
/// is measured; `record_every` thins the sampled series (suprema use every
/// step).
pub fn identify(
    system: &mut IdentificationSystem,
    z0: DVector<f64>,
    scheme: PcScheme,
    h: f64,
    t_end: f64,
    reference: Option<usize>,
    record_every: usize,
) -> Result<IdentifyRecord> {
    let steps = crate::integrator::step_count(h, t_end)?;
    let mut stepper = Stepper::new(scheme, h, 0.0, z0, system)?.discard_history();
    let n_est = system.banks.len();
    let mut rec = IdentifyRecord {
        estimates: vec![Vec::new(); n_est],
        traces: system
            .levels
            .iter()
            .map(|l| EstimatorTrace {
                level: l.clone(),
                ..EstimatorTrace::default()
            })
            .collect(),
        ..IdentifyRecord::default()
    };
    let mut sup_diff = vec![0.0f64; n_est];
    let every = record_every.max(1);
    for n in 0..=steps {
        if n > 0 {
            stepper.step(system)?;
        }
        let z = stepper.state().clone();
        let (x, ests) = system.unpack(&z)?;
        if let Some(r) = reference {
            for e in 0..n_est {
                sup_diff[e] = sup_diff[e].max((&ests[e].0 - &ests[r].0).norm());
            }
        }
        if n % every == 0 || n == steps {
            rec.times.push(stepper.time());
            rec.states.push(x.clone());
            rec.inputs.push((system.excitation)(stepper.time()));
            for (e, (xh, mu)) in ests.iter().enumerate() {
                let err = (&x - xh).norm();
                let mismatch = system.output_mismatch(e, mu)?;
                let perr = system.parameter_error(e, mu)?;
                let tr = &mut rec.traces[e];
                if n == 0 {
                    tr.initial_state_error = err;
                }
                tr.state_error.push(err);
                tr.output_mismatch.push(mismatch);
                tr.parameter_error.push(perr);
                rec.estimates[e].push(xh.clone());
            }
        }
        if n == steps {
            for (e, (xh, mu)) in ests.into_iter().enumerate() {
                rec.traces[e].final_state_error = (&x - &xh).norm();
                rec.traces[e].final_estimate = Some(mu);
                if reference.is_some() {
                    rec.traces[e].sup_diff_to_reference = Some(sup_diff[e]);
                }
            }
        }
    }
    Ok(rec)
}

/// Closed loop `Ẋ = AX + B(𝓗X∘μ* − 𝓗_nX∘μ̂ + v)` with `μ̂̇ = Γ (B𝓗_nX)* P X`.
///
/// State layout `[X; μ̂]`. Both banks read the physical state `X + r(t)`.
pub struct ClosedLoopSystem {
    core: LinearCore,
    plant_bank: OperatorBank,
    mu_star: DistributedParameter,
    ctrl_bank: OperatorBank,
    mu_star_ctrl: DistributedParameter,
    ctrl_levels: Vec<usize>,
    pair: LyapunovPair,
    sliding: SlidingConfig,
    gain: f64,
    reference: Option<Reference>,
    last_v: Option<DVector<f64>>,
    last_d: f64,
    committed_d: f64,
}

impl ClosedLoopSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        core: LinearCore,
        plant_bank: OperatorBank,
        mu_star: DistributedParameter,
        ctrl_bank: OperatorBank,
        pair: LyapunovPair,
        sliding: SlidingConfig,
        gain: f64,
        reference: Option<Reference>,
    ) -> Result<Self> {
        if plant_bank.levels() != mu_star.levels() {
            return Err(Error::LevelMismatch(
                "true parameter levels differ from plant bank".into(),
            ));
        }
        if gain.is_nan() || gain <= 0.0 {
            return Err(Error::ConfigInvalid(format!(
                "adaptation gain must be positive, got {gain}"
            )));
        }
        let ctrl_levels = ctrl_bank.levels();
        let mu_star_ctrl = mu_star.to_levels(&ctrl_levels)?;
        Ok(Self {
            core,
            plant_bank,
            mu_star,
            ctrl_bank,
            mu_star_ctrl,
            ctrl_levels,
            pair,
            sliding,
            gain,
            reference,
            last_v: None,
            last_d: 0.0,
            committed_d: 0.0,
        })
    }

    fn physical(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.reference {
            Some(r) => x + r.state(t),
            None => x.clone(),
        }
    }

    pub fn initial_state(&self, x0: &DVector<f64>, mu_hat0: &DistributedParameter) -> Result<DVector<f64>> {
        if mu_hat0.levels() != self.ctrl_levels {
            return Err(Error::LevelMismatch(
                "initial estimate level differs from the controller bank".into(),
            ));
        }
        let mut z = x0.as_slice().to_vec();
        z.extend(mu_hat0.flat_values());
        Ok(DVector::from_vec(z))
    }

    pub fn split(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DistributedParameter)> {
        let m = self.core.state_dim();
        let mu = DistributedParameter::from_flat(self.ctrl_bank.domain(), &self.ctrl_levels, &z.as_slice()[m..])?;
        Ok((z.rows(0, m).into_owned(), mu))
    }

    /// Projection `Πⁿμ*` of the true parameter onto the controller level.
    pub fn projected_truth(&self) -> &DistributedParameter {
        &self.mu_star_ctrl
    }

    /// Residual `‖d‖ = ‖𝓗X∘μ* − 𝓗_nX∘Πⁿμ*‖` at the last committed node.
    pub fn residual_norm(&self) -> f64 {
        self.committed_d
    }

    pub fn pair(&self) -> &LyapunovPair {
        &self.pair
    }

    pub fn sliding(&self) -> SlidingConfig {
        self.sliding
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn core(&self) -> &LinearCore {
        &self.core
    }
}

impl HistoryRhs for ClosedLoopSystem {
    fn dim(&self) -> usize {
        self.core.state_dim() + self.ctrl_bank.dof()
    }

    fn eval(&mut self, t: f64, z: &DVector<f64>, _history: &Trajectory) -> Result<DVector<f64>> {
        let (x, mu_hat) = self.split(z)?;
        let y = self.physical(t, &x);
        let y_plant = with_provisional(&mut self.plant_bank, t, &y, |b| b.apply_h(&self.mu_star))?;
        let s = self.core.b().transpose() * &self.pair.p * &x;
        let v = sliding_law(&s, self.sliding);
        let (y_ctrl, y_proj, nu) = with_provisional(&mut self.ctrl_bank, t, &y, |b| {
            Ok((b.apply_h(&mu_hat)?, b.apply_h(&self.mu_star_ctrl)?, b.adjoint(&s)?))
        })?;
        let u = &v - &y_ctrl;
        let dx = self.core.a() * &x + self.core.b() * (&y_plant + u);
        let mut dz = DVector::zeros(z.len());
        let m = x.len();
        dz.rows_mut(0, m).copy_from(&dx);
        for (d, n) in dz.as_mut_slice()[m..].iter_mut().zip(nu.flat_values()) {
            *d = self.gain * n;
        }
        self.last_d = (&y_plant - &y_proj).norm();
        self.last_v = Some(v);
        Ok(dz)
    }

    fn commit(&mut self, t: f64, z: &DVector<f64>, _history: &Trajectory) -> Result<()> {
        let x = z.rows(0, self.core.state_dim()).into_owned();
        let y = self.physical(t, &x);
        self.plant_bank.advance(&y, t)?;
        self.ctrl_bank.advance(&y, t)?;
        self.committed_d = self.last_d;
        Ok(())
    }

    /// Sliding term `v` at the last committed node.
    fn input(&self) -> Option<DVector<f64>> {
        self.last_v.clone()
    }
}

/// Diagnostics of a closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub tail_sup: f64,
    pub ultimate_constant: f64,
    pub switch_rate: f64,
    pub chattering: bool,
    pub dissipation_fraction: f64,
    pub dissipation_slack: f64,
    pub sup_residual: f64,
    pub final_state_norm: f64,
    pub max_control_norm: f64,
}

/// Settings for [`closed_loop`] diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopChecks {
    /// Fraction of the run treated as the tail.
    pub tail_fraction: f64,
    /// Sign changes per second (per `v` component) above which the run chatters.
    pub chatter_threshold: f64,
    /// Constant `c` of the `c·t_h` slack in the dissipation check.
    pub dissipation_slack: f64,
}

impl Default for ClosedLoopChecks {
    fn default() -> Self {
        Self {
            tail_fraction: 0.2,
            chatter_threshold: 50.0,
            dissipation_slack: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRecord {
    /// Full stacked trajectory `[X; μ̂]` with `v` as input.
    pub trajectory: Trajectory,
    pub residuals: Vec<f64>,
    pub report: ClosedLoopReport,
    pub final_estimate: DistributedParameter,
}

impl ClosedLoopRecord {
    /// `(t, X, v)` only.
    pub fn state_trajectory(&self, m: usize) -> Trajectory {
        let mut tr = Trajectory::new();
        let inputs = self.trajectory.inputs();
        for (n, (t, z)) in self.trajectory.times().iter().zip(self.trajectory.states()).enumerate() {
            tr.push(*t, z.rows(0, m).into_owned(), inputs.get(n).cloned());
        }
        tr
    }
}

/// Integrates the closed loop and evaluates the ultimate bound, chattering
/// and dissipation diagnostics.
pub fn closed_loop(
    system: &mut ClosedLoopSystem,
    z0: DVector<f64>,
    scheme: PcScheme,
    h: f64,
    t_end: f64,
    checks: ClosedLoopChecks,
) -> Result<ClosedLoopRecord> {
    let steps = crate::integrator::step_count(h, t_end)?;
    let mut stepper = Stepper::new(scheme, h, 0.0, z0, system)?;
    let mut residuals = vec![system.residual_norm()];
    for _ in 0..steps {
        stepper.step(system)?;
        residuals.push(system.residual_norm());
    }
    let trajectory = stepper.into_trajectory();
    let m = system.core.state_dim();
    let (_, final_estimate) = system.split(trajectory.last_state().expect("nonempty"))?;

    let times = trajectory.times();
    let tail_from = t_end * (1.0 - checks.tail_fraction);
    let xs: Vec<DVector<f64>> = trajectory.states().iter().map(|z| z.rows(0, m).into_owned()).collect();
    let tail_sup = times
        .iter()
        .zip(&xs)
        .filter(|(t, _)| **t >= tail_from - 1e-12)
        .fold(0.0f64, |a, (_, x)| a.max(x.norm()));

    let vs = trajectory.inputs();
    let q = vs.first().map_or(0, |v| v.len());
    let switches = (0..q)
        .map(|i| vs.windows(2).filter(|w| w[0][i] * w[1][i] < 0.0).count())
        .max()
        .unwrap_or(0);
    let switch_rate = switches as f64 / t_end;

    let p = &system.pair.p;
    let qm = &system.pair.q;
    let lyap = |z: &DVector<f64>| -> Result<f64> {
        let (x, mu) = system.split(z)?;
        let tilde = system.mu_star_ctrl.axpby(1.0, &mu, -1.0)?;
        Ok(0.5 * x.dot(&(p * &x)) + 0.5 * tilde.norm().powi(2) / system.gain)
    };
    let bound = |x: &DVector<f64>| -0.5 * x.dot(&(qm * x)) + system.sliding.epsilon * system.sliding.k;
    let vals = trajectory.states().iter().map(lyap).collect::<Result<Vec<_>>>()?;
    let ok = (0..steps)
        .filter(|&n| {
            let fd = (vals[n + 1] - vals[n]) / h;
            let avg = 0.5 * (bound(&xs[n]) + bound(&xs[n + 1]));
            fd <= avg + checks.dissipation_slack * h
        })
        .count();

    let report = ClosedLoopReport {
        tail_sup,
        ultimate_constant: tail_sup / system.sliding.epsilon,
        switch_rate,
        chattering: switch_rate > checks.chatter_threshold,
        dissipation_fraction: ok as f64 / steps as f64,
        dissipation_slack: checks.dissipation_slack,
        sup_residual: residuals.iter().copied().fold(0.0, f64::max),
        final_state_norm: xs.last().map_or(0.0, |x| x.norm()),
        max_control_norm: vs.iter().map(|v| v.norm()).fold(0.0, f64::max),
    };
    Ok(ClosedLoopRecord {
        trajectory,
        residuals,
        report,
        final_estimate,
    })
}

/// A-priori bound `‖b‖ · bound(γ) · sqrt(area(Δ)) · ‖(I − Πⁿ)μ*‖` on the residual.
///
/// By Cauchy–Schwarz `|h∘ν| ≤ ‖κ‖_{L²} ‖ν‖ ≤ bound(γ) sqrt(area) ‖ν‖`.
pub fn residual_proxy(
    b_norm: f64,
    ridge_bound: f64,
    area: f64,
    mu_star: &DistributedParameter,
    ctrl_levels: &[usize],
) -> Result<f64> {
    let top: Vec<usize> = mu_star.levels();
    let proj = mu_star.to_levels(ctrl_levels)?.to_levels(&top)?;
    let rest = mu_star.axpby(1.0, &proj, -1.0)?;
    Ok(b_norm * ridge_bound * area.sqrt() * rest.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_identity_example() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let q = DMatrix::<f64>::identity(3, 3) * 2.0;
        let pair = lyapunov_solve(&a, &q).unwrap();
        assert!((pair.p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_companion() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let q = DMatrix::identity(2, 2);
        let pair = lyapunov_solve(&a, &q).unwrap();
        assert!(pair.residual <= 1e-12);
        assert!(pair.p.clone().cholesky().is_some());
        let scaled = lyapunov_solve(&a, &(&q * 3.0)).unwrap();
        assert!((scaled.p - pair.p * 3.0).amax() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
        assert!(matches!(
            lyapunov_solve(&a, &DMatrix::identity(2, 2)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn sliding_branches() {
        let cfg = SlidingConfig::new(20.0, 0.01).unwrap();
        assert_eq!(sliding_law(&DVector::zeros(2), cfg).norm(), 0.0);
        let v = sliding_law(&DVector::from_vec(vec![3.0, -4.0]), cfg);
        assert!((v.norm() - 20.0).abs() < 1e-12);
        let edge = DVector::from_vec(vec![0.006, 0.008]);
        let outer = &edge * (-cfg.k / edge.norm());
        let inner = &edge * (-cfg.k / cfg.epsilon);
        assert!((outer - inner).amax() < 1e-12);
        assert!(SlidingConfig::new(0.0, 1.0).is_err());
    }

    #[test]
    fn multisine_is_deterministic() {
        let a = multisine(2, 5, 1.0, 0.5, 5.0, 3);
        let b = multisine(2, 5, 1.0, 0.5, 5.0, 3);
        assert_eq!(a(1.234), b(1.234));
        assert!(a(0.7).amax() <= 1.0);
    }
}
