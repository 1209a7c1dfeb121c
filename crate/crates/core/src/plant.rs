//! Plants with hysteretic inputs: the first-order form
//! `Ẋ = A X + B((𝓗X)∘μ + u)`, robotic models `M q̈ + C q̇ + ∇V = Q_a + τ`,
//! the feedback-linearizing transforms between them, and the wing section.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{HistoryRhs, Trajectory};
use crate::mesh::DistributedParameter;
use crate::operator::{MixerB, OperatorBank};

pub type SignalFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// The pair `(A, B)` of the first-order form.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCore {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearCore {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    /// Block companion `A = [[0, I], [-G0, -G1]]`, `B = [0; I]`, checked Hurwitz.
    pub fn companion(g0: &DMatrix<f64>, g1: &DMatrix<f64>) -> Result<Self> {
        let n = g0.nrows();
        if !g0.is_square() || g1.shape() != (n, n) {
            return Err(Error::DimensionMismatch(
                "G0 and G1 must be square of equal size".into(),
            ));
        }
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        a.view_mut((n, 0), (n, n)).copy_from(&(-g0));
        a.view_mut((n, n), (n, n)).copy_from(&(-g1));
        let mut b = DMatrix::zeros(2 * n, n);
        b.view_mut((n, 0), (n, n)).fill_with_identity();
        let core = Self { a, b };
        core.require_hurwitz()?;
        Ok(core)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.a)
    }

    pub fn require_hurwitz(&self) -> Result<()> {
        let abscissa = self.spectral_abscissa();
        if abscissa < 0.0 {
            Ok(())
        } else {
            Err(Error::NotHurwitz { abscissa })
        }
    }
}

/// Runs `f` on the bank advanced provisionally to `(t, x)`, then restores it.
pub(crate) fn with_provisional<T>(
    bank: &mut OperatorBank,
    t: f64,
    x: &DVector<f64>,
    f: impl FnOnce(&OperatorBank) -> Result<T>,
) -> Result<T> {
    let snap = bank.snapshot();
    let out = bank.advance(x, t).and_then(|_| f(bank));
    bank.restore(&snap);
    out
}

/// Desired configuration `q_d(t)` with its first two derivatives.
#[derive(Clone)]
pub struct Reference {
    pub q: SignalFn,
    pub qd: SignalFn,
    pub qdd: SignalFn,
}

impl Reference {
    pub fn constant(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q: Arc::new(move |_| q.clone()),
            qd: Arc::new(move |_| DVector::zeros(n)),
            qdd: Arc::new(move |_| DVector::zeros(n)),
        }
    }

    /// `q_d,i(t) = amp_i sin(ω_i t)`.
    pub fn sinusoid(amplitudes: Vec<f64>, omegas: Vec<f64>) -> Self {
        let (a1, w1) = (amplitudes.clone(), omegas.clone());
        let (a2, w2) = (amplitudes.clone(), omegas.clone());
        let n = amplitudes.len();
        Self {
            q: Arc::new(move |t| DVector::from_fn(n, |i, _| a1[i] * (w1[i] * t).sin())),
            qd: Arc::new(move |t| DVector::from_fn(n, |i, _| a2[i] * w2[i] * (w2[i] * t).cos())),
            qdd: Arc::new(move |t| {
                DVector::from_fn(n, |i, _| -amplitudes[i] * omegas[i] * omegas[i] * (omegas[i] * t).sin())
            }),
        }
    }

    /// `[q_d(t); q̇_d(t)]`.
    pub fn state(&self, t: f64) -> DVector<f64> {
        let (q, qd) = ((self.q)(t), (self.qd)(t));
        let n = q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { q[i] } else { qd[i - n] })
    }
}

impl std::fmt::Debug for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Reference(..)")
    }
}

/// `Ẋ = A X + B(b(Y) H_j(a(Y))∘μ + u(t))`, where the bank reads the
/// physical state `Y = X + r(t)` (`r = 0` unless a reference is set).
pub struct GeneralPlant {
    core: LinearCore,
    bank: Option<(OperatorBank, DistributedParameter)>,
    input: Option<SignalFn>,
    reference: Option<Reference>,
    last_input: Option<DVector<f64>>,
}

impl GeneralPlant {
    pub fn new(
        core: LinearCore,
        bank: Option<(OperatorBank, DistributedParameter)>,
        input: Option<SignalFn>,
    ) -> Result<Self> {
        if let Some((b, mu)) = &bank {
            if b.output_dim() != core.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "bank has {} outputs, B has {} columns",
                    b.output_dim(),
                    core.input_dim()
                )));
            }
            if b.levels() != mu.levels() {
                return Err(Error::LevelMismatch("parameter levels differ from bank levels".into()));
            }
        }
        Ok(Self {
            core,
            bank,
            input,
            reference: None,
            last_input: None,
        })
    }

    /// Drives the bank by `X + [q_d; q̇_d]` (tracking-error coordinates).
    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn core(&self) -> &LinearCore {
        &self.core
    }

    pub fn bank(&self) -> Option<&OperatorBank> {
        self.bank.as_ref().map(|(b, _)| b)
    }

    fn physical(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.reference {
            Some(r) => x + r.state(t),
            None => x.clone(),
        }
    }

    fn forcing(&self, t: f64) -> DVector<f64> {
        match &self.input {
            Some(u) => u(t),
            None => DVector::zeros(self.core.input_dim()),
        }
    }
}

impl HistoryRhs for GeneralPlant {
    fn dim(&self) -> usize {
        self.core.state_dim()
    }

    fn eval(&mut self, t: f64, x: &DVector<f64>, _history: &Trajectory) -> Result<DVector<f64>> {
        let y = self.physical(t, x);
        let mut w = self.forcing(t);
        if let Some((bank, mu)) = &mut self.bank {
            w += with_provisional(bank, t, &y, |b| b.apply_h(mu))?;
        }
        self.last_input = Some(w.clone());
        Ok(&self.core.a * x + &self.core.b * w)
    }

    fn commit(&mut self, t: f64, x: &DVector<f64>, _history: &Trajectory) -> Result<()> {
        let y = self.physical(t, x);
        if let Some((bank, _)) = &mut self.bank {
            bank.advance(&y, t)?;
        }
        Ok(())
    }

    fn input(&self) -> Option<DVector<f64>> {
        self.last_input.clone()
    }
}

/// `M(q) q̈ + C(q, q̇) q̇ + ∇V(q) = D(q) L + τ`, where `L` collects the channel outputs of the aero bank.
pub trait RoboticModel: Send + Sync {
    fn dof(&self) -> usize;
    fn mass(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64>;
    fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64>;
    /// Generalized-force distribution of the hysteretic channels, `N × ℓ`.
    fn aero_distribution(&self, q: &DVector<f64>) -> DMatrix<f64>;
}

/// Splits `[q; q̇]`.
pub fn split_state(x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.len() / 2;
    (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// `M⁻¹ rhs` via Cholesky.
pub fn solve_mass(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// Mixer `b(X) = M(q)⁻¹ D(q)` on the physical state `X = [q; q̇]`.
pub fn folded_mixer(model: Arc<dyn RoboticModel>, channels: usize) -> MixerB {
    let n = model.dof();
    MixerB::Map {
        rows: n,
        cols: channels,
        f: Arc::new(move |x: &DVector<f64>| {
            let (q, _) = split_state(x);
            let d = model.aero_distribution(&q);
            solve_mass(&model.mass(&q), &d).unwrap_or_else(|_| DMatrix::from_element(d.nrows(), d.ncols(), f64::NAN))
        }),
    }
}

/// Mixer `b(X) = D(q)`, giving generalized aero forces.
pub fn force_mixer(model: Arc<dyn RoboticModel>, channels: usize) -> MixerB {
    let n = model.dof();
    MixerB::Map {
        rows: n,
        cols: channels,
        f: Arc::new(move |x: &DVector<f64>| model.aero_distribution(&split_state(x).0)),
    }
}

pub type TorqueFn = Box<dyn FnMut(f64, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send>;

/// Second-order robotic plant on the state `[q; q̇]`.
///
/// The aero bank (if any) must use [`force_mixer`] so that `apply_h`
/// returns generalized forces. `torque(t, q, q̇)` supplies `τ`.
pub struct RoboticPlant {
    model: Arc<dyn RoboticModel>,
    bank: Option<(OperatorBank, DistributedParameter)>,
    torque: Option<TorqueFn>,
    last_torque: Option<DVector<f64>>,
}

impl RoboticPlant {
    pub fn new(
        model: Arc<dyn RoboticModel>,
        bank: Option<(OperatorBank, DistributedParameter)>,
        torque: Option<TorqueFn>,
    ) -> Self {
        Self {
            model,
            bank,
            torque,
            last_torque: None,
        }
    }
}

impl HistoryRhs for RoboticPlant {
    fn dim(&self) -> usize {
        2 * self.model.dof()
    }

    fn eval(&mut self, t: f64, x: &DVector<f64>, _history: &Trajectory) -> Result<DVector<f64>> {
        let (q, qd) = split_state(x);
        let mut force = -(self.model.coriolis(&q, &qd) * &qd) - self.model.potential_gradient(&q);
        if let Some((bank, mu)) = &mut self.bank {
            force += with_provisional(bank, t, x, |b| b.apply_h(mu))?;
        }
        if let Some(tau) = &mut self.torque {
            let tq = tau(t, &q, &qd)?;
            force += &tq;
            self.last_torque = Some(tq);
        }
        let qdd = solve_mass(
            &self.model.mass(&q),
            &DMatrix::from_column_slice(force.len(), 1, force.as_slice()),
        )?;
        Ok(stack(&qd, &qdd.column(0).into_owned()))
    }

    fn commit(&mut self, t: f64, x: &DVector<f64>, _history: &Trajectory) -> Result<()> {
        if let Some((bank, _)) = &mut self.bank {
            bank.advance(x, t)?;
        }
        Ok(())
    }

    fn input(&self) -> Option<DVector<f64>> {
        self.last_torque.clone()
    }
}

/// Partial feedback linearization of a robotic model.
#[derive(Clone)]
pub struct FeedbackTransform {
    model: Arc<dyn RoboticModel>,
    g0: DMatrix<f64>,
    g1: DMatrix<f64>,
    core: LinearCore,
    reference: Option<Reference>,
}

/// Regulation: `τ = M(u − G1 q̇ − G0 q) + C q̇ + ∇V`.
pub fn regulator_transform(
    model: Arc<dyn RoboticModel>,
    g0: DMatrix<f64>,
    g1: DMatrix<f64>,
) -> Result<FeedbackTransform> {
    if g0.nrows() != model.dof() {
        return Err(Error::DimensionMismatch(
            "gain size must equal the number of coordinates".into(),
        ));
    }
    let core = LinearCore::companion(&g0, &g1)?;
    Ok(FeedbackTransform {
        model,
        g0,
        g1,
        core,
        reference: None,
    })
}

/// Tracking: `τ = M(u + q̈_d − G1 ė − G0 e) + C q̇ + ∇V` with `e = q − q_d`.
pub fn tracking_transform(
    model: Arc<dyn RoboticModel>,
    reference: Reference,
    g0: DMatrix<f64>,
    g1: DMatrix<f64>,
) -> Result<FeedbackTransform> {
    let mut t = regulator_transform(model, g0, g1)?;
    t.reference = Some(reference);
    Ok(t)
}

impl FeedbackTransform {
    pub fn core(&self) -> &LinearCore {
        &self.core
    }

    pub fn model(&self) -> &Arc<dyn RoboticModel> {
        &self.model
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    /// Physical state `[q; q̇]` from the first-order state.
    pub fn physical_state(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.reference {
            Some(r) => x + r.state(t),
            None => x.clone(),
        }
    }

    /// First-order state from `[q; q̇]`.
    pub fn error_state(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        match &self.reference {
            Some(r) => y - r.state(t),
            None => y.clone(),
        }
    }

    /// Actuation `τ(t, q, q̇, u)`.
    pub fn torque(&self, t: f64, q: &DVector<f64>, qd: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (e, ed, acc) = match &self.reference {
            Some(r) => (q - (r.q)(t), qd - (r.qd)(t), (r.qdd)(t)),
            None => (q.clone(), qd.clone(), DVector::zeros(q.len())),
        };
        let m = self.model.mass(q);
        m * (u + acc - &self.g1 * ed - &self.g0 * e)
            + self.model.coriolis(q, qd) * qd
            + self.model.potential_gradient(q)
    }

    /// Mixer `M⁻¹ D` for the first-order form.
    pub fn mixer(&self, channels: usize) -> MixerB {
        folded_mixer(self.model.clone(), channels)
    }
}

/// Which wing equations to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WingMode {
    /// Constant mass matrix, diagonal damping, lift acting on plunge only.
    #[default]
    Simplified,
    /// Full Euler–Lagrange equations with configuration-dependent inertia.
    Full,
}

/// Pitch–plunge wing section parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WingParams {
    pub mass: f64,
    pub x_theta: f64,
    pub inertia: f64,
    pub k_h: f64,
    pub k_theta: f64,
    pub c_h: f64,
    pub c_theta: f64,
    /// Aerodynamic-center arm, used in full mode only.
    pub x_a: f64,
    /// Gravitational acceleration for the full-mode potential; off when absent.
    pub gravity: Option<f64>,
    /// Flap effectiveness: `τ = E β`, row-major 2×2.
    pub flap_effectiveness: [f64; 4],
}

impl Default for WingParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            x_theta: 0.2,
            inertia: 0.1,
            k_h: 10.0,
            k_theta: 5.0,
            c_h: 0.2,
            c_theta: 0.1,
            x_a: 0.0,
            gravity: None,
            flap_effectiveness: [1.0, 0.3, -0.2, 1.0],
        }
    }
}

impl WingParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.x_theta,
            self.inertia,
            self.k_h,
            self.k_theta,
            self.c_h,
            self.c_theta,
            self.x_a,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("wing parameters must be finite".into()));
        }
        if self.mass <= 0.0 || self.inertia <= 0.0 {
            return Err(Error::ConfigInvalid("wing mass and inertia must be positive".into()));
        }
        if self.flap_matrix().determinant().abs() < 1e-12 {
            return Err(Error::ConfigInvalid("flap effectiveness matrix is singular".into()));
        }
        Ok(())
    }

    pub fn flap_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &self.flap_effectiveness)
    }
}

/// Wing section with `q = [h, θ]` and one lift channel.
#[derive(Clone, Debug)]
pub struct WingModel {
    params: WingParams,
    mode: WingMode,
}

impl WingModel {
    pub fn new(params: WingParams, mode: WingMode) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, mode })
    }

    pub fn params(&self) -> &WingParams {
        &self.params
    }

    pub fn mode(&self) -> WingMode {
        self.mode
    }

    fn cos_theta(&self, q: &DVector<f64>) -> f64 {
        match self.mode {
            WingMode::Simplified => 1.0,
            WingMode::Full => q[1].cos(),
        }
    }

    /// Kinetic plus potential energy.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let p = &self.params;
        let (q, qd) = split_state(x);
        let kinetic = 0.5 * qd.dot(&(self.mass(&q) * &qd));
        let mut potential = 0.5 * (p.k_h * q[0] * q[0] + p.k_theta * q[1] * q[1]);
        if let (WingMode::Full, Some(g)) = (self.mode, p.gravity) {
            potential += p.mass * g * (q[0] + p.x_theta * q[1].sin());
        }
        kinetic + potential
    }

    /// Flap angles producing the torque `τ`.
    pub fn flap_angles(&self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        self.params
            .flap_matrix()
            .lu()
            .solve(tau)
            .ok_or_else(|| Error::SingularSystem("flap effectiveness".into()))
    }
}

impl RoboticModel for WingModel {
    fn dof(&self) -> usize {
        2
    }

    fn mass(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let off = p.mass * p.x_theta * self.cos_theta(q);
        DMatrix::from_row_slice(2, 2, &[p.mass, off, off, p.mass * p.x_theta * p.x_theta + p.inertia])
    }

    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let cross = match self.mode {
            WingMode::Simplified => 0.0,
            WingMode::Full => -p.mass * p.x_theta * qd[1] * q[1].sin(),
        };
        DMatrix::from_row_slice(2, 2, &[p.c_h, cross, 0.0, p.c_theta])
    }

    fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let mut g = DVector::from_vec(vec![p.k_h * q[0], p.k_theta * q[1]]);
        if let (WingMode::Full, Some(grav)) = (self.mode, p.gravity) {
            g[0] += p.mass * grav;
            g[1] += p.mass * grav * p.x_theta * q[1].cos();
        }
        g
    }

    fn aero_distribution(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match self.mode {
            WingMode::Simplified => DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            WingMode::Full => DMatrix::from_column_slice(2, 1, &[q[1].cos(), self.params.x_a]),
        }
    }
}

/// Constants of the local existence argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub m_a: f64,
    pub m_mu: f64,
    pub m_h: f64,
    pub m_u: f64,
    pub lipschitz: f64,
    pub radius: f64,
    pub window: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub constants: ContractionConstants,
    pub norm_a: f64,
    pub norm_b: f64,
    pub delta: f64,
}

/// Safety factor turning the strict inequality into a usable horizon.
pub const CONTRACTION_SAFETY: f64 = 0.99;

/// `δ = 0.99 min{h, r/((‖A‖+‖B‖M_μL)r + M_A + ‖B‖M_T), 1/(‖A‖+‖B‖M_μL)}` with `M_T = M_H + M_u`.
pub fn contraction_horizon(core: &LinearCore, c: ContractionConstants) -> Result<ContractionEstimate> {
    let nonneg = [c.m_a, c.m_mu, c.m_h, c.m_u, c.lipschitz];
    if nonneg.iter().any(|v| v.is_nan() || *v < 0.0)
        || c.radius.is_nan()
        || c.radius <= 0.0
        || c.window.is_nan()
        || c.window <= 0.0
    {
        return Err(Error::ConfigInvalid(
            "contraction constants must be nonnegative with positive radius and window".into(),
        ));
    }
    let norm_a = spectral_norm(&core.a);
    let norm_b = spectral_norm(&core.b);
    let growth = norm_a + norm_b * c.m_mu * c.lipschitz;
    let m_t = c.m_h + c.m_u;
    let ball = c.radius / (growth * c.radius + c.m_a + norm_b * m_t);
    let contraction = 1.0 / growth;
    // Zero denominators give +inf, which min() ignores as intended.
    let delta = CONTRACTION_SAFETY * c.window.min(ball).min(contraction);
    Ok(ContractionEstimate {
        constants: c,
        norm_a,
        norm_b,
        delta,
    })
}
