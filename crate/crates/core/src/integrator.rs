//! Fixed-step Adams predictor–corrector integration (PECE) for right-hand
//! sides that read the whole trajectory history.
//!
//! A right-hand side may carry internal memory (kernel banks). The stepper
//! only ever asks it for *provisional* evaluations at a candidate node and
//! then *commits* the accepted node, so memory is advanced once per step,
//! along the corrected segment.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Append-only record of `(t_n, X(t_n), u(t_n))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, x: DVector<f64>, u: Option<DVector<f64>>) {
        self.times.push(t);
        self.states.push(x);
        if let Some(u) = u {
            self.inputs.push(u);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Recorded inputs; empty when the right-hand side exposes none.
    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    /// Drops all but the most recent node.
    fn retain_last(&mut self) {
        let n = self.times.len();
        if n > 1 {
            self.times.drain(..n - 1);
        }
        let n = self.states.len();
        if n > 1 {
            self.states.drain(..n - 1);
        }
        let n = self.inputs.len();
        if n > 1 {
            self.inputs.drain(..n - 1);
        }
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Linear interpolation between nodes.
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        let (Some(&start), Some(&end)) = (self.times.first(), self.times.last()) else {
            return Err(Error::InvalidInput("empty trajectory".into()));
        };
        if !(start..=end).contains(&t) {
            return Err(Error::TimeOutOfRange { t, start, end });
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == self.times.len() {
            return Ok(self.states[i - 1].clone());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Ok(&self.states[i - 1] * (1.0 - w) + &self.states[i] * w)
    }

    /// `max_n ‖X(t_n)‖` over nodes with `t_n >= t_from`.
    pub fn sup_norm_from(&self, t_from: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.states)
            .filter(|(t, _)| **t >= t_from)
            .fold(0.0, |m: f64, (_, x)| m.max(x.norm()))
    }

    /// CSV with columns `t, X1..Xm, u1..uq`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let m = self.states.first().map_or(0, |x| x.len());
        let q = if self.inputs.len() == self.states.len() {
            self.inputs.first().map_or(0, |u| u.len())
        } else {
            0
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("X{i}")));
        header.extend((1..=q).map(|i| format!("u{i}")));
        out.write_record(&header)?;
        for (n, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            if q > 0 {
                row.extend(self.inputs[n].iter().map(|v| format!("{v:e}")));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Right-hand side `F(t, X|[0,t])` of a functional differential equation.
///
/// `eval` receives the committed trajectory and a candidate node `(t, x)`
/// with `t` at or after the last committed time; the value must be computed
/// as if the history ended with that node, and must leave committed
/// memory untouched, so repeated calls give identical results. `commit`
/// accepts the node; the integrator appends it to the trajectory right
/// after.
pub trait HistoryRhs {
    fn dim(&self) -> usize;

    fn eval(&mut self, t: f64, x: &DVector<f64>, history: &Trajectory) -> Result<DVector<f64>>;

    fn commit(&mut self, _t: f64, _x: &DVector<f64>, _history: &Trajectory) -> Result<()> {
        Ok(())
    }

    /// Input `u` at the most recently committed node, if the system has one.
    fn input(&self) -> Option<DVector<f64>> {
        None
    }
}

/// Memoryless right-hand side from a closure.
pub struct FnRhs<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(f64, &DVector<f64>) -> DVector<f64>> FnRhs<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(f64, &DVector<f64>) -> DVector<f64>> HistoryRhs for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&mut self, t: f64, x: &DVector<f64>, _history: &Trajectory) -> Result<DVector<f64>> {
        Ok((self.f)(t, x))
    }
}

/// How the first `p - 1` steps are taken before the multistep pair has
/// enough back values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Startup {
    /// One-step Runge–Kutta of the scheme's order (Heun, Kutta-3, RK4).
    #[default]
    RungeKutta,
    /// PECE pairs of increasing order 1, 2, ..., p - 1.
    LowerOrder,
}

/// Adams–Bashforth predictor with Adams–Moulton corrector of order `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PcScheme {
    order: usize,
    startup: Startup,
}

impl PcScheme {
    pub fn new(order: usize) -> Result<Self> {
        Self::with_startup(order, Startup::default())
    }

    pub fn with_startup(order: usize, startup: Startup) -> Result<Self> {
        if !(1..=4).contains(&order) {
            return Err(Error::ConfigInvalid(format!("scheme order must be 1..=4, got {order}")));
        }
        Ok(Self { order, startup })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn startup(&self) -> Startup {
        self.startup
    }
}

/// Predictor weights on `f_n, f_{n-1}, ...`.
pub fn adams_bashforth(order: usize) -> &'static [f64] {
    match order {
        1 => &[1.0],
        2 => &[1.5, -0.5],
        3 => &[23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
        4 => &[55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
        _ => panic!("no Adams-Bashforth weights for order {order}"),
    }
}

/// Corrector weights on `f_{n+1}, f_n, f_{n-1}, ...`.
pub fn adams_moulton(order: usize) -> &'static [f64] {
    match order {
        1 => &[1.0],
        2 => &[0.5, 0.5],
        3 => &[5.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0],
        4 => &[9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0],
        _ => panic!("no Adams-Moulton weights for order {order}"),
    }
}

fn check_finite(t: f64, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NaNDetected { t })
    }
}

/// Stepping state: the committed trajectory plus derivative back values.
#[derive(Clone, Debug)]
pub struct Stepper {
    scheme: PcScheme,
    h: f64,
    t0: f64,
    traj: Trajectory,
    /// `f_n, f_{n-1}, ...` most recent first, at most `order` entries.
    derivs: Vec<DVector<f64>>,
    steps: usize,
    keep_history: bool,
}

impl Stepper {
    /// Evaluates and commits the initial node.
    pub fn new<R: HistoryRhs + ?Sized>(
        scheme: PcScheme,
        h: f64,
        t0: f64,
        x0: DVector<f64>,
        rhs: &mut R,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::ConfigInvalid(format!("step size must be positive, got {h}")));
        }
        if x0.len() != rhs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, system dimension is {}",
                x0.len(),
                rhs.dim()
            )));
        }
        check_finite(t0, &x0)?;
        let mut traj = Trajectory::new();
        let f0 = rhs.eval(t0, &x0, &traj)?;
        check_finite(t0, &f0)?;
        rhs.commit(t0, &x0, &traj)?;
        traj.push(t0, x0, rhs.input());
        Ok(Self {
            scheme,
            h,
            t0,
            traj,
            derivs: vec![f0],
            steps: 0,
            keep_history: true,
        })
    }

    /// Keeps only the latest node; for right-hand sides that carry their own memory.
    pub fn discard_history(mut self) -> Self {
        self.keep_history = false;
        self.traj.retain_last();
        self
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.node_time(self.steps_taken())
    }

    pub fn state(&self) -> &DVector<f64> {
        self.traj.last_state().expect("initial node present")
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn node_time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.h
    }

    /// Advances one step, using the startup rule until enough back values exist.
    pub fn step<R: HistoryRhs + ?Sized>(&mut self, rhs: &mut R) -> Result<()> {
        let p = self.scheme.order;
        if self.derivs.len() >= p {
            return self.multistep(p, rhs);
        }
        match self.scheme.startup {
            Startup::LowerOrder => self.multistep(self.derivs.len(), rhs),
            Startup::RungeKutta => self.runge_kutta(p, rhs),
        }
    }

    /// One PECE step of order `k` from the stored back values.
    pub fn multistep<R: HistoryRhs + ?Sized>(&mut self, k: usize, rhs: &mut R) -> Result<()> {
        if self.derivs.len() < k {
            return Err(Error::StartupUnderflow {
                needed: k,
                have: self.derivs.len(),
            });
        }
        let h = self.h;
        let t1 = self.node_time(self.steps_taken() + 1);
        let x0 = self.state().clone();

        let mut pred = x0.clone();
        for (w, f) in adams_bashforth(k).iter().zip(&self.derivs) {
            pred.axpy(h * w, f, 1.0);
        }
        check_finite(t1, &pred)?;
        let f_pred = rhs.eval(t1, &pred, &self.traj)?;
        check_finite(t1, &f_pred)?;

        let am = adams_moulton(k);
        let mut corr = x0;
        corr.axpy(h * am[0], &f_pred, 1.0);
        for (w, f) in am[1..].iter().zip(&self.derivs) {
            corr.axpy(h * w, f, 1.0);
        }
        self.accept(t1, corr, rhs)
    }

    fn runge_kutta<R: HistoryRhs + ?Sized>(&mut self, p: usize, rhs: &mut R) -> Result<()> {
        let h = self.h;
        let n = self.steps_taken();
        let (t, t1) = (self.node_time(n), self.node_time(n + 1));
        let x = self.state().clone();
        let k1 = self.derivs[0].clone();
        let mut stage = |c: f64, xs: DVector<f64>, traj: &Trajectory| -> Result<DVector<f64>> {
            let ts = if c == 1.0 { t1 } else { t + c * h };
            check_finite(ts, &xs)?;
            let f = rhs.eval(ts, &xs, traj)?;
            check_finite(ts, &f)?;
            Ok(f)
        };
        let x1 = match p {
            1 => &x + &k1 * h,
            2 => {
                let k2 = stage(1.0, &x + &k1 * h, &self.traj)?;
                &x + (&k1 + &k2) * (0.5 * h)
            }
            3 => {
                let k2 = stage(0.5, &x + &k1 * (0.5 * h), &self.traj)?;
                let k3 = stage(1.0, &x + (&k2 * 2.0 - &k1) * h, &self.traj)?;
                &x + (&k1 + &k2 * 4.0 + &k3) * (h / 6.0)
            }
            _ => {
                let k2 = stage(0.5, &x + &k1 * (0.5 * h), &self.traj)?;
                let k3 = stage(0.5, &x + &k2 * (0.5 * h), &self.traj)?;
                let k4 = stage(1.0, &x + &k3 * h, &self.traj)?;
                &x + (&k1 + (&k2 + &k3) * 2.0 + &k4) * (h / 6.0)
            }
        };
        self.accept(t1, x1, rhs)
    }

    fn accept<R: HistoryRhs + ?Sized>(&mut self, t1: f64, x1: DVector<f64>, rhs: &mut R) -> Result<()> {
        check_finite(t1, &x1)?;
        let f1 = rhs.eval(t1, &x1, &self.traj)?;
        check_finite(t1, &f1)?;
        rhs.commit(t1, &x1, &self.traj)?;
        self.traj.push(t1, x1, rhs.input());
        self.steps += 1;
        if !self.keep_history {
            self.traj.retain_last();
        }
        self.derivs.insert(0, f1);
        self.derivs.truncate(self.scheme.order.max(1));
        Ok(())
    }
}

/// Number of steps of size `h` covering `[0, t_end]`.
pub fn step_count(h: f64, t_end: f64) -> Result<usize> {
    if !(t_end > 0.0 && h > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "need t_end > 0 and h > 0, got {t_end}, {h}"
        )));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end {
        return Err(Error::ConfigInvalid(format!(
            "step {h} does not divide horizon {t_end}"
        )));
    }
    Ok(n as usize)
}

/// Integrates from `(t0, x0)` over `t_end` with step `h`.
pub fn integrate<R: HistoryRhs + ?Sized>(
    x0: DVector<f64>,
    rhs: &mut R,
    scheme: PcScheme,
    h: f64,
    t0: f64,
    t_end: f64,
) -> Result<Trajectory> {
    let n = step_count(h, t_end)?;
    let mut stepper = Stepper::new(scheme, h, t0, x0, rhs)?;
    for _ in 0..n {
        stepper.step(rhs)?;
    }
    Ok(stepper.into_trajectory())
}

/// Fitted convergence order.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderFit {
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`; `NaN` when exact.
    pub slope: f64,
    /// All errors at rounding level, so no slope is meaningful.
    pub exact: bool,
}

/// Errors at or below this are treated as rounding noise.
pub const EXACT_TOL: f64 = 1e-12;

/// Runs `error_for(h)` for every step size and fits the observed order.
pub fn order_check(step_sizes: &[f64], mut error_for: impl FnMut(f64) -> Result<f64>) -> Result<OrderFit> {
    if step_sizes.len() < 3 {
        return Err(Error::InvalidInput(
            "order check needs at least three step sizes".into(),
        ));
    }
    let errors = step_sizes.iter().map(|&h| error_for(h)).collect::<Result<Vec<_>>>()?;
    let exact = errors.iter().all(|&e| e <= EXACT_TOL);
    let slope = if exact {
        f64::NAN
    } else {
        let xs: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
        crate::operator::fit_slope(&xs, &ys)
    };
    Ok(OrderFit {
        step_sizes: step_sizes.to_vec(),
        errors,
        slope,
        exact,
    })
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// `∫_{ta}^{tb}` of the Lagrange interpolant through `(ts, ys)`.
fn lagrange_integral(ts: &[f64], ys: &[f64], ta: f64, tb: f64) -> f64 {
    let (mid, half) = (0.5 * (ta + tb), 0.5 * (tb - ta));
    GAUSS3
        .iter()
        .map(|&(x, w)| {
            let s = mid + half * x;
            let p: f64 = (0..ts.len())
                .map(|i| {
                    let l: f64 = (0..ts.len())
                        .filter(|&k| k != i)
                        .map(|k| (s - ts[k]) / (ts[i] - ts[k]))
                        .product();
                    l * ys[i]
                })
                .sum();
            w * p
        })
        .sum::<f64>()
        * half
}

/// Right-hand side of `u' + 2u + 5∫₀ᵗ u = 1`, exact solution `½ e^{-t} sin 2t`.
///
/// The memory term integrates the cubic interpolant of the stored history
/// (and the candidate node) segment by segment; segments whose
/// interpolation window no longer changes are cached.
#[derive(Clone, Debug, Default)]
pub struct IntegroBenchmark {
    cached_segments: usize,
    cached_integral: f64,
}

impl IntegroBenchmark {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn exact(t: f64) -> f64 {
        0.5 * (-t).exp() * (2.0 * t).sin()
    }

    fn window(k: usize, nodes: usize) -> (usize, usize) {
        let w = nodes.min(4);
        let start = k.saturating_sub(1).min(nodes - w);
        (start, w)
    }

    fn segment(ts: &[f64], ys: &[f64], k: usize) -> f64 {
        let (start, w) = Self::window(k, ts.len());
        lagrange_integral(&ts[start..start + w], &ys[start..start + w], ts[k], ts[k + 1])
    }

    fn memory(&mut self, t: f64, x: f64, history: &Trajectory) -> f64 {
        let committed = history.len();
        let mut ts: Vec<f64> = history.times().to_vec();
        let mut ys: Vec<f64> = history.states().iter().map(|s| s[0]).collect();
        // Segment k is final once its window is fixed and fully committed.
        while committed >= 4 && self.cached_segments + 2 < committed {
            self.cached_integral += Self::segment(&ts, &ys, self.cached_segments);
            self.cached_segments += 1;
        }
        if history.last_time().is_none_or(|last| t > last) {
            ts.push(t);
            ys.push(x);
        }
        let mut total = self.cached_integral;
        for k in self.cached_segments..ts.len().saturating_sub(1) {
            total += Self::segment(&ts, &ys, k);
        }
        total
    }
}

impl HistoryRhs for IntegroBenchmark {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&mut self, t: f64, x: &DVector<f64>, history: &Trajectory) -> Result<DVector<f64>> {
        let mem = self.memory(t, x[0], history);
        Ok(DVector::from_element(1, 1.0 - 2.0 * x[0] - 5.0 * mem))
    }
}
