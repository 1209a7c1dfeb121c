//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use hystrl_core::adaptive::lyapunov_solve;
use hystrl_core::experiment::{run, Summary};
use hystrl_core::integrator::{integrate, PcScheme};
use hystrl_core::kernel::{kernel_eval, PiecewiseLinearInput, RidgeFunction, ThresholdPair};
use hystrl_core::mesh::{DistributedParameter, TriDomain};
use hystrl_core::operator::{fit_slope, ChannelSpec, OperatorBank, ScalarizerA};
use hystrl_core::plant::{
    force_mixer, spectral_abscissa, GeneralPlant, RoboticModel, RoboticPlant, SignalFn, WingMode, WingModel, WingParams,
};
use hystrl_core::scenario::{ExperimentConfig, ExperimentKind};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(kind: ExperimentKind, overrides: &[&str]) -> ExperimentConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let mut cfg = ExperimentConfig::from_json_with_overrides("{}", &overrides).expect("valid overrides");
    cfg.kind = kind;
    cfg
}

fn run_in(dir: &Path, name: &str, cfg: &ExperimentConfig) -> Summary {
    run(cfg, &dir.join(name)).expect("experiment runs")
}

fn metric(s: &Summary, key: &str) -> f64 {
    s.metrics.get(key).copied().flatten().unwrap_or(f64::NAN)
}

fn domain() -> TriDomain {
    TriDomain::new(-1.0, 1.0).unwrap()
}

fn approximation_rate(dir: &Path) -> Outcome {
    let clock = Instant::now();
    let s = run_in(dir, "rate", &config(ExperimentKind::ApproxError, &[]));
    let secs = clock.elapsed().as_secs_f64();
    let (slope, spread) = (metric(&s, "slope"), metric(&s, "constant_spread"));
    let decreasing = s.checks["errors_strictly_decreasing"];
    let pass = decreasing && (-2.4..=-1.6).contains(&slope) && spread <= 4.0 && secs <= 60.0;
    outcome(
        pass,
        format!("J=7, j=2..5: decreasing={decreasing}, slope {slope:.3} in [-2.4,-1.6], C_j spread {spread:.3} <= 4, {secs:.2} s <= 60 s"),
    )
}

fn random_input(rng: &mut ChaCha8Rng) -> PiecewiseLinearInput {
    let n = rng.random_range(3..20);
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        times.push(t);
        values.push(rng.random_range(-3.0..3.0));
        t += rng.random_range(0.01..2.0);
    }
    PiecewiseLinearInput::new(times, values).unwrap()
}

fn kernel_properties() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let gamma = RidgeFunction::saturation();
    let mut failures = [0usize; 4];
    for _ in 0..1000 {
        let f = random_input(&mut rng);
        let n = f.len();
        // Reparametrized time axis with the same values.
        let mut t2 = vec![0.0];
        for _ in 1..n {
            let last = *t2.last().unwrap();
            t2.push(last + rng.random_range(0.01..5.0));
        }
        let g = PiecewiseLinearInput::new(t2, f.values().to_vec()).unwrap();
        // Different future after a cut.
        let cut = rng.random_range(1..n);
        let mut changed = f.values()[..cut].to_vec();
        changed.extend((cut..n).map(|_| rng.random_range(-3.0..3.0)));
        let h = PiecewiseLinearInput::new(f.times().to_vec(), changed).unwrap();
        // Every piece split at a random interior point.
        let mut ft = vec![f.times()[0]];
        let mut fv = vec![f.values()[0]];
        for k in 1..n {
            let (ta, tb) = (f.times()[k - 1], f.times()[k]);
            let tm = ta + rng.random_range(0.05..0.95) * (tb - ta);
            ft.extend([tm, tb]);
            fv.extend([f.value_at(tm).unwrap(), f.values()[k]]);
        }
        let fine = PiecewiseLinearInput::new(ft, fv).unwrap();

        for _ in 0..50 {
            let s1 = rng.random_range(-1.0..1.0);
            let s = ThresholdPair::new(s1, rng.random_range(s1..=1.0)).unwrap();
            for k in 0..n {
                let t = f.times()[k];
                let kf = kernel_eval(&gamma, s, &f, t, 0.0).unwrap();
                if kf != kernel_eval(&gamma, s, &g, g.times()[k], 0.0).unwrap() {
                    failures[0] += 1;
                }
                if k < cut && kf != kernel_eval(&gamma, s, &h, t, 0.0).unwrap() {
                    failures[1] += 1;
                }
                let (lo, hi) = s.envelope(&gamma, f.values()[k]);
                if !(lo <= kf && kf <= hi) {
                    failures[2] += 1;
                }
                if kf != kernel_eval(&gamma, s, &fine, t, 0.0).unwrap() {
                    failures[3] += 1;
                }
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = failures.iter().all(|&c| c == 0) && secs <= 30.0;
    outcome(
        pass,
        format!(
            "1000 inputs x 50 pairs: violations rate-independence {} causality {} envelope {} resampling {}, {secs:.2} s <= 30 s",
            failures[0], failures[1], failures[2], failures[3]
        ),
    )
}

fn projections() -> Outcome {
    let d = domain();
    let fine = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4usize.pow(fine as u32);
    let mu = DistributedParameter::single(d, fine, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let nu = DistributedParameter::single(d, fine, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let proj = |m: &DistributedParameter, j: usize| m.restrict(j).unwrap().prolong(fine).unwrap();
    let diff = |a: &DistributedParameter, b: &DistributedParameter| a.axpby(1.0, b, -1.0).unwrap().max_abs();
    let mut worst = [0.0f64; 3];
    for j in 0..=fine {
        let pj = proj(&mu, j);
        worst[0] = worst[0].max(diff(&proj(&pj, j), &pj));
        for i in 0..j {
            worst[1] = worst[1].max(diff(&proj(&pj, i), &proj(&mu, i)));
        }
        worst[2] = worst[2].max((pj.inner(&nu).unwrap() - mu.inner(&proj(&nu, j)).unwrap()).abs());
    }
    // Lipschitz parameter against a level-9 reference.
    let cfg = ExperimentConfig::default();
    let reference = cfg.mu_at(9).unwrap();
    let levels: Vec<usize> = (2..=7).collect();
    let errs: Vec<f64> = levels
        .iter()
        .map(|&j| {
            reference
                .axpby(1.0, &reference.restrict(j).unwrap().prolong(9).unwrap(), -1.0)
                .unwrap()
                .norm()
        })
        .collect();
    let slope = fit_slope(
        &levels.iter().map(|&j| j as f64).collect::<Vec<_>>(),
        &errs.iter().map(|e| e.log2()).collect::<Vec<_>>(),
    );
    let pass = worst.iter().all(|&w| w <= 1e-12) && slope <= -0.9;
    outcome(
        pass,
        format!(
            "idempotence {:.1e}, nesting {:.1e}, self-adjointness {:.1e} (<= 1e-12); log2 ||mu - P_j mu|| slope {slope:.3} <= -0.9",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn integrator(dir: &Path) -> Outcome {
    let s = run_in(dir, "benchmark", &config(ExperimentKind::IntegrateBenchmark, &[]));
    let (p2, p4) = (metric(&s, "slope_p2"), metric(&s, "slope_p4"));
    let orders_ok = (p2 - 2.0).abs() <= 0.3 && (p4 - 4.0).abs() <= 0.5;

    let model = Arc::new(
        WingModel::new(
            WingParams {
                c_h: 0.0,
                c_theta: 0.0,
                gravity: Some(9.81),
                ..WingParams::default()
            },
            WingMode::Full,
        )
        .unwrap(),
    );
    let x0 = DVector::from_vec(vec![0.05, 0.4, 0.2, -0.3]);
    let e0 = model.energy(&x0);
    let mut plant = RoboticPlant::new(model.clone(), None, None);
    let tr = integrate(x0, &mut plant, PcScheme::new(4).unwrap(), 1e-4, 0.0, 10.0).unwrap();
    let drift = tr
        .states()
        .iter()
        .map(|x| (model.energy(x) - e0).abs())
        .fold(0.0, f64::max)
        / e0.abs();
    outcome(
        orders_ok && drift <= 1e-6,
        format!("benchmark slopes p=2: {p2:.3} (+-0.3), p=4: {p4:.3} (+-0.5); undamped full wing energy drift {drift:.2e} <= 1e-6"),
    )
}

fn estimator(dir: &Path) -> Outcome {
    let s = run_in(dir, "identify", &config(ExperimentKind::Identify, &[]));
    let ratio = metric(&s, "state_error_ratio");
    let reduction = metric(&s, "mismatch_reduction");
    let sweep: Vec<f64> = (1..=4).map(|j| metric(&s, &format!("sup_diff_j{j}"))).collect();
    let decreasing = sweep.windows(2).all(|w| w[1] < w[0]);
    outcome(
        ratio <= 1e-3 && reduction >= 10.0 && decreasing,
        format!(
            "|X~(T)|/|X~(0)| {ratio:.2e} <= 1e-3, mismatch reduction {reduction:.0}x >= 10x, sup|Xhat_j - Xhat_6| j=1..4 {:?} decreasing={decreasing}",
            sweep.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn controller(dir: &Path) -> Outcome {
    let cases = [
        ("a", "control.epsilon=0.01", "control.step=0.0005", false),
        ("b", "control.epsilon=0.01", "control.step=0.001", true),
        ("c", "control.epsilon=0.1", "control.step=0.001", false),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut tails = Vec::new();
    for (name, eps, step, chatter) in cases {
        let s = run_in(
            dir,
            &format!("control-{name}"),
            &config(ExperimentKind::ControlWing, &[eps, step]),
        );
        let observed = s.flags["chattering"];
        let diss = metric(&s, "dissipation_fraction");
        pass &= observed == chatter && diss >= 0.99;
        tails.push(metric(&s, "tail_sup"));
        parts.push(format!(
            "({name}) chatter={observed} (want {chatter}) {:.0}/s, tail {:.2e}, dissipation {:.3}",
            metric(&s, "switch_rate"),
            metric(&s, "tail_sup"),
            diss
        ));
    }
    let larger_tail = tails[2] > tails[0];
    pass &= larger_tail;
    let cubs: Vec<f64> = (0..4)
        .map(|seed| {
            let seed_arg = format!("seed={seed}");
            let s = run_in(
                dir,
                &format!("control-seed{seed}"),
                &config(ExperimentKind::ControlWing, &[&seed_arg]),
            );
            metric(&s, "ultimate_constant")
        })
        .collect();
    let mean = cubs.iter().sum::<f64>() / cubs.len() as f64;
    let spread = cubs.iter().map(|c| (c / mean - 1.0).abs()).fold(0.0, f64::max);
    pass &= spread <= 0.2;
    outcome(
        pass,
        format!(
            "{}; tail(c) > tail(a): {larger_tail}; C_ub over seeds 0..3 {:.4}..{:.4}, max deviation {:.1}% <= 20%",
            parts.join("; "),
            cubs.iter().copied().fold(f64::INFINITY, f64::min),
            cubs.iter().copied().fold(0.0, f64::max),
            100.0 * spread
        ),
    )
}

fn lyapunov() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut all_spd, mut solved) = (0.0f64, true, 0);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = spectral_abscissa(&r) + rng.random_range(0.1..2.0);
        let a = r - DMatrix::identity(n, n) * shift;
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + DMatrix::identity(n, n);
        match lyapunov_solve(&a, &q) {
            Ok(pair) => {
                solved += 1;
                worst = worst.max(pair.residual);
                all_spd &= pair.p.clone().cholesky().is_some() && (&pair.p - pair.p.transpose()).amax() == 0.0;
            }
            Err(_) => all_spd = false,
        }
    }
    outcome(
        solved == 100 && worst <= 1e-10 && all_spd,
        format!("{solved}/100 random Hurwitz systems solved, max residual {worst:.2e} <= 1e-10, P SPD: {all_spd}"),
    )
}

fn transform_soundness() -> Outcome {
    let model = Arc::new(
        WingModel::new(
            WingParams {
                x_a: 0.15,
                gravity: Some(9.81),
                ..WingParams::default()
            },
            WingMode::Full,
        )
        .unwrap(),
    );
    let cfg = ExperimentConfig::default();
    let (g0, g1) = cfg.gain_matrices().unwrap();
    let reference = hystrl_core::plant::Reference::sinusoid(vec![0.1, 0.3], vec![2.0, 3.0]);
    let transform = hystrl_core::plant::tracking_transform(model.clone(), reference.clone(), g0, g1).unwrap();
    let v: SignalFn = Arc::new(|t: f64| DVector::from_vec(vec![0.5 * (1.3 * t).sin(), -0.4 * (0.7 * t).cos()]));
    let x0 = DVector::from_vec(vec![0.05, -0.1, 0.02, 0.0]);
    let y0 = transform.physical_state(0.0, &x0);
    let level = 3;
    let bank = |mixer| {
        OperatorBank::new(
            domain(),
            &[ChannelSpec {
                ridge: RidgeFunction::saturation(),
                level,
            }],
            ScalarizerA::Coordinate(1),
            mixer,
            0.0,
            y0.clone(),
            0.0,
        )
        .unwrap()
    };
    let mu = cfg.mu_at(level).unwrap();
    let scheme = PcScheme::new(4).unwrap();
    let mut first = GeneralPlant::new(
        transform.core().clone(),
        Some((bank(transform.mixer(1)), mu.clone())),
        Some(v.clone()),
    )
    .unwrap()
    .with_reference(reference);
    let xs = integrate(x0, &mut first, scheme, 1e-3, 0.0, 5.0).unwrap();
    let tau = {
        let transform = transform.clone();
        Box::new(move |t: f64, q: &DVector<f64>, qd: &DVector<f64>| Ok(transform.torque(t, q, qd, &v(t))))
    };
    let mut robot = RoboticPlant::new(
        model.clone(),
        Some((bank(force_mixer(model as Arc<dyn RoboticModel>, 1)), mu)),
        Some(tau),
    );
    let ys = integrate(y0.clone(), &mut robot, scheme, 1e-3, 0.0, 5.0).unwrap();
    let worst = xs
        .times()
        .iter()
        .zip(xs.states())
        .zip(ys.states())
        .map(|((t, x), y)| (transform.physical_state(*t, x) - y).amax())
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-6,
        format!("robotic vs first-order wing over 5 s: max deviation {worst:.2e} <= 1e-6"),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Criterion)> = vec![
        ("approximation rate", Box::new(|| approximation_rate(dir.path()))),
        ("kernel properties", Box::new(kernel_properties)),
        ("projections", Box::new(projections)),
        ("integrator", Box::new(|| integrator(dir.path()))),
        ("estimator", Box::new(|| estimator(dir.path()))),
        ("controller", Box::new(|| controller(dir.path()))),
        ("lyapunov synthesis", Box::new(lyapunov)),
        ("transform soundness", Box::new(transform_soundness)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
