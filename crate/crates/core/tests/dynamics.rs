use std::sync::Arc;

use hystrl_core::adaptive::{AdjointDrive, IdentificationSystem};
use hystrl_core::integrator::{integrate, HistoryRhs, PcScheme, Stepper};
use hystrl_core::kernel::RidgeFunction;
use hystrl_core::mesh::{DistributedParameter, TriDomain};
use hystrl_core::operator::{ChannelSpec, OperatorBank, ScalarizerA};
use hystrl_core::plant::{
    force_mixer, regulator_transform, tracking_transform, GeneralPlant, LinearCore, Reference, RoboticModel,
    RoboticPlant, SignalFn, WingMode, WingModel, WingParams,
};
use hystrl_core::scenario::{ExperimentConfig, MuSpec};
use nalgebra::{DMatrix, DVector};

fn domain() -> TriDomain {
    TriDomain::new(-1.0, 1.0).unwrap()
}

fn full_wing(params: WingParams) -> Arc<WingModel> {
    Arc::new(WingModel::new(params, WingMode::Full).unwrap())
}

fn gains() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal_element(2, 2, 4.0),
        DMatrix::from_diagonal_element(2, 2, 4.0),
    )
}

fn lift_bank(mixer: hystrl_core::operator::MixerB, level: usize, y0: DVector<f64>) -> OperatorBank {
    OperatorBank::new(
        domain(),
        &[ChannelSpec {
            ridge: RidgeFunction::saturation(),
            level,
        }],
        ScalarizerA::Coordinate(1),
        mixer,
        0.0,
        y0,
        0.0,
    )
    .unwrap()
}

fn mu(level: usize) -> DistributedParameter {
    let spec = MuSpec::default();
    hystrl_core::mesh::project_analytic(domain(), &move |s| spec.eval(s), level, 6).unwrap()
}

#[test]
fn linear_plant_matches_matrix_exponential() {
    let core = LinearCore::companion(
        &DMatrix::from_diagonal_element(2, 2, 3.0),
        &DMatrix::from_diagonal_element(2, 2, 2.0),
    )
    .unwrap();
    let a = core.a().clone();
    let mut plant = GeneralPlant::new(core, None, None).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -0.5, 0.2, 0.3]);
    let tr = integrate(x0.clone(), &mut plant, PcScheme::new(4).unwrap(), 1e-3, 0.0, 2.0).unwrap();
    let exact = (a * 2.0).exp() * x0;
    assert!((tr.last_state().unwrap() - exact).amax() < 1e-9);
}

#[test]
fn constant_forcing_reaches_static_equilibrium() {
    // Ẋ = AX + Bu with A Hurwitz settles at −A⁻¹Bu.
    let core = LinearCore::companion(
        &DMatrix::from_diagonal_element(2, 2, 4.0),
        &DMatrix::from_diagonal_element(2, 2, 4.0),
    )
    .unwrap();
    let u = DVector::from_vec(vec![2.0, -1.0]);
    let x_eq = -core.a().clone().lu().solve(&(core.b() * &u)).unwrap();
    let forcing: SignalFn = Arc::new(move |_| u.clone());
    let mut plant = GeneralPlant::new(core, None, Some(forcing)).unwrap();
    let tr = integrate(
        DVector::zeros(4),
        &mut plant,
        PcScheme::new(4).unwrap(),
        1e-2,
        0.0,
        20.0,
    )
    .unwrap();
    assert!((tr.last_state().unwrap() - &x_eq).amax() < 1e-8);
    // q = [0.5, -0.25] for G0 = 4I.
    assert!((x_eq[0] - 0.5).abs() < 1e-14 && (x_eq[1] + 0.25).abs() < 1e-14);
}

#[test]
fn zero_parameter_removes_hysteresis() {
    let transform = regulator_transform(
        Arc::new(WingModel::new(WingParams::default(), WingMode::Simplified).unwrap()),
        gains().0,
        gains().1,
    )
    .unwrap();
    let x0 = DVector::from_vec(vec![0.1, 0.2, 0.0, 0.0]);
    let bank = lift_bank(transform.mixer(1), 3, x0.clone());
    let mut with_bank = GeneralPlant::new(
        transform.core().clone(),
        Some((bank, DistributedParameter::zeros(domain(), &[3]))),
        None,
    )
    .unwrap();
    let mut without = GeneralPlant::new(transform.core().clone(), None, None).unwrap();
    let scheme = PcScheme::new(3).unwrap();
    let a = integrate(x0.clone(), &mut with_bank, scheme, 1e-3, 0.0, 1.0).unwrap();
    let b = integrate(x0, &mut without, scheme, 1e-3, 0.0, 1.0).unwrap();
    assert_eq!(a.states(), b.states());
}

#[test]
fn undamped_full_wing_conserves_energy() {
    let params = WingParams {
        c_h: 0.0,
        c_theta: 0.0,
        gravity: Some(9.81),
        ..WingParams::default()
    };
    let model = full_wing(params);
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
    assert!(drift <= 1e-6, "relative energy drift {drift:e}");
}

#[test]
fn feedback_transform_is_sound_on_the_full_wing() {
    let model = full_wing(WingParams {
        x_a: 0.15,
        gravity: Some(9.81),
        ..WingParams::default()
    });
    let (g0, g1) = gains();
    let reference = Reference::sinusoid(vec![0.1, 0.3], vec![2.0, 3.0]);
    let transform = tracking_transform(model.clone(), reference.clone(), g0, g1).unwrap();
    let v: SignalFn = Arc::new(|t: f64| DVector::from_vec(vec![0.5 * (1.3 * t).sin(), -0.4 * (0.7 * t).cos()]));
    let x0 = DVector::from_vec(vec![0.05, -0.1, 0.02, 0.0]);
    let y0 = transform.physical_state(0.0, &x0);
    let level = 3;
    let scheme = PcScheme::new(4).unwrap();
    let (h, t_end) = (1e-3, 5.0);

    let first_bank = lift_bank(transform.mixer(1), level, y0.clone());
    let mut first = GeneralPlant::new(transform.core().clone(), Some((first_bank, mu(level))), Some(v.clone()))
        .unwrap()
        .with_reference(reference);
    let xs = integrate(x0, &mut first, scheme, h, 0.0, t_end).unwrap();

    let robot_bank = lift_bank(
        force_mixer(model.clone() as Arc<dyn RoboticModel>, 1),
        level,
        y0.clone(),
    );
    let tau = {
        let transform = transform.clone();
        Box::new(move |t: f64, q: &DVector<f64>, qd: &DVector<f64>| Ok(transform.torque(t, q, qd, &v(t))))
    };
    let mut robot = RoboticPlant::new(model, Some((robot_bank, mu(level))), Some(tau));
    let ys = integrate(y0, &mut robot, scheme, h, 0.0, t_end).unwrap();

    let worst = xs
        .times()
        .iter()
        .zip(xs.states())
        .zip(ys.states())
        .map(|((t, x), y)| (transform.physical_state(*t, x) - y).amax())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn estimator_energy_derivative_is_the_skew_free_part() {
    // With unit weight and state-error drive, d/dt ½(‖X̃‖² + ‖μ̃‖²/Γ) = X̃ᵀ A X̃.
    let cfg = ExperimentConfig::default();
    let transform = cfg.regulator().unwrap();
    let core = transform.core().clone();
    let level = 2;
    let gain = 50.0;
    let x0 = DVector::from_vec(vec![0.05, 0.1, 0.0, 0.0]);
    let excitation = hystrl_core::adaptive::multisine(2, 4, 5.0, 0.5, 4.0, 7);
    let mut system = IdentificationSystem::new(
        core.clone(),
        lift_bank(transform.mixer(1), level, x0.clone()),
        mu(level),
        excitation,
        vec![lift_bank(transform.mixer(1), level, x0.clone())],
        gain,
        AdjointDrive::StateError,
        DMatrix::identity(4, 4),
    )
    .unwrap();
    let mu0 = DistributedParameter::constant(domain(), &[level], 0.3);
    let z0 = system
        .initial_state(&x0, &[(DVector::from_vec(vec![-0.1, 0.0, 0.2, 0.1]), mu0)])
        .unwrap();
    let mut stepper = Stepper::new(PcScheme::new(4).unwrap(), 1e-3, 0.0, z0, &mut system).unwrap();
    for check in 0..5 {
        for _ in 0..200 {
            stepper.step(&mut system).unwrap();
        }
        let (t, z) = (stepper.time(), stepper.state().clone());
        let dz = system.eval(t, &z, stepper.trajectory()).unwrap();
        let (x, ests) = system.unpack(&z).unwrap();
        let (dx, dests) = system.unpack(&dz).unwrap();
        let (xh, mu_hat) = &ests[0];
        let (dxh, dmu) = &dests[0];
        let xt = &x - xh;
        let mu_t = system.mu_star().axpby(1.0, mu_hat, -1.0).unwrap();
        let dv = xt.dot(&(&dx - dxh)) - mu_t.inner(dmu).unwrap() / gain;
        let expected = xt.dot(&(core.a() * &xt));
        assert!(
            (dv - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
            "check {check}: {dv:e} vs {expected:e}"
        );
    }
}

#[test]
fn unforced_stable_plant_decays_at_the_spectral_rate() {
    let core = LinearCore::companion(
        &DMatrix::from_diagonal_element(2, 2, 2.0),
        &DMatrix::from_diagonal_element(2, 2, 3.0),
    )
    .unwrap();
    // Real eigenvalues −1 and −2; diagonalizable, so ‖X(t)‖ ≤ cond(V)‖X₀‖e^{σt}.
    let sigma = core.spectral_abscissa();
    assert!((sigma + 1.0).abs() < 1e-12);
    let transform = regulator_transform(
        Arc::new(WingModel::new(WingParams::default(), WingMode::Simplified).unwrap()),
        DMatrix::from_diagonal_element(2, 2, 2.0),
        DMatrix::from_diagonal_element(2, 2, 3.0),
    )
    .unwrap();
    let x0 = DVector::from_vec(vec![0.3, -0.2, 0.0, 0.1]);
    let bank = lift_bank(transform.mixer(1), 2, x0.clone());
    let mut plant = GeneralPlant::new(core, Some((bank, DistributedParameter::zeros(domain(), &[2]))), None).unwrap();
    let tr = integrate(x0.clone(), &mut plant, PcScheme::new(4).unwrap(), 1e-3, 0.0, 6.0).unwrap();
    // Per block the modal matrix [[1, 1], [−1, −2]] has condition number below 7.
    for (t, x) in tr.times().iter().zip(tr.states()) {
        assert!(x.norm() <= 7.0 * x0.norm() * (sigma * t).exp() + 1e-12);
    }
}

#[test]
fn saturated_bank_acts_as_constant_forcing() {
    // a(X) ≡ 5 keeps every kernel at γ(5 − s2) = 1, so H∘c = c·area(Δ).
    let c = 0.7;
    let core = LinearCore::new(DMatrix::from_element(1, 1, -2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let bank = OperatorBank::new(
        domain(),
        &[ChannelSpec {
            ridge: RidgeFunction::saturation(),
            level: 0,
        }],
        ScalarizerA::Map(Arc::new(|_| 5.0)),
        hystrl_core::operator::MixerB::Constant(DMatrix::from_element(1, 1, 1.0)),
        0.0,
        DVector::zeros(1),
        0.0,
    )
    .unwrap();
    let mu = DistributedParameter::constant(domain(), &[0], c);
    let mut plant = GeneralPlant::new(core, Some((bank, mu)), None).unwrap();
    let x0 = 0.4;
    let tr = integrate(
        DVector::from_element(1, x0),
        &mut plant,
        PcScheme::new(4).unwrap(),
        1e-3,
        0.0,
        3.0,
    )
    .unwrap();
    let forcing = c * domain().area();
    for (t, x) in tr.times().iter().zip(tr.states()) {
        let exact = forcing / 2.0 + (x0 - forcing / 2.0) * (-2.0 * t).exp();
        assert!((x[0] - exact).abs() < 1e-10, "t={t}: {} vs {exact}", x[0]);
    }
}
