//! Runs one configured experiment and writes its artifacts.
//!
//! Every run leaves `resolved_config.json`, the kind-specific CSV files and
//! `summary.json` in the output directory. CSV content depends only on the
//! configuration (seed included); timing goes to the summary alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adaptive::{closed_loop, identify};
use crate::error::{Error, Result};
use crate::integrator::{integrate, order_check, IntegroBenchmark, Trajectory};
use crate::mesh::{refine, DistributedParameter};
use crate::operator::{oscillatory_input, rate_experiment};
use crate::plant::GeneralPlant;
use crate::scenario::{ExperimentConfig, ExperimentKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// State norms above this count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const CHECK_FAILED: i32 = 4;
}

/// Exit code for an error that stopped a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigInvalid(_)
        | Error::Json(_)
        | Error::InvalidRidge(_)
        | Error::InvalidThreshold { .. }
        | Error::InvalidDomain(_)
        | Error::LevelTooDeep { .. }
        | Error::LevelMismatch(_)
        | Error::DimensionMismatch(_)
        | Error::NotHurwitz { .. } => exit::CONFIG,
        Error::NaNDetected { .. } | Error::RunDiverged(_) | Error::SingularSystem(_) => exit::DIVERGED,
        _ => exit::FAILURE,
    }
}

/// Machine-readable result of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Scalar results; non-finite values are stored as `null`.
    pub metrics: BTreeMap<String, Option<f64>>,
    /// Qualitative observations such as chattering.
    pub flags: BTreeMap<String, bool>,
    /// Pass/fail of each configured acceptance check.
    pub checks: BTreeMap<String, bool>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl Summary {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            kind: cfg.kind,
            seed: cfg.seed,
            metrics: BTreeMap::new(),
            flags: BTreeMap::new(),
            checks: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            version: VERSION.to_string(),
        }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v.is_finite().then_some(v));
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|(_, &ok)| !ok)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn trajectory(&mut self, name: &str, tr: &Trajectory) -> Result<()> {
        tr.write_csv(self.create(name)?)
    }

    fn parameter(&mut self, name: &str, mu: &DistributedParameter) -> Result<()> {
        mu.write_csv(self.create(name)?)
    }
}

fn as_config_error(err: Error) -> Error {
    match err {
        Error::ConfigInvalid(_) => err,
        other => Error::ConfigInvalid(other.to_string()),
    }
}

/// Validates `cfg`, runs it and writes all artifacts into `out_dir`.
///
/// A run whose checks fail still returns `Ok`; see [`Summary::passed`].
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    cfg.validate().map_err(as_config_error)?;
    std::fs::create_dir_all(out_dir)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out_dir.join("resolved_config.json"))?), cfg)?;

    let clock = Instant::now();
    let mut summary = Summary::new(cfg);
    let mut out = Outputs {
        dir: out_dir,
        files: vec!["resolved_config.json".into()],
    };
    match cfg.kind {
        ExperimentKind::MeshInfo => mesh_info(cfg, &mut summary, &mut out)?,
        ExperimentKind::ApproxError => approx_error(cfg, &mut summary, &mut out)?,
        ExperimentKind::IntegrateBenchmark => integrate_benchmark(cfg, &mut summary, &mut out)?,
        ExperimentKind::SimulatePlant => simulate_plant(cfg, &mut summary, &mut out)?,
        ExperimentKind::Identify => identify_run(cfg, &mut summary, &mut out)?,
        ExperimentKind::ControlWing => control_wing(cfg, &mut summary, &mut out)?,
    }
    summary.wall_clock_seconds = clock.elapsed().as_secs_f64();
    out.files.push("summary.json".into());
    summary.outputs = out.files;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out_dir.join("summary.json"))?), &summary)?;
    Ok(summary)
}

fn guard_divergence(tr: &Trajectory) -> Result<f64> {
    let sup = tr.sup_norm_from(f64::NEG_INFINITY);
    if !sup.is_finite() || sup > DIVERGENCE_BOUND {
        return Err(Error::RunDiverged(format!("state norm reached {sup:e}")));
    }
    Ok(sup)
}

fn mesh_info(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let domain = cfg.domain()?;
    let mesh = refine(domain, cfg.mesh.level)?;
    let mut w = csv::Writer::from_writer(out.create("mesh.csv")?);
    w.write_record(["cell_index", "address", "s1", "s2", "area"])?;
    for (k, (cell, p)) in mesh.cells().iter().zip(mesh.quad_points()).enumerate() {
        let address: String = mesh.address(k).digits().iter().map(|d| d.to_string()).collect();
        w.write_record(&[
            (k + 1).to_string(),
            address,
            format!("{:e}", p[0]),
            format!("{:e}", p[1]),
            format!("{:e}", cell.area()),
        ])?;
    }
    w.flush()?;
    out.parameter("parameter.csv", &cfg.mu_at(cfg.mesh.level)?)?;

    let total: f64 = mesh.areas().iter().sum();
    let defect = (total - domain.area()).abs();
    s.metric("level", cfg.mesh.level as f64);
    s.metric("cells", mesh.len() as f64);
    s.metric("cell_area", mesh.cell_area());
    s.metric("domain_area", domain.area());
    s.metric("area_defect", defect);
    s.check("areas_sum_to_domain", defect <= 1e-12 * domain.area());
    Ok(())
}

fn approx_error(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let a = &cfg.approx;
    let domain = cfg.domain()?;
    let input = oscillatory_input(a.segments, a.amplitude, cfg.seed)?;
    let mu = cfg.mu.clone();
    let report = rate_experiment(
        domain,
        &cfg.ridge,
        &input,
        &move |p| mu.eval(p),
        a.fine_level,
        &a.levels,
        a.samples_per_segment,
    )?;
    report.write_csv(out.create("rate.csv")?)?;
    let finest = *a.levels.iter().max().expect("validated");
    out.parameter("parameter.csv", &cfg.mu_at(finest)?)?;

    for r in &report.rows {
        s.metric(&format!("e_{}", r.level), r.error);
        s.metric(&format!("C_{}", r.level), r.constant);
    }
    let spread = report.constant_spread();
    s.metric("slope", report.slope);
    s.metric("constant_spread", spread);
    s.metric("alpha", report.alpha);
    s.check("errors_strictly_decreasing", report.strictly_decreasing());
    s.check(
        "slope_in_band",
        report.slope >= a.slope_band[0] && report.slope <= a.slope_band[1],
    );
    s.check("constant_spread_bounded", spread <= a.max_constant_spread);
    Ok(())
}

fn benchmark_solution(p: usize, cfg: &ExperimentConfig, h: f64) -> Result<Trajectory> {
    let scheme = crate::integrator::PcScheme::with_startup(p, cfg.integrator.scheme()?.startup())?;
    integrate(
        DVector::zeros(1),
        &mut IntegroBenchmark::new(),
        scheme,
        h,
        0.0,
        cfg.benchmark.horizon,
    )
}

fn max_error(tr: &Trajectory) -> f64 {
    tr.times()
        .iter()
        .zip(tr.states())
        .map(|(t, x)| (x[0] - IntegroBenchmark::exact(*t)).abs())
        .fold(0.0, f64::max)
}

fn integrate_benchmark(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let b = &cfg.benchmark;
    let mut rows = Vec::new();
    for (&p, &tol) in b.orders.iter().zip(&b.slope_tolerance) {
        let fit = order_check(&b.step_sizes, |h| Ok(max_error(&benchmark_solution(p, cfg, h)?)))?;
        for (h, e) in fit.step_sizes.iter().zip(&fit.errors) {
            rows.push([p.to_string(), format!("{h:e}"), format!("{e:e}")]);
        }
        rows.push([p.to_string(), "slope".to_string(), format!("{:e}", fit.slope)]);
        s.metric(&format!("slope_p{p}"), fit.slope);
        s.metric(&format!("finest_error_p{p}"), *fit.errors.last().expect("nonempty"));
        s.check(&format!("order_p{p}"), (fit.slope - p as f64).abs() <= tol);

        let finest = b.step_sizes.iter().copied().fold(f64::INFINITY, f64::min);
        out.trajectory(&format!("trajectory_p{p}.csv"), &benchmark_solution(p, cfg, finest)?)?;
    }
    let mut w = csv::Writer::from_writer(out.create("order.csv")?);
    w.write_record(["p", "t_h", "error"])?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate_plant(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let c = &cfg.simulate;
    let transform = cfg.regulator()?;
    let x0 = DVector::from_row_slice(&c.x0);
    let mu = cfg.mu_at(c.level)?;
    let bank = cfg.wing_bank(&transform, c.level, x0.clone())?;
    let mut plant = GeneralPlant::new(
        transform.core().clone(),
        Some((bank, mu.clone())),
        Some(cfg.simulate_excitation()),
    )?;
    let tr = integrate(x0, &mut plant, cfg.integrator.scheme()?, c.step, 0.0, c.horizon)?;
    let sup = guard_divergence(&tr)?;
    out.trajectory("trajectory.csv", &tr)?;
    out.parameter("parameter.csv", &mu)?;

    s.metric("steps", (tr.len() - 1) as f64);
    s.metric("sup_state_norm", sup);
    s.metric("final_state_norm", tr.last_state().map_or(0.0, |x| x.norm()));
    s.metric(
        "max_input_norm",
        tr.inputs().iter().map(|u| u.norm()).fold(0.0, f64::max),
    );
    Ok(())
}

fn identify_run(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let c = &cfg.identify;
    let (mut system, z0) = cfg.identification_system()?;
    let (levels, main, reference) = cfg.identify_levels();
    let rec = identify(
        &mut system,
        z0,
        cfg.integrator.scheme()?,
        c.step,
        c.horizon,
        Some(reference),
        c.record_every,
    )?;
    let tr = rec.trajectory(main);
    guard_divergence(&tr)?;
    out.trajectory("trajectory.csv", &tr)?;
    out.parameter("parameter_true.csv", system.mu_star())?;
    if let Some(mu) = &rec.traces[main].final_estimate {
        out.parameter("parameter_estimate.csv", mu)?;
    }

    let mut w = csv::Writer::from_writer(out.create("sweep.csv")?);
    w.write_record([
        "j",
        "sup_diff_to_reference",
        "final_state_error",
        "mismatch_reduction",
        "final_parameter_error",
    ])?;
    for (e, &j) in levels.iter().enumerate() {
        let t = &rec.traces[e];
        w.write_record(&[
            j.to_string(),
            format!("{:e}", t.sup_diff_to_reference.unwrap_or(f64::NAN)),
            format!("{:e}", t.final_state_error),
            format!("{:e}", rec.mismatch_reduction(e)),
            format!("{:e}", t.parameter_error.last().copied().unwrap_or(f64::NAN)),
        ])?;
    }
    w.flush()?;

    let t = &rec.traces[main];
    let ratio = t.final_state_error / t.initial_state_error;
    let reduction = rec.mismatch_reduction(main);
    s.metric("initial_state_error", t.initial_state_error);
    s.metric("final_state_error", t.final_state_error);
    s.metric("state_error_ratio", ratio);
    s.metric("mismatch_reduction", reduction);
    s.metric(
        "initial_parameter_error",
        t.parameter_error.first().copied().unwrap_or(f64::NAN),
    );
    s.metric(
        "final_parameter_error",
        t.parameter_error.last().copied().unwrap_or(f64::NAN),
    );
    let mut sweep: Vec<(usize, f64)> = c
        .sweep_levels
        .iter()
        .filter(|&&j| j != c.reference_level)
        .map(|&j| {
            let e = levels.iter().position(|&l| l == j).expect("sweep levels are estimated");
            (j, rec.traces[e].sup_diff_to_reference.unwrap_or(f64::NAN))
        })
        .collect();
    sweep.sort_by_key(|&(j, _)| j);
    for &(j, d) in &sweep {
        s.metric(&format!("sup_diff_j{j}"), d);
    }
    s.check("state_error_ratio", ratio <= c.max_state_error_ratio);
    s.check("mismatch_reduction", reduction >= c.min_mismatch_reduction);
    s.check("sweep_decreasing", sweep.windows(2).all(|w| w[1].1 < w[0].1));
    Ok(())
}

fn control_wing(cfg: &ExperimentConfig, s: &mut Summary, out: &mut Outputs) -> Result<()> {
    let c = &cfg.control;
    let (mut system, z0) = cfg.closed_loop_system()?;
    let m = system.core().state_dim();
    let rec = closed_loop(&mut system, z0, cfg.integrator.scheme()?, c.step, c.horizon, c.checks)?;
    let tr = rec.state_trajectory(m);
    guard_divergence(&tr)?;
    out.trajectory("trajectory.csv", &tr)?;
    out.parameter("parameter_estimate.csv", &rec.final_estimate)?;

    let r = &rec.report;
    s.metric("tail_sup", r.tail_sup);
    s.metric("ultimate_constant", r.ultimate_constant);
    s.metric("switch_rate", r.switch_rate);
    s.metric("dissipation_fraction", r.dissipation_fraction);
    s.metric("dissipation_slack", r.dissipation_slack);
    s.metric("sup_residual", r.sup_residual);
    s.metric("final_state_norm", r.final_state_norm);
    s.metric("max_control_norm", r.max_control_norm);
    s.flags.insert("chattering".into(), r.chattering);
    s.check("dissipation", r.dissipation_fraction >= c.min_dissipation_fraction);
    if let Some(expected) = c.expect_chattering {
        s.check("chattering_as_expected", r.chattering == expected);
    }
    Ok(())
}

/// Metric-by-metric difference of two summaries of the same kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: ExperimentKind,
    /// `(a, b, b − a)` for every metric present in either summary.
    pub metrics: BTreeMap<String, [Option<f64>; 3]>,
    /// Flags and checks whose values differ.
    pub changed: Vec<String>,
}

pub fn compare(a: &Summary, b: &Summary) -> Result<Comparison> {
    if a.kind != b.kind {
        return Err(Error::ConfigInvalid(format!(
            "cannot compare a {} run with a {} run",
            a.kind.name(),
            b.kind.name()
        )));
    }
    let mut metrics = BTreeMap::new();
    for key in a.metrics.keys().chain(b.metrics.keys()) {
        let va = a.metrics.get(key).copied().flatten();
        let vb = b.metrics.get(key).copied().flatten();
        let delta = va.zip(vb).map(|(x, y)| y - x);
        metrics.insert(key.clone(), [va, vb, delta]);
    }
    let mut changed = Vec::new();
    for (prefix, ma, mb) in [("flag", &a.flags, &b.flags), ("check", &a.checks, &b.checks)] {
        let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
        for k in keys {
            if ma.get(k) != mb.get(k) {
                changed.push(format!("{prefix}:{k}"));
            }
        }
    }
    Ok(Comparison {
        kind: a.kind,
        metrics,
        changed,
    })
}

/// Output directory used when none is given: `runs/<kind>-seed<seed>`.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", cfg.kind.name(), cfg.seed))
}
