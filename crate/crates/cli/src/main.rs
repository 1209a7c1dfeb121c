use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hystrl_core::experiment::{self, exit, Summary};
use hystrl_core::scenario::{ExperimentConfig, ExperimentKind};
use hystrl_core::Error;

/// Hysteresis approximation, integration and adaptive-control experiments.
///
/// Usage: `hystrl <kind> --config <file> [--out <dir>] [--seed <n>] [--set key=value ...]`,
/// `hystrl compare <summary-a> <summary-b>` or `hystrl --list`.
#[derive(Parser, Debug)]
#[command(name = "hystrl", version, about)]
struct Cli {
    /// Experiment kind, or `compare` followed by two summary.json paths (or run directories).
    #[arg(value_name = "KIND")]
    targets: Vec<String>,

    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (default: runs/<kind>-seed<seed>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,

    /// Override a config field, e.g. `--set control.epsilon=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// List the experiment kinds.
    #[arg(long)]
    list: bool,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("hystrl: {msg}");
    ExitCode::from(code as u8)
}

fn summary_path(p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_dir() {
        p.join("summary.json")
    } else {
        p
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

fn run_compare(cli: &Cli) -> ExitCode {
    let [_, a, b] = cli.targets.as_slice() else {
        return fail(exit::CONFIG, "compare needs exactly two summary paths");
    };
    let load = |p: &str| Summary::read(&summary_path(p)).map_err(|e| format!("{p}: {e}"));
    let (a, b) = match (load(a), load(b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(exit::CONFIG, e),
    };
    let cmp = match experiment::compare(&a, &b) {
        Ok(c) => c,
        Err(e) => return fail(experiment::exit_code(&e), e),
    };
    println!("kind {}", cmp.kind.name());
    println!("{:<28} {:>14} {:>14} {:>14}", "metric", "a", "b", "b - a");
    for (k, [va, vb, d]) in &cmp.metrics {
        println!("{k:<28} {:>14} {:>14} {:>14}", fmt(*va), fmt(*vb), fmt(*d));
    }
    for c in &cmp.changed {
        println!("changed {c}");
    }
    if let Some(dir) = &cli.out {
        let written = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| std::fs::File::create(dir.join("compare.json")).map_err(Error::from))
            .and_then(|f| serde_json::to_writer_pretty(f, &cmp).map_err(Error::from));
        if let Err(e) = written {
            return fail(exit::FAILURE, e);
        }
    }
    ExitCode::SUCCESS
}

fn run_kind(cli: &Cli, kind: ExperimentKind) -> ExitCode {
    let Some(path) = &cli.config else {
        return fail(exit::CONFIG, "--config <file> is required");
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(exit::CONFIG, format!("{}: {e}", path.display())),
    };
    let mut overrides = cli.overrides.clone();
    overrides.push(format!("kind=\"{}\"", kind.name()));
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match ExperimentConfig::from_json_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(exit::CONFIG, e),
    };
    let out = cli.out.clone().unwrap_or_else(|| experiment::default_out_dir(&cfg));
    let summary = match experiment::run(&cfg, &out) {
        Ok(s) => s,
        Err(e) => return fail(experiment::exit_code(&e), e),
    };
    println!("{} seed {} -> {}", kind.name(), cfg.seed, out.display());
    for (k, v) in &summary.metrics {
        println!("  {k:<28} {}", fmt(*v));
    }
    for (k, v) in &summary.flags {
        println!("  {k:<28} {v}");
    }
    for (k, ok) in &summary.checks {
        println!("  check {k:<22} {}", if *ok { "pass" } else { "FAIL" });
    }
    println!("  wall clock {:.3} s", summary.wall_clock_seconds);
    if summary.passed() {
        ExitCode::SUCCESS
    } else {
        fail(
            exit::CHECK_FAILED,
            format!("checks failed: {}", summary.failed_checks().join(", ")),
        )
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        for k in ExperimentKind::ALL {
            println!("{:<20} {}", k.name(), k.describe());
        }
        return ExitCode::SUCCESS;
    }
    let Some(first) = cli.targets.first() else {
        return fail(exit::CONFIG, "missing experiment kind (see --list)");
    };
    if first == "compare" {
        return run_compare(&cli);
    }
    if cli.targets.len() > 1 {
        return fail(exit::CONFIG, format!("unexpected argument `{}`", cli.targets[1]));
    }
    match ExperimentKind::parse(first) {
        Some(kind) => run_kind(&cli, kind),
        None => fail(exit::CONFIG, format!("unknown kind `{first}` (see --list)")),
    }
}
