//! `oplab`: experiment runner and invariant harness.
//!
//! Subcommands: `verify`, `dichotomy`, `gaussian-check`, `cyl-convergence`,
//! `train`, `compare`. Outputs are CSV tables plus a summary JSON embedding
//! the config hash, root seed, and build id; reruns of the same config
//! reproduce all numeric columns bit-exactly.
//!
//! Exit codes: 0 success, 1 property failure, 2 config error.

mod config;
mod output;
mod verify;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{ExperimentConfig, InputSection, MetricKind, MetricRequest};
use oplab_core::measures::{GaussianSpec, MeasureSampler};
use oplab_core::metrics;
use oplab_core::operator::Operator;
use output::{MetricRow, RunMeta};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "oplab", version, about = "Operator-learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: config `out` or `out/`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (default: config `seed` or 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size for Monte-Carlo estimators (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant property suites of every module.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Corrupt an internal table to demonstrate fault detection.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Identity target vs rank-limited models: operator-norm error pins at 1
    /// while the compact-open error decays.
    Dichotomy {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo Gaussian norms of random maps vs the exact
    /// Hilbert-Schmidt values.
    GaussianCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Weighted Sobolev error of rank-truncated approximations over a rank
    /// grid.
    CylConvergence {
        #[command(flatten)]
        common: Common,
    },
    /// Teacher-student Sobolev-loss training.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Matched k=0 / k=1 training comparison.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

enum CliError {
    /// Bad config file or inconsistent sections -> exit 2.
    Config(String),
    /// Module or postcondition failure -> exit 1.
    Run(String),
}

impl From<oplab_core::Error> for CliError {
    fn from(e: oplab_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

struct Loaded {
    config: ExperimentConfig,
    hash: String,
    seed: u64,
    out_dir: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let (config, hash) = match &common.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let config: ExperimentConfig = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (config, output::config_hash(&bytes))
        }
        None => {
            let config = ExperimentConfig::default();
            let canonical = serde_json::to_vec(&config).expect("default config serializes");
            (config, output::config_hash(&canonical))
        }
    };
    if let Some(workers) = common.workers {
        // Ignore failure when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let seed = common.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let out_dir = common
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded {
        config,
        hash,
        seed,
        out_dir,
    })
}

fn meta(command: &str, loaded: &Loaded) -> RunMeta {
    RunMeta {
        command: command.to_string(),
        config_hash: loaded.hash.clone(),
        seed: loaded.seed,
        build_id: output::build_id(),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Verify {
            common,
            inject_fault,
        } => cmd_verify(&common, inject_fault.as_deref()),
        Command::Dichotomy { common } => cmd_dichotomy(&common),
        Command::GaussianCheck { common } => cmd_gaussian_check(&common),
        Command::CylConvergence { common } => cmd_cyl_convergence(&common),
        Command::Train { common } => cmd_train(&common),
        Command::Compare { common } => cmd_compare(&common),
    }
}

fn cmd_verify(common: &Common, inject_fault: Option<&str>) -> Result<bool, CliError> {
    let loaded = load(common)?;
    match inject_fault {
        None => {}
        Some("jets-activation") => oplab_core::jets::inject_activation_fault(true),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown fault injection '{other}' (expected jets-activation)"
            )))
        }
    }
    let results = verify::run_all();
    oplab_core::jets::inject_activation_fault(false);

    println!("{:<10} {:<40} {}", "suite", "check", "status");
    for suite in &results {
        for (name, outcome) in &suite.checks {
            match outcome {
                Ok(()) => println!("{:<10} {:<40} pass", suite.suite, name),
                Err(msg) => println!("{:<10} {:<40} FAIL: {msg}", suite.suite, name),
            }
        }
    }
    let all_pass = results.iter().all(|s| s.passed());
    output::write_verify_csv(&loaded.out_dir, &results)?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|s| {
            serde_json::json!({
                "suite": s.suite,
                "passed": s.passed(),
                "failed_checks": s
                    .checks
                    .iter()
                    .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    output::write_summary_json(&loaded.out_dir, &meta("verify", &loaded), &summary)?;
    println!(
        "verify: {} ({} suites, results in {})",
        if all_pass { "pass" } else { "FAIL" },
        results.len(),
        loaded.out_dir.display()
    );
    Ok(all_pass)
}

fn cmd_dichotomy(common: &Common) -> Result<bool, CliError> {
    let loaded = load(common)?;
    let params = loaded.config.dichotomy_params().map_err(CliError::Config)?;
    let report = oplab_core::experiments::run_dichotomy(&params, loaded.seed)?;
    println!(
        "{:<6} {:<22} {:<22} {}",
        "rank", "opnorm_order1", "compact_open_exact", "compact_open_sampled"
    );
    for r in &report.rows {
        println!(
            "{:<6} {:<22} {:<22} {}",
            r.rank, r.opnorm_error, r.compact_open_exact, r.compact_open_sampled
        );
    }
    let violations = report.violations();
    for v in &violations {
        eprintln!("violation: {v}");
    }
    output::write_dichotomy_csv(&loaded.out_dir, &report)?;
    output::write_summary_json(&loaded.out_dir, &meta("dichotomy", &loaded), &report)?;
    Ok(violations.is_empty())
}

fn cmd_gaussian_check(common: &Common) -> Result<bool, CliError> {
    let loaded = load(common)?;
    let (params, min_within) = loaded
        .config
        .gaussian_check_params()
        .map_err(CliError::Config)?;
    let report = oplab_core::experiments::run_gaussian_check(&params, loaded.seed)?;
    println!(
        "gaussian-check: {}/{} maps within {:.3}% (min required {})",
        report.n_within_tolerance,
        report.rows.len(),
        100.0 * report.tolerance,
        min_within
    );
    output::write_gaussian_check_csv(&loaded.out_dir, &report)?;
    output::write_summary_json(&loaded.out_dir, &meta("gaussian_check", &loaded), &report)?;
    Ok(report.n_within_tolerance >= min_within.min(report.rows.len()))
}

fn cmd_cyl_convergence(common: &Common) -> Result<bool, CliError> {
    let loaded = load(common)?;
    let params = loaded.config.cyl_params().map_err(CliError::Config)?;
    let report = oplab_core::experiments::run_cyl_convergence(&params, loaded.seed)?;
    println!("{:<6} {:<22} {}", "rank", "error", "std_error");
    for r in &report.rows {
        println!("{:<6} {:<22} {}", r.rank, r.error, r.std_error);
    }
    let violations = report.violations(params.dim);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    output::write_cyl_csv(&loaded.out_dir, &report)?;
    output::write_summary_json(&loaded.out_dir, &meta("cyl_convergence", &loaded), &report)?;
    Ok(violations.is_empty())
}

fn measure_for_metrics(
    config: &ExperimentConfig,
    dim: usize,
    k: usize,
) -> Result<MeasureSampler, CliError> {
    let (exponent, mass) = match &config.measure {
        None => (2.0, 1.0),
        Some(m) => {
            let InputSection::Gaussian { eigenvalues } = &m.input;
            (
                eigenvalues.power_exponent().map_err(CliError::Config)?,
                m.mass,
            )
        }
    };
    let gamma = GaussianSpec::power(dim, exponent, 1.0)?;
    let mu = MeasureSampler::new(
        oplab_core::measures::InputMeasure::Gaussian(gamma.clone()),
        oplab_core::measures::DirectionLaw::Iid(gamma),
        k,
        mass,
    )?;
    Ok(mu)
}

fn run_metric_requests(
    requests: &[MetricRequest],
    config: &ExperimentConfig,
    experiment_id: &str,
    f: &dyn Operator,
    g: &dyn Operator,
    seed: u64,
) -> Result<Vec<MetricRow>, CliError> {
    let mut rows = Vec::with_capacity(requests.len());
    for (idx, req) in requests.iter().enumerate() {
        let mu = measure_for_metrics(config, f.dim_in(), req.k)?;
        let estimate = match req.norm_kind {
            MetricKind::Bastiani => {
                metrics::bastiani_sobolev_error(f, g, &mu, req.k, req.p, req.n, seed + idx as u64)?
            }
            MetricKind::Opnorm => {
                metrics::opnorm_sobolev_error(f, g, &mu, req.k, req.p, req.n, seed + idx as u64)?
            }
            MetricKind::Tilde => {
                metrics::tilde_sobolev_error(f, g, &mu, req.k, req.p, req.n, seed + idx as u64)?
            }
            MetricKind::Mixed => metrics::mixed_sobolev_error(
                f,
                g,
                &mu,
                req.k,
                req.p,
                req.r.unwrap_or(req.p),
                req.n,
                req.n_inner,
                seed + idx as u64,
            )?,
        };
        rows.push(MetricRow {
            experiment_id: experiment_id.to_string(),
            norm_kind: req.norm_kind.as_str(),
            k: req.k,
            p: req.p,
            r: match req.norm_kind {
                MetricKind::Mixed => Some(req.r.unwrap_or(req.p)),
                _ => req.r,
            },
            estimate,
        });
    }
    Ok(rows)
}

fn cmd_train(common: &Common) -> Result<bool, CliError> {
    let loaded = load(common)?;
    let params = loaded
        .config
        .teacher_student_params()
        .map_err(CliError::Config)?;
    let (report, best, teacher) =
        oplab_core::experiments::run_teacher_student(&params, loaded.seed)?;
    println!(
        "train: best loss {} at iteration {} ({}); held-out errors {:?}",
        report.report.best_loss,
        report.report.best_iteration,
        if report.recovered {
            "recovered"
        } else {
            "NOT recovered"
        },
        report.report.final_errors
    );
    output::write_train_history_csv(&loaded.out_dir, &report)?;
    output::write_summary_json(&loaded.out_dir, &meta("train", &loaded), &report)?;
    if !loaded.config.metrics.is_empty() {
        let rows = run_metric_requests(
            &loaded.config.metrics,
            &loaded.config,
            "train",
            &teacher,
            &best,
            loaded.seed,
        )?;
        output::write_metrics_csv(&loaded.out_dir, &rows)?;
    }
    Ok(report.recovered)
}

fn cmd_compare(common: &Common) -> Result<bool, CliError> {
    let loaded = load(common)?;
    let params = loaded.config.compare_params().map_err(CliError::Config)?;
    let report = oplab_core::experiments::run_compare(&params)?;
    println!(
        "{:<8} {:<8} {:<22} {:<22} {}",
        "seed", "k_loss", "best_loss", "held_out_order0", "held_out_order1"
    );
    for r in &report.rows {
        println!(
            "{:<8} {:<8} {:<22} {:<22} {}",
            r.seed, r.k_loss, r.best_loss, r.held_out_order0, r.held_out_order1
        );
    }
    println!("median order-1 error ratio (k1/k0): {}", report.median_ratio);
    output::write_compare_csv(&loaded.out_dir, &report)?;
    output::write_summary_json(&loaded.out_dir, &meta("compare", &loaded), &report)?;
    Ok(true)
}
