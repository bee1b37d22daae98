//! Report writing: CSV tables (UTF-8, header row, '.' decimal) and summary
//! JSON with the config hash, root seed, and build id embedded.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

use oplab_core::experiments::{
    CylConvergenceReport, DichotomyReport, GaussianCheckReport, TeacherStudentReport,
};
use oplab_core::metrics::NormEstimate;
use oplab_core::training::CompareReport;

pub fn build_id() -> String {
    option_env!("OPLAB_BUILD_ID")
        .unwrap_or(env!("CARGO_PKG_VERSION"))
        .to_string()
}

pub fn config_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub build_id: String,
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    report: &'a T,
}

pub fn write_summary_json<T: Serialize>(
    out_dir: &Path,
    meta: &RunMeta,
    report: &T,
) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}_summary.json", meta.command));
    let doc = Summary { meta, report };
    fs::write(path, serde_json::to_string_pretty(&doc).unwrap())
}

fn open_csv(out_dir: &Path, name: &str, header: &str) -> std::io::Result<fs::File> {
    fs::create_dir_all(out_dir)?;
    let mut f = fs::File::create(out_dir.join(name))?;
    writeln!(f, "{header}")?;
    Ok(f)
}

pub fn write_dichotomy_csv(out_dir: &Path, report: &DichotomyReport) -> std::io::Result<()> {
    let mut f = open_csv(
        out_dir,
        "dichotomy.csv",
        "rank,opnorm_error,opnorm_sampled_min,compact_open_exact,compact_open_sampled,tail_oracle",
    )?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.rank,
            r.opnorm_error,
            r.opnorm_sampled_min,
            r.compact_open_exact,
            r.compact_open_sampled,
            r.tail_oracle
        )?;
    }
    Ok(())
}

pub fn write_gaussian_check_csv(
    out_dir: &Path,
    report: &GaussianCheckReport,
) -> std::io::Result<()> {
    let mut f = open_csv(
        out_dir,
        "gaussian_check.csv",
        "map_index,mc_value,exact_value,rel_deviation",
    )?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{}",
            r.map_index, r.mc_value, r.exact_value, r.rel_deviation
        )?;
    }
    Ok(())
}

pub fn write_cyl_csv(out_dir: &Path, report: &CylConvergenceReport) -> std::io::Result<()> {
    let mut f = open_csv(out_dir, "cyl_convergence.csv", "rank,error,std_error")?;
    for r in &report.rows {
        writeln!(f, "{},{},{}", r.rank, r.error, r.std_error)?;
    }
    Ok(())
}

pub fn write_train_history_csv(
    out_dir: &Path,
    report: &TeacherStudentReport,
) -> std::io::Result<()> {
    let mut f = open_csv(out_dir, "train_history.csv", "iteration,loss")?;
    for (i, loss) in report.report.loss_history.iter().enumerate() {
        writeln!(f, "{i},{loss}")?;
    }
    Ok(())
}

pub fn write_compare_csv(out_dir: &Path, report: &CompareReport) -> std::io::Result<()> {
    let mut f = open_csv(
        out_dir,
        "compare.csv",
        "seed,k_loss,best_loss,held_out_order0,held_out_order1",
    )?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.seed, r.k_loss, r.best_loss, r.held_out_order0, r.held_out_order1
        )?;
    }
    Ok(())
}

/// One metric estimate row: `experiment_id,norm_kind,k,p,r,value,std_error,n`.
pub struct MetricRow {
    pub experiment_id: String,
    pub norm_kind: &'static str,
    pub k: usize,
    pub p: f64,
    pub r: Option<f64>,
    pub estimate: NormEstimate,
}

pub fn write_metrics_csv(out_dir: &Path, rows: &[MetricRow]) -> std::io::Result<()> {
    let mut f = open_csv(
        out_dir,
        "metrics.csv",
        "experiment_id,norm_kind,k,p,r,value,std_error,n",
    )?;
    for row in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            row.experiment_id,
            row.norm_kind,
            row.k,
            row.p,
            row.r.map(|v| v.to_string()).unwrap_or_default(),
            row.estimate.value,
            row.estimate.std_error,
            row.estimate.n_samples
        )?;
    }
    Ok(())
}

pub fn write_verify_csv(
    out_dir: &Path,
    results: &[crate::verify::SuiteResult],
) -> std::io::Result<()> {
    let mut f = open_csv(out_dir, "verify.csv", "suite,passed,n_checks,n_failed")?;
    for s in results {
        let failed = s.checks.iter().filter(|(_, r)| r.is_err()).count();
        writeln!(f, "{},{},{},{}", s.suite, s.passed(), s.checks.len(), failed)?;
    }
    Ok(())
}
