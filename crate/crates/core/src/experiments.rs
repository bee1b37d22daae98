//! Experiment drivers: the rank dichotomy, the Gaussian Hilbert-Schmidt
//! identity check, cylindrical-approximation convergence, teacher-student
//! training, and the derivative-informed training comparison. The
//! command-line runner parses configs into these parameter structs and
//! serializes the returned reports.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::eda::{hgno_new, EDAModel};
use crate::error::Result;
use crate::jets::{Activation, NetParams};
use crate::mc;
use crate::measures::{GaussianSpec, MeasureSampler};
use crate::metrics::{
    bastiani_sobolev_error, compact_open_linear_exact, compact_open_seminorm,
    gaussian_hs_norm, opnorm_order1_sampled_min, opnorm_sobolev_error, NormEstimate,
};
use crate::operator::Operator;
use crate::space::{CompactShape, CompactSpec, Decoder, Encoder};
use crate::targets::{self, identity_target, TargetSpec};
use crate::training::{self, CompareReport, TrainConfig, TrainReport};

fn default_dim() -> usize {
    crate::space::DEFAULT_AMBIENT_DIM
}

fn default_eigen_exponent() -> f64 {
    2.0
}

// ---------------------------------------------------------------------------
// Dichotomy
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DichotomyParams {
    pub dim: usize,
    pub ranks: Vec<usize>,
    /// Scale of the direction-compact radii `c_j = c0 / j^2`.
    pub c0: f64,
    /// Input covariance decay for the operator-norm column.
    pub eigen_exponent: f64,
    /// Draws for the sampled compact-open sup.
    pub n_sup: usize,
    /// Sampled inputs for the pointwise operator-norm minimum.
    pub n_min: usize,
}

impl Default for DichotomyParams {
    fn default() -> Self {
        DichotomyParams {
            dim: default_dim(),
            ranks: vec![8, 16, 32],
            c0: 1.0,
            eigen_exponent: 2.0,
            n_sup: 4000,
            n_min: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DichotomyRow {
    pub rank: usize,
    /// Order-1 operator-norm Sobolev error of identity vs the rank-limited
    /// projection model.
    pub opnorm_error: f64,
    /// Minimum over sampled inputs of the pointwise order-1 operator norm.
    pub opnorm_sampled_min: f64,
    /// Exact compact-open order-1 error over the direction compact.
    pub compact_open_exact: f64,
    /// Sampled lower bound of the same sup.
    pub compact_open_sampled: f64,
    /// Independent tail-sum oracle `sqrt(sum_{j>rank} c_j^2)`.
    pub tail_oracle: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub dim: usize,
    pub seed: u64,
    pub rows: Vec<DichotomyRow>,
}

impl DichotomyReport {
    /// Postcondition violations; empty means the dichotomy holds as stated.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for row in &self.rows {
            if row.rank < self.dim && row.opnorm_sampled_min < 1.0 - 1e-9 {
                out.push(format!(
                    "rank {}: pointwise operator-norm error {} < 1 - 1e-9",
                    row.rank, row.opnorm_sampled_min
                ));
            }
            if (row.compact_open_exact - row.tail_oracle).abs() > 1e-10 {
                out.push(format!(
                    "rank {}: exact compact-open {} deviates from tail oracle {}",
                    row.rank, row.compact_open_exact, row.tail_oracle
                ));
            }
            if row.compact_open_sampled > row.compact_open_exact * (1.0 + 1e-12) {
                out.push(format!(
                    "rank {}: sampled sup {} exceeds exact value {}",
                    row.rank, row.compact_open_sampled, row.compact_open_exact
                ));
            }
        }
        for w in self.rows.windows(2) {
            if w[1].compact_open_exact >= w[0].compact_open_exact {
                out.push(format!(
                    "compact-open error not decreasing between ranks {} and {}",
                    w[0].rank, w[1].rank
                ));
            }
        }
        out
    }
}

/// The rank-limited projection model: projection pair with an identity core.
pub fn projection_model(dim: usize, rank: usize) -> Result<EDAModel> {
    EDAModel::new(
        Encoder::projection(rank, dim)?,
        NetParams::identity(rank),
        Decoder::projection(rank, dim)?,
    )
}

/// Identity target vs rank-limited models: the order-1 operator-norm error
/// pins at 1 for every deficient rank while the compact-open error decays
/// with the tail of the direction compact.
pub fn run_dichotomy(params: &DichotomyParams, seed: u64) -> Result<DichotomyReport> {
    let dim = params.dim;
    let target = identity_target(dim);
    let nu = MeasureSampler::gaussian(
        GaussianSpec::power(dim, params.eigen_exponent, 1.0)?,
        GaussianSpec::power(dim, params.eigen_exponent, 1.0)?,
        0,
    )?;
    let k_dirs = CompactSpec::inverse_square(params.c0, dim, CompactShape::Box)?;
    let k_input = CompactSpec::inverse_square(params.c0, dim, CompactShape::Box)?;

    let mut rows = Vec::with_capacity(params.ranks.len());
    for &rank in &params.ranks {
        let model = projection_model(dim, rank)?;
        let opnorm = opnorm_sobolev_error(&target, &model, &nu, 1, 2.0, params.n_min, seed)?;
        let opnorm_min =
            opnorm_order1_sampled_min(&target, &model, &nu, params.n_min, seed ^ 0x11)?;
        let exact = compact_open_linear_exact(&target, &model, &k_dirs)?
            .expect("projection model difference is diagonal and constant");
        let sampled =
            compact_open_seminorm(&target, &model, &k_input, &k_dirs, 1, params.n_sup, seed)?;
        let tail_oracle = k_dirs.tail_bound(rank);
        rows.push(DichotomyRow {
            rank,
            opnorm_error: opnorm.value,
            opnorm_sampled_min: opnorm_min,
            compact_open_exact: exact,
            compact_open_sampled: sampled.value,
            tail_oracle,
        });
    }
    Ok(DichotomyReport {
        dim,
        seed,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Gaussian Hilbert-Schmidt identity
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianCheckParams {
    pub dim: usize,
    pub eigen_exponent: f64,
    pub n_maps: usize,
    pub map_rank: usize,
    pub n_draws: usize,
    /// Acceptance threshold on the relative deviation.
    pub tolerance: f64,
}

impl Default for GaussianCheckParams {
    fn default() -> Self {
        GaussianCheckParams {
            dim: default_dim(),
            eigen_exponent: default_eigen_exponent(),
            n_maps: 20,
            map_rank: 8,
            n_draws: 200_000,
            tolerance: 0.02,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianCheckRow {
    pub map_index: usize,
    pub mc_value: f64,
    pub exact_value: f64,
    pub rel_deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<GaussianCheckRow>,
    pub n_within_tolerance: usize,
}

/// Monte-Carlo `L^2(gamma)` norm of random low-rank maps against the exact
/// `||L Q^{1/2}||_HS`.
pub fn run_gaussian_check(params: &GaussianCheckParams, seed: u64) -> Result<GaussianCheckReport> {
    let gamma = GaussianSpec::power(params.dim, params.eigen_exponent, 1.0)?;
    let mut rows = Vec::with_capacity(params.n_maps);
    for idx in 0..params.n_maps {
        let mut rng = mc::stream(seed ^ 0xA1B2, idx as u64);
        let scale = 1.0 / (params.map_rank as f64).sqrt();
        let a = DMatrix::from_fn(params.dim, params.map_rank, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        let b = DMatrix::from_fn(params.map_rank, params.dim, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        let l = &a * &b;
        let exact = gaussian_hs_norm(&l, &gamma)?.value;
        let (means, _) = mc::mean_stderr_vec(params.n_draws, seed ^ (idx as u64), 1, |r, out| {
            let h = gamma.draw(r);
            out[0] = (&l * h.as_vector()).norm_squared();
        });
        let mc_value = means[0].sqrt();
        rows.push(GaussianCheckRow {
            map_index: idx,
            mc_value,
            exact_value: exact,
            rel_deviation: (mc_value - exact).abs() / exact,
        });
    }
    let n_within = rows
        .iter()
        .filter(|r| r.rel_deviation <= params.tolerance)
        .count();
    Ok(GaussianCheckReport {
        seed,
        tolerance: params.tolerance,
        rows,
        n_within_tolerance: n_within,
    })
}

// ---------------------------------------------------------------------------
// Cylindrical convergence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CylConvergenceParams {
    pub dim: usize,
    pub ranks: Vec<usize>,
    pub target: TargetSpec,
    pub eigen_exponent: f64,
    pub k: usize,
    pub p: f64,
    pub n: usize,
}

fn default_quadratic_spec() -> TargetSpec {
    TargetSpec {
        name: "quadratic".into(),
        weights: None,
        weight_exponent: None,
        terms: Some(4),
        scale: Some(0.5),
        seed: Some(7),
        phi: None,
        quad_points: None,
    }
}

impl Default for CylConvergenceParams {
    fn default() -> Self {
        CylConvergenceParams {
            dim: default_dim(),
            ranks: vec![4, 8, 16, 32, 64],
            target: default_quadratic_spec(),
            eigen_exponent: default_eigen_exponent(),
            k: 1,
            p: 2.0,
            n: 20_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylRow {
    pub rank: usize,
    pub error: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylConvergenceReport {
    pub seed: u64,
    pub rows: Vec<CylRow>,
}

impl CylConvergenceReport {
    pub fn violations(&self, full_rank: usize) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.rows.windows(2) {
            let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            if w[1].error > w[0].error + slack {
                out.push(format!(
                    "error increased from rank {} to {}: {} -> {}",
                    w[0].rank, w[1].rank, w[0].error, w[1].error
                ));
            }
        }
        if let Some(last) = self.rows.last() {
            if last.rank == full_rank && last.error.abs() > 1e-12 {
                out.push(format!(
                    "full-rank error {} exceeds 1e-12",
                    last.error
                ));
            }
        }
        out
    }
}

/// Weighted Sobolev error of `F_{d,d}` against `F` over a rank grid, with
/// common random numbers across ranks.
pub fn run_cyl_convergence(
    params: &CylConvergenceParams,
    seed: u64,
) -> Result<CylConvergenceReport> {
    let target: Arc<dyn Operator> = targets::from_registry(&params.target, params.dim)?;
    let gamma = GaussianSpec::power(params.dim, params.eigen_exponent, 1.0)?;
    let mu = MeasureSampler::gaussian(gamma.clone(), gamma, params.k)?;
    let mut rows = Vec::with_capacity(params.ranks.len());
    for &rank in &params.ranks {
        let cyl = targets::cylindrical_approximation(target.clone(), rank, rank)?;
        let est: NormEstimate = bastiani_sobolev_error(
            target.as_ref(),
            &cyl,
            &mu,
            params.k,
            params.p,
            params.n,
            seed,
        )?;
        rows.push(CylRow {
            rank,
            error: est.value,
            std_error: est.std_error,
        });
    }
    Ok(CylConvergenceReport { seed, rows })
}

// ---------------------------------------------------------------------------
// Teacher-student training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherStudentParams {
    pub dim: usize,
    pub d: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub eigen_exponent: f64,
    /// Scale of the Gaussian perturbation applied to the teacher parameters
    /// to produce the student initialization.
    pub perturbation: f64,
    pub loss_threshold: f64,
    pub train: TrainConfig,
}

impl Default for TeacherStudentParams {
    fn default() -> Self {
        TeacherStudentParams {
            dim: 16,
            d: 4,
            m: 4,
            hidden: vec![8],
            activation: Activation::Tanh,
            eigen_exponent: 2.0,
            perturbation: 0.02,
            loss_threshold: 1e-6,
            train: TrainConfig {
                k_loss: 1,
                p: 2.0,
                n_train: 64,
                n_dirs: 1,
                optimizer: training::OptimizerKind::MomentumGd,
                step_size: 0.2,
                momentum: 0.9,
                iterations: 800,
                seeds: vec![1],
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherStudentReport {
    pub seed: u64,
    pub loss_threshold: f64,
    pub recovered: bool,
    pub report: TrainReport,
}

/// Plants a target realized by the student's own architecture and trains a
/// perturbed initialization back onto it. Returns the report together with
/// the best student model and the teacher.
pub fn run_teacher_student(
    params: &TeacherStudentParams,
    seed: u64,
) -> Result<(TeacherStudentReport, EDAModel, EDAModel)> {
    let teacher = hgno_new(
        params.dim,
        params.d,
        params.m,
        &params.hidden,
        params.activation,
        seed,
    )?;
    let mut rng = mc::stream(seed, u64::MAX - 1);
    let mut flat = teacher.net().params_flat();
    for w in flat.iter_mut() {
        *w += params.perturbation * rng.sample::<f64, _>(StandardNormal);
    }
    let student = teacher.with_net(teacher.net().with_params_flat(&flat)?)?;
    let gamma = GaussianSpec::power(params.dim, params.eigen_exponent, 1.0)?;
    let mu = MeasureSampler::gaussian(gamma.clone(), gamma, params.train.k_loss.max(1))?;
    let (best, report) = training::train(&params.train, &student, &teacher, &mu, seed)?;
    let report = TeacherStudentReport {
        seed,
        loss_threshold: params.loss_threshold,
        recovered: report.best_loss <= params.loss_threshold,
        report,
    };
    Ok((report, best, teacher))
}

// ---------------------------------------------------------------------------
// Derivative-informed comparison
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareParams {
    pub dim: usize,
    pub d: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub eigen_exponent: f64,
    pub target: TargetSpec,
    pub train: TrainConfig,
}

impl Default for CompareParams {
    fn default() -> Self {
        CompareParams {
            dim: 16,
            d: 8,
            m: 8,
            hidden: vec![16],
            activation: Activation::Tanh,
            eigen_exponent: 2.0,
            target: default_quadratic_spec(),
            train: TrainConfig {
                k_loss: 1,
                p: 2.0,
                n_train: 256,
                n_dirs: 1,
                optimizer: training::OptimizerKind::MomentumGd,
                step_size: 0.05,
                momentum: 0.9,
                iterations: 300,
                seeds: vec![1, 2, 3],
            },
        }
    }
}

/// Matched `k_loss = 0` / `k_loss = 1` training runs at equal sample budget.
pub fn run_compare(params: &CompareParams) -> Result<CompareReport> {
    let target = targets::from_registry(&params.target, params.dim)?;
    let gamma = GaussianSpec::power(params.dim, params.eigen_exponent, 1.0)?;
    let mu = MeasureSampler::gaussian(gamma.clone(), gamma, 1)?;
    let init = |seed: u64| {
        hgno_new(
            params.dim,
            params.d,
            params.m,
            &params.hidden,
            params.activation,
            seed,
        )
    };
    training::compare_k0_k1(&params.train, &init, target.as_ref(), &mu)
}
