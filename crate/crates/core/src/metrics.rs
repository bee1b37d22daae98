//! Error functionals between operators: compact-open seminorms, the
//! operator-norm weighted Sobolev error, evaluation-style (Bastiani) weighted
//! Sobolev errors, mixed `(p,r)` norms, restricted-subset norms, and exact
//! Gaussian Hilbert-Schmidt norms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc;
use crate::measures::{GaussianSpec, MeasureSampler};
use crate::operator::{
    difference_bilinear, difference_jacobian, Bilinear, Operator,
};
use crate::space::{Coeffs, CompactShape, CompactSpec};

/// Power-iteration budget for order-2 operator norms.
const POWER_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-8;
const POWER_STARTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    McMeanPower,
    SampledSup,
    Exact,
}

/// A norm or seminorm estimate.
///
/// `std_error` is the Monte-Carlo standard error for `mc_mean_power`, the gap
/// between the two largest sampled values for `sampled_sup` (a resolution
/// proxy; a sampled sup is a lower bound of the true sup), and exactly zero
/// for `exact`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub kind: EstimateKind,
}

impl NormEstimate {
    pub fn exact(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("exact norm value"));
        }
        Ok(NormEstimate {
            value,
            std_error: 0.0,
            n_samples: 0,
            kind: EstimateKind::Exact,
        })
    }

    pub fn mc_mean_power(value: f64, std_error: f64, n_samples: usize) -> Result<Self> {
        if !value.is_finite() || !std_error.is_finite() {
            return Err(Error::NonFinite("monte-carlo estimate"));
        }
        Ok(NormEstimate {
            value,
            std_error,
            n_samples,
            kind: EstimateKind::McMeanPower,
        })
    }

    pub fn sampled_sup(value: f64, resolution: f64, n_samples: usize) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("sampled sup"));
        }
        Ok(NormEstimate {
            value,
            std_error: resolution,
            n_samples,
            kind: EstimateKind::SampledSup,
        })
    }
}

/// `sqrt(se_a^2 + se_b^2)`: tolerance scale for comparing two estimates.
pub fn joint_stderr(a: &NormEstimate, b: &NormEstimate) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}

// ---------------------------------------------------------------------------
// Shared evaluation helpers
// ---------------------------------------------------------------------------

fn check_dims(f: &dyn Operator, g: &dyn Operator) -> Result<()> {
    if f.dim_in() != g.dim_in() || f.dim_out() != g.dim_out() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: g.dim_in(),
            context: "operator pair dims",
        });
    }
    Ok(())
}

fn check_orders(f: &dyn Operator, g: &dyn Operator, k: usize) -> Result<()> {
    for op in [f, g] {
        if let Some(max) = op.max_order() {
            if k > max {
                return Err(Error::OrderUnsupported { order: k, max });
            }
        }
    }
    Ok(())
}

/// `|D^i(F-G)(x)(dirs)|_Y` with `i = dirs.len()`.
fn diff_eval(f: &dyn Operator, g: &dyn Operator, x: &Coeffs, dirs: &[Coeffs]) -> f64 {
    let df = f.derivative(x, dirs).expect("orders and dims pre-validated");
    let dg = g.derivative(x, dirs).expect("orders and dims pre-validated");
    df.sub(&dg).norm()
}

// ---------------------------------------------------------------------------
// Compact-open seminorm
// ---------------------------------------------------------------------------

/// Sampled sup over `x in K`, `h^j in K'` of `|D^i(F-G)(x)(h^1..h^i)|`.
/// A lower bound of the true sup; labeled `sampled_sup`.
pub fn compact_open_seminorm(
    f: &dyn Operator,
    g: &dyn Operator,
    k_input: &CompactSpec,
    k_dirs: &CompactSpec,
    order: usize,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    check_dims(f, g)?;
    check_orders(f, g, order)?;
    if k_input.dim() != f.dim_in() || k_dirs.dim() != f.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: k_input.dim(),
            context: "compact set dimension",
        });
    }
    // Track the two largest values for a resolution proxy.
    let values = {
        let n_batches = n.div_ceil(mc::BATCH);
        let mut tops: Vec<(f64, f64)> = Vec::with_capacity(n_batches);
        use rayon::prelude::*;
        (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = mc::stream(seed, b as u64);
                let count = mc::BATCH.min(n - b * mc::BATCH);
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for _ in 0..count {
                    let x = k_input.draw(&mut rng);
                    let dirs: Vec<Coeffs> = (0..order).map(|_| k_dirs.draw(&mut rng)).collect();
                    let v = diff_eval(f, g, &x, &dirs);
                    if v > best {
                        second = best;
                        best = v;
                    } else if v > second {
                        second = v;
                    }
                }
                (best, second)
            })
            .collect_into_vec(&mut tops);
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for (a, b) in tops {
            for v in [a, b] {
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
        }
        (best, second)
    };
    let resolution = if values.1.is_finite() {
        (values.0 - values.1).max(0.0)
    } else {
        0.0
    };
    NormEstimate::sampled_sup(values.0, resolution, n)
}

/// Exact weighted operator norm of a constant-in-`x` first-derivative
/// difference over the direction compact: available when the difference
/// Jacobian is verifiably independent of `x`, and (for box sets) diagonal.
///
/// Box: `sup_{|h_j|<=c_j} |M h| = sqrt(sum (m_jj c_j)^2)` for diagonal `M`.
/// Ellipsoid: the largest singular value of `M diag(c)` for any `M`.
pub fn compact_open_linear_exact(
    f: &dyn Operator,
    g: &dyn Operator,
    k_dirs: &CompactSpec,
) -> Result<Option<f64>> {
    check_dims(f, g)?;
    check_orders(f, g, 1)?;
    let dim = f.dim_in();
    let zero = Coeffs::zeros(dim);
    let m = difference_jacobian(f, g, &zero)?;

    let certified = f.derivative_constant_in_x(1) && g.derivative_constant_in_x(1);
    if !certified {
        // Empirical linearity check at two displaced points.
        let mut rng = mc::stream(0xC0FFEE, 0);
        let scale = m.norm().max(1.0);
        for _ in 0..2 {
            let x = Coeffs::from_vec(
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            );
            let h = Coeffs::from_vec(
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            );
            let dh = f.derivative(&x, std::slice::from_ref(&h))?
                .sub(&g.derivative(&x, std::slice::from_ref(&h))?);
            let want = Coeffs::from(&m * h.as_vector());
            if dh.sub(&want).norm() > 1e-10 * scale * h.norm() {
                return Ok(None);
            }
        }
    }

    match k_dirs.shape() {
        CompactShape::Box => {
            let max_abs = m.amax();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j && m[(i, j)].abs() > 1e-12 * max_abs.max(1e-300) {
                        return Ok(None);
                    }
                }
            }
            let mut acc = 0.0;
            for j in 0..m.ncols().min(m.nrows()) {
                let v = m[(j, j)] * k_dirs.radii()[j];
                acc += v * v;
            }
            Ok(Some(acc.sqrt()))
        }
        CompactShape::Ellipsoid => {
            let mut weighted = m.clone();
            for j in 0..weighted.ncols() {
                let c = k_dirs.radii()[j];
                for i in 0..weighted.nrows() {
                    weighted[(i, j)] *= c;
                }
            }
            Ok(Some(weighted.svd(false, false).singular_values[0]))
        }
    }
}

// ---------------------------------------------------------------------------
// Operator-norm weighted Sobolev error
// ---------------------------------------------------------------------------

/// Largest singular value of the first-derivative difference at `x`.
fn opnorm_order1(f: &dyn Operator, g: &dyn Operator, x: &Coeffs) -> f64 {
    difference_jacobian(f, g, x)
        .expect("dims pre-validated")
        .svd(false, false)
        .singular_values[0]
}

/// Operator norm of a symmetric vector-valued bilinear map by higher-order
/// power iteration: alternately aligns the output functional and the input
/// direction. Errors when no start converges within the budget.
pub fn bilinear_operator_norm(b: &Bilinear, seed: u64) -> Result<f64> {
    let frob = b.weighted_frobenius(&vec![1.0; b.dim_in()]);
    if frob == 0.0 {
        return Ok(0.0);
    }
    let mut best: Option<f64> = None;
    let mut last_change = f64::INFINITY;
    for start in 0..POWER_STARTS {
        let mut rng = mc::stream(seed, start as u64);
        let mut h = DVector::from_fn(b.dim_in(), |_, _| rng.sample::<f64, _>(StandardNormal));
        h /= h.norm();
        let mut lambda = 0.0f64;
        let mut converged = false;
        for _ in 0..POWER_ITERS {
            let v = b.apply(&h, &h);
            let vn = v.norm();
            if vn == 0.0 {
                break;
            }
            let y = v / vn;
            let m = b.contract_output(&y);
            let mh = &m * &h;
            let mhn = mh.norm();
            if mhn == 0.0 {
                break;
            }
            h = mh / mhn;
            let new_lambda = b.apply(&h, &h).norm();
            last_change = (new_lambda - lambda).abs();
            lambda = new_lambda;
            if last_change <= POWER_TOL * lambda.max(1.0) {
                converged = true;
                break;
            }
        }
        if converged {
            best = Some(best.map_or(lambda, |b: f64| b.max(lambda)));
        }
    }
    best.ok_or(Error::PowerIterationDiverged {
        iterations: POWER_ITERS,
        last_change,
    })
}

/// `( max_{i<=k} int ||D^i(F-G)(x)||_op^p dnu(x) )^{1/p}` by Monte Carlo over
/// the input marginal of `nu`. Order-1 norms are exact singular values;
/// order-2 norms use power iteration; orders above 2 are unsupported in the
/// operator-norm route.
pub fn opnorm_sobolev_error(
    f: &dyn Operator,
    g: &dyn Operator,
    nu: &MeasureSampler,
    k: usize,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    check_dims(f, g)?;
    check_orders(f, g, k)?;
    if k > 2 {
        return Err(Error::OrderUnsupported { order: k, max: 2 });
    }
    if nu.dim() != f.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: nu.dim(),
            context: "input measure dimension",
        });
    }
    if p < 1.0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }

    let zero = Coeffs::zeros(f.dim_in());
    let mut constant_terms: Vec<Option<f64>> = Vec::with_capacity(k + 1);
    let mut varying: Vec<usize> = Vec::new();
    for i in 0..=k {
        if f.derivative_constant_in_x(i) && g.derivative_constant_in_x(i) {
            let norm = match i {
                0 => diff_eval(f, g, &zero, &[]),
                1 => opnorm_order1(f, g, &zero),
                2 => bilinear_operator_norm(&difference_bilinear(f, g, &zero)?, seed ^ 0x5EED)?,
                _ => unreachable!(),
            };
            constant_terms.push(Some(norm.powf(p)));
        } else {
            constant_terms.push(None);
            varying.push(i);
        }
    }

    let mass = nu.total_mass();
    let mut terms = vec![0.0f64; k + 1];
    let mut term_ses = vec![0.0f64; k + 1];
    if !varying.is_empty() {
        let input = nu.marginal(0)?;
        let orders = varying.clone();
        // Power-iteration failures inside worker batches surface as NaN and
        // are converted to an error after the reduction.
        let (means, ses) = mc::mean_stderr_vec(n, seed, orders.len(), |rng, out| {
            let x = input.draw(rng).x;
            for (slot, &i) in orders.iter().enumerate() {
                let norm = match i {
                    0 => diff_eval(f, g, &x, &[]),
                    1 => opnorm_order1(f, g, &x),
                    2 => difference_bilinear(f, g, &x)
                        .ok()
                        .and_then(|b| bilinear_operator_norm(&b, seed ^ 0x5EED).ok())
                        .unwrap_or(f64::NAN),
                    _ => unreachable!(),
                };
                out[slot] = norm.powf(p);
            }
        });
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::PowerIterationDiverged {
                iterations: POWER_ITERS,
                last_change: f64::NAN,
            });
        }
        for (slot, &i) in varying.iter().enumerate() {
            terms[i] = mass * means[slot];
            term_ses[i] = mass * ses[slot];
        }
    }
    for i in 0..=k {
        if let Some(c) = constant_terms[i] {
            terms[i] = mass * c;
            term_ses[i] = 0.0;
        }
    }

    let (imax, &max_term) = terms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    root_estimate(max_term, term_ses[imax], p, n)
}

/// Minimum over sampled inputs of the order-1 operator-norm difference;
/// the pointwise quantity behind the rank-deficiency dichotomy.
pub fn opnorm_order1_sampled_min(
    f: &dyn Operator,
    g: &dyn Operator,
    nu: &MeasureSampler,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(f, g)?;
    check_orders(f, g, 1)?;
    let input = nu.marginal(0)?;
    Ok(-mc::sampled_sup(n, seed, |rng| {
        let x = input.draw(rng).x;
        -opnorm_order1(f, g, &x)
    }))
}

/// `(term, se_term) -> term^{1/p}` with delta-method standard error.
fn root_estimate(term: f64, se: f64, p: f64, n: usize) -> Result<NormEstimate> {
    let term = term.max(0.0);
    let value = term.powf(1.0 / p);
    let std_error = if term > 0.0 {
        se * value / (p * term)
    } else {
        0.0
    };
    NormEstimate::mc_mean_power(value, std_error, n)
}

// ---------------------------------------------------------------------------
// Evaluation-style (Bastiani) weighted Sobolev error
// ---------------------------------------------------------------------------

/// Per-order terms `int |D^i(F-G)(x)(h^1..h^i)|^p dmu^{0:i}`, estimated with
/// shared joint draws; order `i` uses the first `i` direction slots.
pub fn bastiani_sobolev_terms(
    f: &dyn Operator,
    g: &dyn Operator,
    mu: &MeasureSampler,
    k: usize,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<NormEstimate>> {
    check_dims(f, g)?;
    check_orders(f, g, k)?;
    if k > mu.k() {
        return Err(Error::InvalidArgument(format!(
            "norm order {k} exceeds sampler k = {}",
            mu.k()
        )));
    }
    if mu.dim() != f.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: f.dim_in(),
            got: mu.dim(),
            context: "measure dimension",
        });
    }
    let marginal = mu.marginal(k)?;
    let (means, ses) = mc::mean_stderr_vec(n, seed, k + 1, |rng, out| {
        let draw = marginal.draw(rng);
        for i in 0..=k {
            out[i] = diff_eval(f, g, &draw.x, &draw.dirs[..i]).powf(p);
        }
    });
    let mass = mu.total_mass();
    (0..=k)
        .map(|i| NormEstimate::mc_mean_power(mass * means[i], mass * ses[i], n))
        .collect()
}

/// `( max_{i<=k} int |D^i(F-G)(x)(h^1..h^i)|^p dmu^{0:i} )^{1/p}`.
pub fn bastiani_sobolev_error(
    f: &dyn Operator,
    g: &dyn Operator,
    mu: &MeasureSampler,
    k: usize,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    let terms = bastiani_sobolev_terms(f, g, mu, k, p, n, seed)?;
    let top = terms
        .into_iter()
        .max_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        .unwrap();
    root_estimate(top.value, top.std_error, p, n)
}

// ---------------------------------------------------------------------------
// Mixed (p, r) weighted Sobolev error
// ---------------------------------------------------------------------------

/// `( max_i int_X ( int |D^i(F-G)(x)(h..)|^r deta^{1:i} )^{p/r} dmu^0 )^{1/p}`;
/// the inner integral is estimated with `n_inner` fresh direction draws per
/// outer input draw. Requires a product measure.
#[allow(clippy::too_many_arguments)]
pub fn mixed_sobolev_error(
    f: &dyn Operator,
    g: &dyn Operator,
    mu: &MeasureSampler,
    k: usize,
    p: f64,
    r: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<NormEstimate> {
    check_dims(f, g)?;
    check_orders(f, g, k)?;
    if !mu.is_product() {
        return Err(Error::NonProductMeasure);
    }
    if k > mu.k() {
        return Err(Error::InvalidArgument(format!(
            "norm order {k} exceeds sampler k = {}",
            mu.k()
        )));
    }
    if p < 1.0 || r < 1.0 {
        return Err(Error::InvalidArgument("p and r must be at least 1".into()));
    }
    let marginal = mu.marginal(k)?;
    let (means, ses) = mc::mean_stderr_vec(n_outer, seed, k + 1, |rng, out| {
        let x = marginal.input().draw(rng);
        let mut inner = vec![0.0f64; k + 1];
        for _ in 0..n_inner.max(1) {
            let dirs = marginal.draw(rng).dirs;
            for i in 0..=k {
                inner[i] += diff_eval(f, g, &x, &dirs[..i]).powf(r);
            }
        }
        for i in 0..=k {
            out[i] = (inner[i] / n_inner.max(1) as f64).powf(p / r);
        }
    });
    let mass = mu.total_mass();
    let (imax, _) = means
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    root_estimate(mass * means[imax], mass * ses[imax], p, n_outer)
}

// ---------------------------------------------------------------------------
// Gaussian Hilbert-Schmidt norms (exact)
// ---------------------------------------------------------------------------

/// Exact `L^2(gamma)` norm of a linear map: `||L Q^{1/2}||_F`, i.e.
/// `sqrt(sum_j lambda_j |L e_j|^2)`.
pub fn gaussian_hs_norm(l: &DMatrix<f64>, gamma: &GaussianSpec) -> Result<NormEstimate> {
    if l.ncols() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            got: l.ncols(),
            context: "hs norm input dims",
        });
    }
    let mut acc = 0.0;
    for j in 0..l.ncols() {
        let col = l.column(j);
        acc += gamma.eigenvalues()[j] * col.norm_squared();
    }
    NormEstimate::exact(acc.sqrt())
}

/// Exact `L^2(gamma x gamma)` norm of a symmetric bilinear map:
/// `sqrt(sum_{j,l} lambda_j lambda_l |B(e_j, e_l)|^2)`.
pub fn gaussian_hs_norm_bilinear(b: &Bilinear, gamma: &GaussianSpec) -> Result<NormEstimate> {
    if b.dim_in() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            got: b.dim_in(),
            context: "hs norm input dims",
        });
    }
    NormEstimate::exact(b.weighted_frobenius(gamma.eigenvalues()))
}

// ---------------------------------------------------------------------------
// Restricted-subset ("tilde") weighted Sobolev error
// ---------------------------------------------------------------------------

/// `( max_{i<=k} max_{J subset {1..i}} int |D^{|J|}(F-G)(x)((h^j)_{j in J})|^p
///   prod_{t in J^c} |h^t|^p dmu^{0:i} )^{1/p}`.
///
/// Dominates the plain evaluation-style norm (the subset `J = {1..i}` is one
/// of the candidates). `k = 0` reduces to the order-0 `L^p` error.
pub fn tilde_sobolev_error(
    f: &dyn Operator,
    g: &dyn Operator,
    mu: &MeasureSampler,
    k: usize,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    check_dims(f, g)?;
    check_orders(f, g, k)?;
    if k > mu.k() {
        return Err(Error::InvalidArgument(format!(
            "norm order {k} exceeds sampler k = {}",
            mu.k()
        )));
    }
    // Stat slots: (i, J) for J a bitmask subset of {1..i}.
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for i in 0..=k {
        for j_mask in 0..(1usize << i) {
            slots.push((i, j_mask));
        }
    }
    let marginal = mu.marginal(k)?;
    let slots_ref = &slots;
    let (means, ses) = mc::mean_stderr_vec(n, seed, slots.len(), |rng, out| {
        let draw = marginal.draw(rng);
        // Evaluate each direction subset once per draw.
        let mut subset_val = vec![0.0f64; 1usize << k];
        for mask in 0..(1usize << k) {
            let dirs: Vec<Coeffs> = (0..k)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| draw.dirs[j].clone())
                .collect();
            subset_val[mask] = diff_eval(f, g, &draw.x, &dirs);
        }
        for (slot, &(i, j_mask)) in slots_ref.iter().enumerate() {
            let mut weight = 1.0;
            for t in 0..i {
                if j_mask & (1 << t) == 0 {
                    weight *= draw.dirs[t].norm().powf(p);
                }
            }
            out[slot] = subset_val[j_mask].powf(p) * weight;
        }
    });
    let mass = mu.total_mass();
    let (imax, _) = means
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    root_estimate(mass * means[imax], mass * ses[imax], p, n)
}
