//! Derivative-informed (Sobolev-loss) training of encoder-decoder models
//! against differentiable targets, with a plain order-0 baseline for the
//! accuracy comparison.
//!
//! The evaluation loss is the empirical max over derivative orders; the
//! trained objective softens the max to a unit-weight sum so the gradient is
//! smooth. Gradients flow by reverse accumulation through the jet computation
//! graph, treating all subset coefficients as extended forward state.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eda::EDAModel;
use crate::error::{Error, Result};
use crate::jets::{self, NetGrad};
use crate::mc;
use crate::measures::{Draw, MeasureSampler};
use crate::operator::Operator;
use crate::space::Coeffs;

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    MomentumGd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Highest supervised derivative order (0 = plain regression).
    #[serde(default = "default_k_loss")]
    pub k_loss: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    pub n_train: usize,
    /// Direction tuples drawn per sample per epoch.
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub iterations: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_k_loss() -> usize {
    1
}
fn default_p() -> f64 {
    2.0
}
fn default_n_dirs() -> usize {
    1
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::MomentumGd
}
fn default_momentum() -> f64 {
    0.9
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidArgument("n_train must be positive".into()));
        }
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(Error::InvalidArgument("step_size must be positive".into()));
        }
        if self.p < 1.0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        if self.k_loss + 1 > jets::MAX_ORDER {
            return Err(Error::OrderUnsupported {
                order: self.k_loss,
                max: jets::MAX_ORDER - 1,
            });
        }
        if self.n_dirs == 0 {
            return Err(Error::InvalidArgument("n_dirs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Softened training loss per epoch, including the initial point.
    pub loss_history: Vec<f64>,
    pub best_loss: f64,
    pub best_iteration: usize,
    /// Held-out evaluation errors per derivative order (0, then 1 when the
    /// sampler provides directions).
    pub final_errors: Vec<f64>,
    pub wall_clock_secs: f64,
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

fn batch_order_terms(
    model: &EDAModel,
    target: &dyn Operator,
    batch: &[Draw],
    k_loss: usize,
    p: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch must be nonempty".into()));
    }
    let per_sample: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|draw| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(k_loss + 1);
            for i in 0..=k_loss {
                let dm = model.derivative(&draw.x, &draw.dirs[..i])?;
                let dt = target.derivative(&draw.x, &draw.dirs[..i])?;
                vals.push(dm.sub(&dt).norm().powf(p));
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    Ok((0..=k_loss)
        .map(|i| {
            let col: Vec<f64> = per_sample.iter().map(|v| v[i]).collect();
            mc::pairwise_sum(&col) / n
        })
        .collect())
}

/// Empirical max over orders `i <= k_loss` of the batch mean of
/// `|D^i F - D^i M|^p`; order `i` consumes the first `i` directions.
pub fn sobolev_loss(
    model: &EDAModel,
    target: &dyn Operator,
    batch: &[Draw],
    k_loss: usize,
    p: f64,
) -> Result<f64> {
    let terms = batch_order_terms(model, target, batch, k_loss, p)?;
    Ok(terms.into_iter().fold(0.0, f64::max))
}

/// Softened objective actually minimized: unit-weight sum over orders of the
/// batch mean squared error.
pub fn softened_loss(
    model: &EDAModel,
    target: &dyn Operator,
    batch: &[Draw],
    k_loss: usize,
) -> Result<f64> {
    let terms = batch_order_terms(model, target, batch, k_loss, 2.0)?;
    Ok(mc::pairwise_sum(&terms))
}

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

/// Gradient of the softened loss with respect to all network parameters.
/// Requires `p = 2`; the max over orders is softened to a unit-weight sum.
pub fn grad_theta(
    model: &EDAModel,
    target: &dyn Operator,
    batch: &[Draw],
    k_loss: usize,
    p: f64,
) -> Result<NetGrad> {
    if p != 2.0 {
        return Err(Error::InvalidArgument(
            "gradient requires the smooth case p = 2".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch must be nonempty".into()));
    }
    let net = model.net();
    let decoder_t = model.decoder().elements().transpose();
    let masks = 1usize << k_loss;

    let per_sample: Vec<NetGrad> = batch
        .par_iter()
        .map(|draw| -> Result<NetGrad> {
            let y = model.encoder().encode(&draw.x)?;
            let enc_dirs: Vec<DVector<f64>> = draw.dirs[..k_loss]
                .iter()
                .map(|h| model.encoder().encode(h))
                .collect::<Result<_>>()?;
            let jet = jets::lift(&y, &enc_dirs)?;
            let (out, tape) = jets::propagate_with_tape(net, &jet)?;

            // Seed adjoints on the leading-subset coefficients: order i lives
            // on the mask {1..i}.
            let mut adj = vec![DVector::zeros(out.width()); masks];
            for i in 0..=k_loss {
                let mask = (1usize << i) - 1;
                let model_deriv = model.decoder().decode(out.coeff(mask))?;
                let target_deriv = target.derivative(&draw.x, &draw.dirs[..i])?;
                let residual = model_deriv.sub(&target_deriv);
                adj[mask] += 2.0 * (&decoder_t * residual.as_vector());
            }
            jets::backprop(net, &tape, &adj)
        })
        .collect::<Result<_>>()?;

    let mut grad = reduce_pairwise(per_sample);
    grad.scale(1.0 / batch.len() as f64);
    if !grad.is_finite() {
        return Err(Error::NonFinite("parameter gradient"));
    }
    Ok(grad)
}

/// Split-half tree reduction; the tree shape depends only on the length, so
/// duplicated batches yield bitwise-halved sums.
fn reduce_pairwise(mut grads: Vec<NetGrad>) -> NetGrad {
    fn rec(grads: &mut [NetGrad]) -> NetGrad {
        match grads.len() {
            1 => grads[0].clone(),
            n => {
                let (a, b) = grads.split_at_mut(n / 2);
                let mut left = rec(a);
                let right = rec(b);
                left.add_assign(&right);
                left
            }
        }
    }
    rec(&mut grads)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

fn epoch_batch(
    train_x: &[Coeffs],
    mu: &MeasureSampler,
    cfg: &TrainConfig,
    seed: u64,
    epoch: u64,
) -> Vec<Draw> {
    // Fresh directions per epoch from eta; inputs stay fixed.
    let marginal = mu
        .marginal(cfg.k_loss)
        .expect("k_loss validated against sampler");
    let mut rng = mc::stream(seed, 1 + epoch);
    let mut batch = Vec::with_capacity(train_x.len() * cfg.n_dirs);
    for x in train_x {
        for _ in 0..cfg.n_dirs {
            let dirs = marginal.draw(&mut rng).dirs;
            batch.push(Draw {
                x: x.clone(),
                dirs,
            });
        }
    }
    batch
}

/// Held-out evaluation errors `( mean |D^i(F - M)|^p )^{1/p}` on a fresh
/// seeded draw set, for orders 0 and (when available) 1.
fn held_out_errors(
    model: &EDAModel,
    target: &dyn Operator,
    mu: &MeasureSampler,
    p: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let k_eval = mu.k().min(1);
    let n_eval = 512;
    let marginal = mu.marginal(k_eval)?;
    let mut rng = mc::stream(seed, u64::MAX / 2);
    let batch: Vec<Draw> = (0..n_eval).map(|_| marginal.draw(&mut rng)).collect();
    let terms = batch_order_terms(model, target, &batch, k_eval, p)?;
    Ok(terms.into_iter().map(|t| t.powf(1.0 / p)).collect())
}

/// Deterministic (momentum) gradient descent; returns the best-loss
/// parameters and the per-epoch report. Aborts with
/// [`Error::TrainingDiverged`] when the loss exceeds `1e6`.
pub fn train(
    cfg: &TrainConfig,
    m0: &EDAModel,
    target: &dyn Operator,
    mu: &MeasureSampler,
    seed: u64,
) -> Result<(EDAModel, TrainReport)> {
    cfg.validate()?;
    if cfg.k_loss > mu.k() {
        return Err(Error::InvalidArgument(format!(
            "k_loss {} exceeds sampler k = {}",
            cfg.k_loss,
            mu.k()
        )));
    }
    let start = std::time::Instant::now();

    let mut rng_inputs = mc::stream(seed, 0);
    let train_x: Vec<Coeffs> = (0..cfg.n_train)
        .map(|_| mu.input().draw(&mut rng_inputs))
        .collect();

    let mut current = m0.clone();
    let mut best = m0.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0usize;
    let mut velocity: Option<NetGrad> = None;
    let mut history = Vec::with_capacity(cfg.iterations + 1);

    for t in 0..=cfg.iterations {
        let batch = epoch_batch(&train_x, mu, cfg, seed, t as u64);
        let loss = softened_loss(&current, target, &batch, cfg.k_loss)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::TrainingDiverged { iteration: t, loss });
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_iteration = t;
            best = current.clone();
        }
        if t == cfg.iterations {
            break;
        }
        let grad = grad_theta(&current, target, &batch, cfg.k_loss, cfg.p)?;
        let step = match cfg.optimizer {
            OptimizerKind::Gd => {
                let mut s = grad;
                s.scale(cfg.step_size);
                s
            }
            OptimizerKind::MomentumGd => {
                let v = match velocity.take() {
                    Some(mut v) => {
                        v.scale(cfg.momentum);
                        v.add_assign(&grad);
                        v
                    }
                    None => grad,
                };
                let mut s = v.clone();
                s.scale(cfg.step_size);
                velocity = Some(v);
                s
            }
        };
        let mut flat = current.net().params_flat();
        let step_flat = step.flat();
        for (w, g) in flat.iter_mut().zip(&step_flat) {
            *w -= g;
        }
        current = current.with_net(current.net().with_params_flat(&flat)?)?;
    }

    let final_errors = held_out_errors(&best, target, mu, cfg.p, seed)?;
    let report = TrainReport {
        seed,
        loss_history: history,
        best_loss,
        best_iteration,
        final_errors,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

// ---------------------------------------------------------------------------
// k = 0 vs k = 1 comparison
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub k_loss: usize,
    pub best_loss: f64,
    pub held_out_order0: f64,
    pub held_out_order1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Median over seeds of (order-1 error with k_loss=1) / (with k_loss=0).
    pub median_ratio: f64,
}

/// Trains matched models with `k_loss = 0` and `k_loss = 1` at equal sample
/// budget for every seed, and reports the per-seed held-out errors.
pub fn compare_k0_k1(
    cfg: &TrainConfig,
    model_init: &(dyn Fn(u64) -> Result<EDAModel> + Sync),
    target: &dyn Operator,
    mu: &MeasureSampler,
) -> Result<CompareReport> {
    if cfg.seeds.len() < 3 {
        return Err(Error::InvalidArgument(
            "comparison needs at least 3 seeds".into(),
        ));
    }
    let mut rows = Vec::with_capacity(cfg.seeds.len() * 2);
    let mut ratios = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let m0 = model_init(seed)?;
        let mut per_k = Vec::new();
        for k_loss in [0usize, 1] {
            let mut c = cfg.clone();
            c.k_loss = k_loss;
            let (_, report) = train(&c, &m0, target, mu, seed)?;
            rows.push(CompareRow {
                seed,
                k_loss,
                best_loss: report.best_loss,
                held_out_order0: report.final_errors[0],
                held_out_order1: report.final_errors.get(1).copied().unwrap_or(f64::NAN),
            });
            per_k.push(rows.last().unwrap().held_out_order1);
        }
        ratios.push(per_k[1] / per_k[0]);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    Ok(CompareReport { rows, median_ratio })
}
