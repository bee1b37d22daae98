//! Exact mixed directional derivatives of deep networks through truncated
//! nilpotent Taylor arithmetic.
//!
//! A [`MultiJet`] of order `i` carries one coefficient vector per subset of
//! the `i` seeded directions; the coefficient of the full subset is the mixed
//! derivative `D^i f(x)(h^1,...,h^i)`. Affine layers act linearly on every
//! coefficient; activations are composed in the square-free algebra
//! `eps_j^2 = 0`, so only multilinear terms survive.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};

/// Highest derivative order for which closed-form activation derivative
/// tables are implemented. Experiments default to order 3.
pub const MAX_ORDER: usize = 4;

static ACTIVATION_FAULT: AtomicBool = AtomicBool::new(false);

/// Test hook: corrupts the tanh derivative table so that downstream
/// verification suites can demonstrate fault detection.
#[doc(hidden)]
pub fn inject_activation_fault(enabled: bool) {
    ACTIVATION_FAULT.store(enabled, Ordering::SeqCst);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    pub fn eval(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => y.tanh(),
            Activation::Softplus => softplus(y),
        }
    }

    /// `[f(y), f'(y), ..., f^(order)(y)]` in closed form.
    pub fn derivatives(self, y: f64, order: usize) -> Result<Vec<f64>> {
        if order > MAX_ORDER {
            return Err(Error::OrderUnsupported {
                order,
                max: MAX_ORDER,
            });
        }
        let mut out = Vec::with_capacity(order + 1);
        match self {
            Activation::Tanh => {
                let t = y.tanh();
                let s = 1.0 - t * t; // sech^2
                let fault = if ACTIVATION_FAULT.load(Ordering::Relaxed) {
                    0.05
                } else {
                    0.0
                };
                let table = [
                    t,
                    s + fault,
                    -2.0 * t * s,
                    s * (6.0 * t * t - 2.0),
                    s * t * (16.0 - 24.0 * t * t),
                ];
                out.extend_from_slice(&table[..=order]);
            }
            Activation::Softplus => {
                let sig = logistic(y);
                let table = [
                    softplus(y),
                    sig,
                    sig * (1.0 - sig),
                    sig * (1.0 - sig) * (1.0 - 2.0 * sig),
                    sig * (1.0 - sig) * (1.0 - 6.0 * sig + 6.0 * sig * sig),
                ];
                out.extend_from_slice(&table[..=order]);
            }
        }
        Ok(out)
    }
}

fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// MultiJet
// ---------------------------------------------------------------------------

/// Truncated nilpotent Taylor value: `2^order` coefficient vectors indexed by
/// direction subsets (bitmask). `coeffs[0]` is the primal value.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiJet {
    order: usize,
    width: usize,
    coeffs: Vec<DVector<f64>>,
}

impl MultiJet {
    pub fn new(order: usize, coeffs: Vec<DVector<f64>>) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::OrderUnsupported {
                order,
                max: MAX_ORDER,
            });
        }
        if coeffs.len() != 1 << order {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients for order {order}, got {}",
                1usize << order,
                coeffs.len()
            )));
        }
        let width = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != width) {
            return Err(Error::InvalidArgument(
                "jet coefficients must share one width".into(),
            ));
        }
        if coeffs.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("jet coefficients"));
        }
        Ok(MultiJet {
            order,
            width,
            coeffs,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Coefficient of the subset encoded by `mask`.
    pub fn coeff(&self, mask: usize) -> &DVector<f64> {
        &self.coeffs[mask]
    }

    pub fn primal(&self) -> &DVector<f64> {
        &self.coeffs[0]
    }

    /// Coefficient of the full subset `{1..order}`: the mixed derivative.
    pub fn top(&self) -> &DVector<f64> {
        &self.coeffs[(1 << self.order) - 1]
    }

    pub fn coeffs(&self) -> &[DVector<f64>] {
        &self.coeffs
    }
}

/// Seeds a jet: primal value `x`, singleton coefficients the directions, all
/// higher subsets zero.
pub fn lift(x: &DVector<f64>, dirs: &[DVector<f64>]) -> Result<MultiJet> {
    let order = dirs.len();
    if order > MAX_ORDER {
        return Err(Error::OrderUnsupported {
            order,
            max: MAX_ORDER,
        });
    }
    let width = x.len();
    for d in dirs {
        if d.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: d.len(),
                context: "lift direction",
            });
        }
    }
    let masks = 1usize << order;
    let mut coeffs = vec![DVector::zeros(width); masks];
    coeffs[0] = x.clone();
    for (j, d) in dirs.iter().enumerate() {
        coeffs[1 << j] = d.clone();
    }
    MultiJet::new(order, coeffs)
}

// ---------------------------------------------------------------------------
// Subset partitions
// ---------------------------------------------------------------------------

/// All set partitions of the bitmask `s` into nonempty blocks.
pub(crate) fn partitions_of_mask(s: usize) -> Vec<Vec<usize>> {
    if s == 0 {
        return vec![vec![]];
    }
    let low = s & s.wrapping_neg();
    let rest = s ^ low;
    let mut out = Vec::new();
    let mut t = rest;
    loop {
        let block = low | t;
        for mut p in partitions_of_mask(s ^ block) {
            p.push(block);
            out.push(p);
        }
        if t == 0 {
            break;
        }
        t = (t - 1) & rest;
    }
    out
}

/// Partition table for every subset mask of an order-`order` jet.
fn partition_table(order: usize) -> Vec<Vec<Vec<usize>>> {
    (0..1usize << order).map(partitions_of_mask).collect()
}

// ---------------------------------------------------------------------------
// Network parameters
// ---------------------------------------------------------------------------

/// Fully connected network `A_L ∘ act ∘ ... ∘ act ∘ A_0` with the activation
/// applied componentwise between affine layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: Activation,
}

impl NetParams {
    pub fn new(
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(
                "need matching nonempty weight and bias lists".into(),
            ));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.nrows(),
                    got: b.len(),
                    context: "bias length",
                });
            }
            if l + 1 < weights.len() && weights[l + 1].ncols() != w.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: w.nrows(),
                    got: weights[l + 1].ncols(),
                    context: "consecutive layer dims",
                });
            }
        }
        Ok(NetParams {
            weights,
            biases,
            activation,
        })
    }

    /// Random init with `1/sqrt(fan_in)` weight scale and zero biases.
    pub fn random(dims: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least input and output dims".into(),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let scale = 1.0 / (dims[l] as f64).sqrt();
            weights.push(DMatrix::from_fn(dims[l + 1], dims[l], |_, _| {
                scale * rng.sample::<f64, _>(StandardNormal)
            }));
            biases.push(DVector::zeros(dims[l + 1]));
        }
        NetParams::new(weights, biases, activation)
    }

    /// Single affine layer realizing the identity map.
    pub fn identity(dim: usize) -> Self {
        NetParams {
            weights: vec![DMatrix::identity(dim, dim)],
            biases: vec![DVector::zeros(dim)],
            activation: Activation::Tanh,
        }
    }

    /// Single affine layer `y -> A y + b`.
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        NetParams::new(vec![a], vec![b], Activation::Tanh)
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.weights.iter().map(|w| w.nrows()));
        dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum()
    }

    /// Parameters in flat order: per layer, row-major weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }

    /// Rebuilds parameters from the flat layout of [`Self::params_flat`].
    pub fn with_params_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
                context: "flat parameter vector",
            });
        }
        let mut weights = self.weights.clone();
        let mut biases = self.biases.clone();
        let mut k = 0;
        for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[k];
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        NetParams::new(weights, biases, self.activation)
    }

    /// Plain forward pass.
    pub fn forward(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut v = y.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            v = w * v + b;
            if l < last {
                v.apply(|x| *x = self.activation.eval(*x));
            }
        }
        v
    }
}

/// Flat JSON layout: layer dims, concatenated row-major weights, biases.
#[derive(Serialize, Deserialize)]
struct NetParamsDoc {
    layer_dims: Vec<usize>,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl Serialize for NetParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    weights.push(w[(r, c)]);
                }
            }
            biases.extend(b.iter().copied());
        }
        NetParamsDoc {
            layer_dims: self.layer_dims(),
            weights,
            biases,
            activation: self.activation,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = NetParamsDoc::deserialize(d)?;
        if doc.layer_dims.len() < 2 {
            return Err(serde::de::Error::custom("need at least two layer dims"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut wk = 0usize;
        let mut bk = 0usize;
        for l in 0..doc.layer_dims.len() - 1 {
            let (rows, cols) = (doc.layer_dims[l + 1], doc.layer_dims[l]);
            if wk + rows * cols > doc.weights.len() || bk + rows > doc.biases.len() {
                return Err(serde::de::Error::custom("weight/bias payload too short"));
            }
            weights.push(DMatrix::from_fn(rows, cols, |r, c| {
                doc.weights[wk + r * cols + c]
            }));
            biases.push(DVector::from_fn(rows, |r, _| doc.biases[bk + r]));
            wk += rows * cols;
            bk += rows;
        }
        if wk != doc.weights.len() || bk != doc.biases.len() {
            return Err(serde::de::Error::custom("weight/bias payload too long"));
        }
        NetParams::new(weights, biases, doc.activation).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

fn apply_affine(w: &DMatrix<f64>, b: &DVector<f64>, state: &mut [DVector<f64>]) {
    for c in state.iter_mut() {
        *c = w * &*c;
    }
    state[0] += b;
}

/// Componentwise activation in the square-free algebra, via Faà di Bruno over
/// subset partitions: `v_S = sum_{pi in partitions(S)} f^(|pi|)(u_0) prod_B u_B`.
fn apply_activation(
    act: Activation,
    order: usize,
    parts: &[Vec<Vec<usize>>],
    state: &mut [DVector<f64>],
) -> Result<()> {
    let masks = 1usize << order;
    let width = state[0].len();
    let mut u = vec![0.0f64; masks];
    for c in 0..width {
        for m in 0..masks {
            u[m] = state[m][c];
        }
        let derivs = act.derivatives(u[0], order)?;
        state[0][c] = derivs[0];
        for s in 1..masks {
            let mut acc = 0.0;
            for pi in &parts[s] {
                let mut term = derivs[pi.len()];
                for &block in pi {
                    term *= u[block];
                }
                acc += term;
            }
            state[s][c] = acc;
        }
    }
    Ok(())
}

/// Pushes a jet through the network with exact chain rule in every
/// coefficient.
pub fn propagate(net: &NetParams, jet: &MultiJet) -> Result<MultiJet> {
    if jet.width() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: jet.width(),
            context: "propagate input width",
        });
    }
    let parts = partition_table(jet.order());
    let mut state = jet.coeffs.clone();
    let last = net.weights.len() - 1;
    for l in 0..net.weights.len() {
        apply_affine(&net.weights[l], &net.biases[l], &mut state);
        if l < last {
            apply_activation(net.activation, jet.order(), &parts, &mut state)?;
        }
    }
    MultiJet::new(jet.order(), state)
}

/// `D^i f(x)(h^1,...,h^i)`; symmetric in the directions and multilinear in
/// each. `i = 0` is the plain forward pass.
pub fn directional_derivative(
    net: &NetParams,
    x: &DVector<f64>,
    dirs: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let jet = lift(x, dirs)?;
    Ok(propagate(net, &jet)?.top().clone())
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Iterated central differences along the directions, `O(step^2)` accurate.
/// Independent of the jet path; used to validate it.
pub fn fd_oracle(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    dirs: &[DVector<f64>],
    step: f64,
) -> Result<DVector<f64>> {
    if dirs.len() > 3 {
        return Err(Error::OrderUnsupported {
            order: dirs.len(),
            max: 3,
        });
    }
    if step <= 0.0 || step.is_nan() {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    fn rec(
        f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
        x: &DVector<f64>,
        dirs: &[DVector<f64>],
        step: f64,
    ) -> DVector<f64> {
        match dirs.split_last() {
            None => f(x),
            Some((h, rest)) => {
                let plus = rec(f, &(x + h * step), rest, step);
                let minus = rec(f, &(x - h * step), rest, step);
                (plus - minus) / (2.0 * step)
            }
        }
    }
    Ok(rec(f, x, dirs, step))
}

// ---------------------------------------------------------------------------
// Tape and reverse accumulation
// ---------------------------------------------------------------------------

/// Forward states recorded for reverse accumulation: the jet entering each
/// affine layer and the pre-activation jet of each hidden layer.
pub struct JetTape {
    order: usize,
    affine_inputs: Vec<Vec<DVector<f64>>>,
    pre_activations: Vec<Vec<DVector<f64>>>,
}

/// Parameter-space gradient with the same layer layout as [`NetParams`].
#[derive(Clone, Debug)]
pub struct NetGrad {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetGrad {
    pub fn zeros_like(net: &NetParams) -> Self {
        NetGrad {
            weights: net
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for w in &mut self.weights {
            *w *= a;
        }
        for b in &mut self.biases {
            *b *= a;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Forward propagation that records the tape needed by [`backprop`].
pub fn propagate_with_tape(net: &NetParams, jet: &MultiJet) -> Result<(MultiJet, JetTape)> {
    if jet.width() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: jet.width(),
            context: "propagate input width",
        });
    }
    let parts = partition_table(jet.order());
    let mut state = jet.coeffs.clone();
    let mut tape = JetTape {
        order: jet.order(),
        affine_inputs: Vec::with_capacity(net.weights.len()),
        pre_activations: Vec::with_capacity(net.weights.len().saturating_sub(1)),
    };
    let last = net.weights.len() - 1;
    for l in 0..net.weights.len() {
        tape.affine_inputs.push(state.clone());
        apply_affine(&net.weights[l], &net.biases[l], &mut state);
        if l < last {
            tape.pre_activations.push(state.clone());
            apply_activation(net.activation, jet.order(), &parts, &mut state)?;
        }
    }
    Ok((MultiJet::new(jet.order(), state)?, tape))
}

/// Adjoint of the componentwise activation. Needs derivative tables one order
/// beyond the jet order.
fn activation_backward(
    act: Activation,
    order: usize,
    parts: &[Vec<Vec<usize>>],
    pre: &[DVector<f64>],
    adj_out: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let masks = 1usize << order;
    let width = pre[0].len();
    let mut adj_in = vec![DVector::zeros(width); masks];
    let mut u = vec![0.0f64; masks];
    for c in 0..width {
        for m in 0..masks {
            u[m] = pre[m][c];
        }
        let derivs = act.derivatives(u[0], order + 1)?;
        // v_0 = f(u_0)
        adj_in[0][c] += adj_out[0][c] * derivs[1];
        for s in 1..masks {
            let a = adj_out[s][c];
            if a == 0.0 {
                continue;
            }
            for pi in &parts[s] {
                let mut prod_all = 1.0;
                for &block in pi {
                    prod_all *= u[block];
                }
                // d v_s / d u_0 differentiates the outer factor.
                adj_in[0][c] += a * derivs[pi.len() + 1] * prod_all;
                for &t in pi {
                    let mut prod_others = 1.0;
                    for &block in pi {
                        if block != t {
                            prod_others *= u[block];
                        }
                    }
                    adj_in[t][c] += a * derivs[pi.len()] * prod_others;
                }
            }
        }
    }
    Ok(adj_in)
}

/// Reverse accumulation through the recorded jet computation: returns the
/// gradient of `sum_S <adj_out_S, out_S>` with respect to all parameters.
pub fn backprop(net: &NetParams, tape: &JetTape, adj_out: &[DVector<f64>]) -> Result<NetGrad> {
    let masks = 1usize << tape.order;
    if adj_out.len() != masks {
        return Err(Error::InvalidArgument(format!(
            "adjoint needs {masks} coefficients, got {}",
            adj_out.len()
        )));
    }
    let parts = partition_table(tape.order);
    let mut grad = NetGrad::zeros_like(net);
    let mut adj: Vec<DVector<f64>> = adj_out.to_vec();
    let last = net.weights.len() - 1;
    for l in (0..net.weights.len()).rev() {
        if l < last {
            adj = activation_backward(
                net.activation,
                tape.order,
                &parts,
                &tape.pre_activations[l],
                &adj,
            )?;
        }
        let inputs = &tape.affine_inputs[l];
        for m in 0..masks {
            grad.weights[l] += &adj[m] * inputs[m].transpose();
        }
        grad.biases[l] += &adj[0];
        if l > 0 {
            let wt = net.weights[l].transpose();
            for a in adj.iter_mut() {
                *a = &wt * &*a;
            }
        }
    }
    Ok(grad)
}
