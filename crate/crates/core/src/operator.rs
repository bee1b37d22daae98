//! Common interface for nonlinear operators on the truncated ambient space,
//! plus assembly of derivative maps into matrices and bilinear tensors.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::space::Coeffs;

/// A `k`-times differentiable operator between truncated coefficient spaces,
/// exposing mixed directional derivatives of every supported order.
pub trait Operator: Send + Sync {
    fn dim_in(&self) -> usize;

    fn dim_out(&self) -> usize;

    fn eval(&self, x: &Coeffs) -> Result<Coeffs>;

    /// `D^i F(x)(h^1,...,h^i)` with `i = dirs.len()`; the empty list returns
    /// `F(x)`. Symmetric and multilinear in the directions.
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs>;

    /// Highest supported derivative order, or `None` when all orders exist.
    fn max_order(&self) -> Option<usize>;

    /// Growth certificate `(q, p)` for the order: `||D^i F(x)||^p <= C (1 + |x|^q)`.
    fn growth(&self, _order: usize) -> (f64, f64) {
        (0.0, 2.0)
    }

    /// Whether `D^i F(x)` does not depend on `x`; enables exact one-shot
    /// operator-norm evaluation in the metrics.
    fn derivative_constant_in_x(&self, _order: usize) -> bool {
        false
    }
}

/// Assembles the first derivative at `x` as a matrix, column `j` being the
/// derivative along the `j`-th basis direction.
pub fn jacobian(op: &dyn Operator, x: &Coeffs) -> Result<DMatrix<f64>> {
    let d_in = op.dim_in();
    let mut m = DMatrix::zeros(op.dim_out(), d_in);
    for j in 0..d_in {
        let col = op.derivative(x, &[Coeffs::basis(d_in, j)])?;
        m.set_column(j, col.as_vector());
    }
    Ok(m)
}

/// Jacobian of the pointwise difference `F - G` at `x`.
pub fn difference_jacobian(f: &dyn Operator, g: &dyn Operator, x: &Coeffs) -> Result<DMatrix<f64>> {
    Ok(jacobian(f, x)? - jacobian(g, x)?)
}

/// Dense symmetric bilinear map `B: X x X -> Y`, stored as one matrix slice
/// per output coordinate.
#[derive(Clone, Debug)]
pub struct Bilinear {
    dim_in: usize,
    dim_out: usize,
    /// `data[out][ (i, j) ]`, each slice symmetric.
    slices: Vec<DMatrix<f64>>,
}

impl Bilinear {
    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn apply(&self, h: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim_out, |o, _| (h.transpose() * &self.slices[o] * g)[0])
    }

    /// `sum_o y_o B_o`, a symmetric matrix.
    pub fn contract_output(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim_in, self.dim_in);
        for (o, slice) in self.slices.iter().enumerate() {
            m += slice * y[o];
        }
        m
    }

    /// Frobenius-style norm weighted by `w_i w_j` on the input pair.
    pub fn weighted_frobenius(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for slice in &self.slices {
            for i in 0..self.dim_in {
                for j in 0..self.dim_in {
                    let v = slice[(i, j)];
                    acc += w[i] * w[j] * v * v;
                }
            }
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.slices {
            *s *= a;
        }
    }

    pub fn sub_assign(&mut self, other: &Bilinear) {
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            *a -= b;
        }
    }
}

/// Assembles the symmetric second derivative of `F` at `x` on basis pairs.
pub fn bilinear_tensor(op: &dyn Operator, x: &Coeffs) -> Result<Bilinear> {
    let d_in = op.dim_in();
    let d_out = op.dim_out();
    let mut slices = vec![DMatrix::zeros(d_in, d_in); d_out];
    for i in 0..d_in {
        for j in i..d_in {
            let v = op.derivative(x, &[Coeffs::basis(d_in, i), Coeffs::basis(d_in, j)])?;
            for o in 0..d_out {
                slices[o][(i, j)] = v.as_slice()[o];
                slices[o][(j, i)] = v.as_slice()[o];
            }
        }
    }
    Ok(Bilinear {
        dim_in: d_in,
        dim_out: d_out,
        slices,
    })
}

/// Second derivative of the difference `F - G` at `x`.
pub fn difference_bilinear(
    f: &dyn Operator,
    g: &dyn Operator,
    x: &Coeffs,
) -> Result<Bilinear> {
    let mut bf = bilinear_tensor(f, x)?;
    let bg = bilinear_tensor(g, x)?;
    bf.sub_assign(&bg);
    Ok(bf)
}
