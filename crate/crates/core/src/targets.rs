//! Benchmark operators with closed-form derivatives of every order, and
//! cylindrical (rank-truncated) approximations of arbitrary operators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jets::{self, Activation};
use crate::operator::Operator;
use crate::space::{BasisSpec, Coeffs};

/// Condition-number limit for the Nemytskii analysis operator.
const ANALYSIS_COND_LIMIT: f64 = 1e8;

// ---------------------------------------------------------------------------
// Identity and diagonal targets
// ---------------------------------------------------------------------------

/// `F(x) = x`: full-rank first derivative, all higher derivatives zero.
pub struct IdentityTarget {
    dim: usize,
}

pub fn identity_target(dim: usize) -> IdentityTarget {
    IdentityTarget { dim }
}

impl Operator for IdentityTarget {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        Ok(x.clone())
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        match dirs.len() {
            0 => Ok(x.clone()),
            1 => Ok(dirs[0].clone()),
            _ => Ok(Coeffs::zeros(self.dim)),
        }
    }
    fn max_order(&self) -> Option<usize> {
        None
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        if order == 0 {
            (2.0, 2.0)
        } else {
            (0.0, 2.0)
        }
    }
    fn derivative_constant_in_x(&self, order: usize) -> bool {
        order >= 1
    }
}

/// `(L x)_i = w_i x_i`: a diagonal linear operator.
pub struct DiagonalTarget {
    weights: Vec<f64>,
}

pub fn diagonal_target(weights: Vec<f64>) -> Result<DiagonalTarget> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "diagonal weights must be nonempty and finite".into(),
        ));
    }
    Ok(DiagonalTarget { weights })
}

/// The zero operator, as a degenerate diagonal target.
pub fn zero_target(dim: usize) -> DiagonalTarget {
    DiagonalTarget {
        weights: vec![0.0; dim],
    }
}

impl DiagonalTarget {
    fn apply(&self, v: &Coeffs) -> Coeffs {
        Coeffs::from_vec(
            v.as_slice()
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| w * x)
                .collect(),
        )
    }

    /// `||L||_op = max_i |w_i|`.
    pub fn operator_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).fold(0.0, f64::max)
    }
}

impl Operator for DiagonalTarget {
    fn dim_in(&self) -> usize {
        self.weights.len()
    }
    fn dim_out(&self) -> usize {
        self.weights.len()
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        Ok(self.apply(x))
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        match dirs.len() {
            0 => Ok(self.apply(x)),
            1 => Ok(self.apply(&dirs[0])),
            _ => Ok(Coeffs::zeros(self.weights.len())),
        }
    }
    fn max_order(&self) -> Option<usize> {
        None
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        if order == 0 {
            (2.0, 2.0)
        } else {
            (0.0, 2.0)
        }
    }
    fn derivative_constant_in_x(&self, order: usize) -> bool {
        order >= 1
    }
}

// ---------------------------------------------------------------------------
// Quadratic target
// ---------------------------------------------------------------------------

/// One term of the finite-rank bilinear part: contributes
/// `beta <x,w> <y,v>` to the output coordinate given by its list position.
#[derive(Clone, Debug)]
pub struct BilinearTerm {
    pub beta: f64,
    pub w: Coeffs,
    pub v: Coeffs,
}

/// `F(x) = L x + B(x,x)` with diagonal `L` and finite-rank `B`:
/// `D^1 F(x) h = L h + B(x,h) + B(h,x)`, `D^2 F (h,g) = B(h,g) + B(g,h)`,
/// and `D^3 F = 0`.
pub struct QuadraticTarget {
    linear: Vec<f64>,
    terms: Vec<BilinearTerm>,
}

pub fn quadratic_target(linear: Vec<f64>, terms: Vec<BilinearTerm>) -> Result<QuadraticTarget> {
    let dim = linear.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if terms.len() > dim {
        return Err(Error::InvalidArgument(
            "more bilinear terms than output coordinates".into(),
        ));
    }
    for t in &terms {
        if t.w.dim() != dim || t.v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.w.dim(),
                context: "bilinear term factors",
            });
        }
    }
    Ok(QuadraticTarget { linear, terms })
}

impl QuadraticTarget {
    /// Random benchmark instance: `L = diag(1/i)` and `n_terms` unit-factor
    /// bilinear terms with coefficients of size `scale`.
    pub fn random(dim: usize, n_terms: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let linear = (1..=dim).map(|i| 1.0 / i as f64).collect();
        fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Coeffs {
            let v = Coeffs::from_vec(
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            v.scaled(1.0 / v.norm())
        }
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let beta = scale * rng.random_range(0.5..1.5);
            let w = unit(dim, rng);
            let v = unit(dim, rng);
            terms.push(BilinearTerm { beta, w, v });
        }
        quadratic_target(linear, terms)
    }

    fn bilinear(&self, x: &Coeffs, y: &Coeffs) -> Coeffs {
        let mut out = vec![0.0; self.linear.len()];
        for (j, t) in self.terms.iter().enumerate() {
            out[j] += t.beta * t.w.dot(x) * t.v.dot(y);
        }
        Coeffs::from_vec(out)
    }

    fn linear_part(&self, v: &Coeffs) -> Coeffs {
        Coeffs::from_vec(
            v.as_slice()
                .iter()
                .zip(&self.linear)
                .map(|(&x, &w)| w * x)
                .collect(),
        )
    }
}

impl Operator for QuadraticTarget {
    fn dim_in(&self) -> usize {
        self.linear.len()
    }
    fn dim_out(&self) -> usize {
        self.linear.len()
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        Ok(self.linear_part(x).add(&self.bilinear(x, x)))
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        match dirs {
            [] => self.eval(x),
            [h] => Ok(self
                .linear_part(h)
                .add(&self.bilinear(x, h))
                .add(&self.bilinear(h, x))),
            [h, g] => Ok(self.bilinear(h, g).add(&self.bilinear(g, h))),
            _ => Ok(Coeffs::zeros(self.linear.len())),
        }
    }
    fn max_order(&self) -> Option<usize> {
        None
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        match order {
            0 => (4.0, 2.0),
            1 => (2.0, 2.0),
            _ => (0.0, 2.0),
        }
    }
    fn derivative_constant_in_x(&self, order: usize) -> bool {
        order >= 2
    }
}

// ---------------------------------------------------------------------------
// Nemytskii (pointwise composition) target
// ---------------------------------------------------------------------------

/// Scalar map applied pointwise by the Nemytskii target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMap {
    Identity,
    Tanh,
    Softplus,
}

impl ScalarMap {
    fn derivatives(self, y: f64, order: usize) -> Result<Vec<f64>> {
        match self {
            ScalarMap::Identity => {
                let mut d = vec![0.0; order + 1];
                d[0] = y;
                if order >= 1 {
                    d[1] = 1.0;
                }
                Ok(d)
            }
            ScalarMap::Tanh => Activation::Tanh.derivatives(y, order),
            ScalarMap::Softplus => Activation::Softplus.derivatives(y, order),
        }
    }
}

/// `F = A^+ ∘ phi ∘ A`: synthesis to an oversampled quadrature grid,
/// pointwise scalar composition, then least-squares analysis back to
/// coefficients. Derivatives propagate scalar jets through `phi` at each grid
/// point.
pub struct NemytskiiTarget {
    phi: ScalarMap,
    synthesis: DMatrix<f64>,
    analysis: DMatrix<f64>,
    dim: usize,
}

pub fn nemytskii_target(
    basis: &BasisSpec,
    phi: ScalarMap,
    quad_points: usize,
) -> Result<NemytskiiTarget> {
    let dim = basis.ambient_dim;
    if quad_points < 2 * dim {
        return Err(Error::InvalidArgument(format!(
            "need at least {} quadrature points, got {quad_points}",
            2 * dim
        )));
    }
    // Midpoint grid avoids the basis zeros at the interval ends.
    let mut synthesis = DMatrix::zeros(quad_points, dim);
    for p in 0..quad_points {
        let s = (p as f64 + 0.5) / quad_points as f64;
        synthesis.set_row(p, &basis.synthesis_row(s)?.transpose());
    }
    let svd = synthesis.clone().svd(true, true);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[svd.singular_values.len() - 1];
    let cond = smax / smin;
    if !cond.is_finite() || cond > ANALYSIS_COND_LIMIT {
        return Err(Error::IllConditioned {
            cond,
            limit: ANALYSIS_COND_LIMIT,
        });
    }
    let analysis = svd
        .pseudo_inverse(smax * 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;
    Ok(NemytskiiTarget {
        phi,
        synthesis,
        analysis,
        dim,
    })
}

impl Operator for NemytskiiTarget {
    fn dim_in(&self) -> usize {
        self.dim
    }
    fn dim_out(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        self.derivative(x, &[])
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        let order = dirs.len();
        if order > jets::MAX_ORDER {
            return Err(Error::OrderUnsupported {
                order,
                max: jets::MAX_ORDER,
            });
        }
        let values = &self.synthesis * x.as_vector();
        let dir_values: Vec<_> = dirs
            .iter()
            .map(|h| &self.synthesis * h.as_vector())
            .collect();
        // Mixed derivative of the pointwise composition, per grid point.
        let masks = 1usize << order;
        let full = masks - 1;
        let parts = crate::jets::partitions_of_mask(full);
        let mut grid = nalgebra::DVector::zeros(values.len());
        for p in 0..values.len() {
            let derivs = self.phi.derivatives(values[p], order)?;
            if order == 0 {
                grid[p] = derivs[0];
                continue;
            }
            let mut acc = 0.0;
            for pi in &parts {
                // Only singleton blocks survive: higher subsets of the seed
                // are zero, so a block {j} contributes the direction value.
                if pi.iter().any(|b| b.count_ones() > 1) {
                    continue;
                }
                let mut term = derivs[pi.len()];
                for &block in pi {
                    let j = block.trailing_zeros() as usize;
                    term *= dir_values[j][p];
                }
                acc += term;
            }
            grid[p] = acc;
        }
        Ok(Coeffs::from(&self.analysis * grid))
    }
    fn max_order(&self) -> Option<usize> {
        Some(jets::MAX_ORDER)
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        match (self.phi, order) {
            (ScalarMap::Identity, 0) => (2.0, 2.0),
            _ => (2.0, 2.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Cylindrical approximation
// ---------------------------------------------------------------------------

/// `F_{d,m}(x) = P_m F(P_d x)` with coordinate truncations; derivatives are
/// `P_m D^i F(P_d x)(P_d h^1, ..., P_d h^i)`.
pub struct CylindricalTarget {
    inner: Arc<dyn Operator>,
    d: usize,
    m: usize,
}

pub fn cylindrical_approximation(
    inner: Arc<dyn Operator>,
    d: usize,
    m: usize,
) -> Result<CylindricalTarget> {
    if d == 0 || d > inner.dim_in() || m == 0 || m > inner.dim_out() {
        return Err(Error::InvalidArgument(format!(
            "ranks ({d},{m}) out of range for dims ({}, {})",
            inner.dim_in(),
            inner.dim_out()
        )));
    }
    Ok(CylindricalTarget { inner, d, m })
}

impl Operator for CylindricalTarget {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        Ok(self.inner.eval(&x.truncate(self.d))?.truncate(self.m))
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        let xd = x.truncate(self.d);
        let dirs_d: Vec<Coeffs> = dirs.iter().map(|h| h.truncate(self.d)).collect();
        Ok(self.inner.derivative(&xd, &dirs_d)?.truncate(self.m))
    }
    fn max_order(&self) -> Option<usize> {
        self.inner.max_order()
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        self.inner.growth(order)
    }
    fn derivative_constant_in_x(&self, order: usize) -> bool {
        self.inner.derivative_constant_in_x(order)
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Serializable target description for experiment configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// One of `identity`, `diagonal`, `quadratic`, `nemytskii`.
    pub name: String,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Diagonal weight exponent for `diagonal` when `weights` is absent:
    /// `w_i = i^{-exponent}` (default 1).
    #[serde(default)]
    pub weight_exponent: Option<f64>,
    /// Number of random bilinear terms for `quadratic` (default 4).
    #[serde(default)]
    pub terms: Option<usize>,
    /// Bilinear coefficient scale for `quadratic` (default 0.5).
    #[serde(default)]
    pub scale: Option<f64>,
    /// Seed for the random `quadratic` instance (default 0).
    #[serde(default)]
    pub seed: Option<u64>,
    /// Pointwise map for `nemytskii` (default `tanh`).
    #[serde(default)]
    pub phi: Option<ScalarMap>,
    /// Quadrature points for `nemytskii` (default `2 * dim`).
    #[serde(default)]
    pub quad_points: Option<usize>,
}

/// Builds a registry target in ambient dimension `dim`.
pub fn from_registry(spec: &TargetSpec, dim: usize) -> Result<Arc<dyn Operator>> {
    match spec.name.as_str() {
        "identity" => Ok(Arc::new(identity_target(dim))),
        "diagonal" => {
            let weights = match &spec.weights {
                Some(w) => w.clone(),
                None => {
                    let e = spec.weight_exponent.unwrap_or(1.0);
                    (1..=dim).map(|i| (i as f64).powf(-e)).collect()
                }
            };
            if weights.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: weights.len(),
                    context: "diagonal weights",
                });
            }
            Ok(Arc::new(diagonal_target(weights)?))
        }
        "quadratic" => {
            use rand::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
            Ok(Arc::new(QuadraticTarget::random(
                dim,
                spec.terms.unwrap_or(4),
                spec.scale.unwrap_or(0.5),
                &mut rng,
            )?))
        }
        "nemytskii" => {
            let basis = BasisSpec::sine(dim)?;
            Ok(Arc::new(nemytskii_target(
                &basis,
                spec.phi.unwrap_or(ScalarMap::Tanh),
                spec.quad_points.unwrap_or(2 * dim),
            )?))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown target '{other}' (expected identity, diagonal, quadratic, nemytskii)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::fd_oracle;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(dim: usize, r: &mut ChaCha8Rng) -> Coeffs {
        Coeffs::from_vec((0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
    }

    fn fd_on_operator(
        op: &dyn Operator,
        x: &Coeffs,
        dirs: &[Coeffs],
        step: f64,
    ) -> DVector<f64> {
        let f = |y: &DVector<f64>| {
            op.eval(&Coeffs::from(y.clone()))
                .unwrap()
                .as_vector()
                .clone()
        };
        let dvecs: Vec<DVector<f64>> = dirs.iter().map(|d| d.as_vector().clone()).collect();
        fd_oracle(&f, x.as_vector(), &dvecs, step).unwrap()
    }

    #[test]
    fn identity_derivatives() {
        let t = identity_target(5);
        let mut r = rng(1);
        let x = randn(5, &mut r);
        let h = randn(5, &mut r);
        assert_eq!(t.derivative(&x, std::slice::from_ref(&h)).unwrap(), h);
        assert_eq!(
            t.derivative(&x, &[h.clone(), h.clone()]).unwrap(),
            Coeffs::zeros(5)
        );
        assert_eq!(t.growth(1), (0.0, 2.0));
    }

    #[test]
    fn diagonal_action_and_operator_norm() {
        let dim = 8;
        let t = diagonal_target((1..=dim).map(|i| 1.0 / i as f64).collect()).unwrap();
        let e3 = Coeffs::basis(dim, 2);
        let out = t.eval(&e3).unwrap();
        assert_relative_eq!(out.as_slice()[2], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(out.as_slice().iter().filter(|v| **v != 0.0).count(), 1);
        // Max-weight oracle: the norm is attained at the first coordinate.
        assert_relative_eq!(t.operator_norm(), 1.0, epsilon = 1e-15);
        let mut r = rng(2);
        let x = randn(dim, &mut r);
        assert_eq!(
            t.derivative(&x, &[Coeffs::zeros(dim), Coeffs::zeros(dim)]).unwrap(),
            Coeffs::zeros(dim)
        );
    }

    #[test]
    fn quadratic_value_and_derivative_structure() {
        let dim = 6;
        let mut r = rng(3);
        let t = QuadraticTarget::random(dim, 3, 0.8, &mut r).unwrap();
        // F(0) = 0 and DF(0) = L.
        assert_eq!(t.eval(&Coeffs::zeros(dim)).unwrap(), Coeffs::zeros(dim));
        let h = randn(dim, &mut r);
        let df0 = t.derivative(&Coeffs::zeros(dim), std::slice::from_ref(&h)).unwrap();
        let lh = Coeffs::from_vec(
            h.as_slice()
                .iter()
                .enumerate()
                .map(|(i, &v)| v / (i + 1) as f64)
                .collect(),
        );
        assert!(df0.sub(&lh).norm() < 1e-14);
    }

    #[test]
    fn quadratic_second_derivative_symmetric() {
        let dim = 7;
        let mut r = rng(4);
        let t = QuadraticTarget::random(dim, 4, 1.0, &mut r).unwrap();
        let x = randn(dim, &mut r);
        let h = randn(dim, &mut r);
        let g = randn(dim, &mut r);
        let hg = t.derivative(&x, &[h.clone(), g.clone()]).unwrap();
        let gh = t.derivative(&x, &[g, h]).unwrap();
        assert!(hg.sub(&gh).norm() <= 1e-14 * hg.norm().max(1.0));
    }

    #[test]
    fn quadratic_first_derivative_matches_fd() {
        let dim = 6;
        let mut r = rng(5);
        let t = QuadraticTarget::random(dim, 3, 0.7, &mut r).unwrap();
        let x = randn(dim, &mut r);
        let h = randn(dim, &mut r);
        let exact = t.derivative(&x, std::slice::from_ref(&h)).unwrap();
        let fd = fd_on_operator(&t, &x, std::slice::from_ref(&h), 1e-5);
        assert!((exact.as_vector() - fd).norm() <= 1e-6);
    }

    #[test]
    fn quadratic_third_derivative_vanishes() {
        let dim = 5;
        let mut r = rng(6);
        let t = QuadraticTarget::random(dim, 2, 1.0, &mut r).unwrap();
        let x = randn(dim, &mut r);
        let dirs = [randn(dim, &mut r), randn(dim, &mut r), randn(dim, &mut r)];
        assert_eq!(t.derivative(&x, &dirs).unwrap(), Coeffs::zeros(dim));
    }

    #[test]
    fn nemytskii_identity_is_identity() {
        let basis = BasisSpec::sine(12).unwrap();
        let t = nemytskii_target(&basis, ScalarMap::Identity, 24).unwrap();
        let mut r = rng(7);
        let x = randn(12, &mut r);
        let y = t.eval(&x).unwrap();
        assert!(y.sub(&x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn nemytskii_tanh_zero_point() {
        let basis = BasisSpec::sine(10).unwrap();
        let t = nemytskii_target(&basis, ScalarMap::Tanh, 20).unwrap();
        assert_eq!(t.eval(&Coeffs::zeros(10)).unwrap(), Coeffs::zeros(10));
        // tanh'(0) = 1, so DF(0) = identity up to analysis error.
        let mut r = rng(8);
        let h = randn(10, &mut r);
        let d = t
            .derivative(&Coeffs::zeros(10), std::slice::from_ref(&h))
            .unwrap();
        assert!(d.sub(&h).norm() <= 1e-8 * h.norm());
    }

    #[test]
    fn nemytskii_second_derivative_matches_fd() {
        let basis = BasisSpec::sine(8).unwrap();
        let t = nemytskii_target(&basis, ScalarMap::Tanh, 24).unwrap();
        let mut r = rng(9);
        let x = randn(8, &mut r).scaled(0.3);
        let h = randn(8, &mut r).scaled(0.5);
        let exact = t.derivative(&x, &[h.clone(), h.clone()]).unwrap();
        let fd = fd_on_operator(&t, &x, &[h.clone(), h], 1e-3);
        assert!(
            (exact.as_vector() - &fd).norm() <= 1e-5 * fd.norm().max(1.0),
            "deviation {}",
            (exact.as_vector() - fd).norm()
        );
    }

    #[test]
    fn nemytskii_needs_oversampling() {
        let basis = BasisSpec::sine(8).unwrap();
        assert!(nemytskii_target(&basis, ScalarMap::Tanh, 8).is_err());
    }

    #[test]
    fn cylindrical_full_rank_is_inner() {
        let dim = 8;
        let mut r = rng(10);
        let inner: Arc<dyn Operator> =
            Arc::new(QuadraticTarget::random(dim, 3, 0.8, &mut r).unwrap());
        let cyl = cylindrical_approximation(inner.clone(), dim, dim).unwrap();
        let x = randn(dim, &mut r);
        assert_eq!(cyl.eval(&x).unwrap(), inner.eval(&x).unwrap());
    }

    #[test]
    fn cylindrical_identity_is_truncation() {
        let dim = 8;
        let inner: Arc<dyn Operator> = Arc::new(identity_target(dim));
        let cyl = cylindrical_approximation(inner, 3, 3).unwrap();
        let mut r = rng(11);
        let x = randn(dim, &mut r);
        assert_eq!(cyl.eval(&x).unwrap(), x.truncate(3));
    }

    #[test]
    fn cylindrical_matches_partial_sum_composition_pointwise() {
        // F_{d,m} = S_m ∘ F ∘ S_d with projection partial sums.
        let dim = 10;
        let mut r = rng(12);
        let inner: Arc<dyn Operator> =
            Arc::new(QuadraticTarget::random(dim, 4, 0.6, &mut r).unwrap());
        let (d, m) = (4, 6);
        let cyl = cylindrical_approximation(inner.clone(), d, m).unwrap();
        for _ in 0..20 {
            let x = randn(dim, &mut r);
            let via_truncation = inner.eval(&x.truncate(d)).unwrap().truncate(m);
            let got = cyl.eval(&x).unwrap();
            assert!(got.sub(&via_truncation).norm() <= 1e-13 * got.norm().max(1.0));
        }
    }

    #[test]
    fn cylindrical_derivative_truncates_directions() {
        let dim = 9;
        let mut r = rng(13);
        let inner: Arc<dyn Operator> =
            Arc::new(QuadraticTarget::random(dim, 3, 0.9, &mut r).unwrap());
        let cyl = cylindrical_approximation(inner.clone(), 5, 4).unwrap();
        let x = randn(dim, &mut r);
        let h = randn(dim, &mut r);
        let got = cyl.derivative(&x, std::slice::from_ref(&h)).unwrap();
        let want = inner
            .derivative(&x.truncate(5), &[h.truncate(5)])
            .unwrap()
            .truncate(4);
        assert!(got.sub(&want).norm() <= 1e-14);
    }

    #[test]
    fn growth_certificates_hold_on_gaussian_draws() {
        let dim = 12;
        let mut r = rng(14);
        let targets: Vec<Arc<dyn Operator>> = vec![
            Arc::new(identity_target(dim)),
            Arc::new(diagonal_target((1..=dim).map(|i| 1.0 / i as f64).collect()).unwrap()),
            Arc::new(QuadraticTarget::random(dim, 4, 0.8, &mut r).unwrap()),
        ];
        let gamma = crate::measures::GaussianSpec::power(dim, 2.0, 1.0).unwrap();
        let draws = crate::measures::sample_gaussian(&gamma, 10_000, 42);
        for t in &targets {
            for order in 0..=2usize {
                let (q, p) = t.growth(order);
                let mut worst = 0.0f64;
                let mut dir_rng = rng(15);
                for x in draws.iter().take(500) {
                    let dirs: Vec<Coeffs> = (0..order)
                        .map(|_| {
                            let v = randn(dim, &mut dir_rng);
                            v.scaled(1.0 / v.norm())
                        })
                        .collect();
                    let v = t.derivative(x, &dirs).unwrap().norm().powf(p)
                        / (1.0 + x.norm().powf(q));
                    worst = worst.max(v);
                }
                assert!(
                    worst < 50.0,
                    "growth violated: order {order} ratio {worst}"
                );
            }
        }
    }

    #[test]
    fn registry_keys() {
        let dim = 8;
        for name in ["identity", "diagonal", "quadratic", "nemytskii"] {
            let spec = TargetSpec {
                name: name.to_string(),
                weights: None,
                weight_exponent: None,
                terms: None,
                scale: None,
                seed: None,
                phi: None,
                quad_points: None,
            };
            let op = from_registry(&spec, dim).unwrap();
            assert_eq!(op.dim_in(), dim);
        }
        let bad = TargetSpec {
            name: "unknown".into(),
            weights: None,
            weight_exponent: None,
            terms: None,
            scale: None,
            seed: None,
            phi: None,
            quad_points: None,
        };
        assert!(from_registry(&bad, dim).is_err());
    }
}
