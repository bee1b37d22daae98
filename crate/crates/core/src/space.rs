//! Truncated coefficient spaces: bases, encoders, decoders, partial sums,
//! compact-set samplers, and the DeepONet/PCA encoder constructions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};

/// Default truncation dimension of the ambient space.
pub const DEFAULT_AMBIENT_DIM: usize = 64;

/// Relative singular-value threshold below which a family of vectors is
/// treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Basis
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `e_i(s) = sqrt(2) sin(i pi s)`, orthonormal in `L^2(0,1)`.
    SineL2UnitInterval,
    /// Pure coefficient space with no pointwise realization.
    AbstractCoefficient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub ambient_dim: usize,
}

impl BasisSpec {
    pub fn new(kind: BasisKind, ambient_dim: usize) -> Result<Self> {
        if ambient_dim == 0 {
            return Err(Error::InvalidArgument(
                "ambient_dim must be at least 1".into(),
            ));
        }
        Ok(Self { kind, ambient_dim })
    }

    pub fn sine(ambient_dim: usize) -> Result<Self> {
        Self::new(BasisKind::SineL2UnitInterval, ambient_dim)
    }

    pub fn abstract_coefficient(ambient_dim: usize) -> Result<Self> {
        Self::new(BasisKind::AbstractCoefficient, ambient_dim)
    }

    /// Pointwise value of the `index`-th basis element (1-based) at `s`.
    pub fn eval_element(&self, index: usize, s: f64) -> Result<f64> {
        match self.kind {
            BasisKind::SineL2UnitInterval => {
                Ok(std::f64::consts::SQRT_2 * (index as f64 * std::f64::consts::PI * s).sin())
            }
            BasisKind::AbstractCoefficient => Err(Error::InvalidArgument(
                "abstract coefficient basis has no pointwise realization".into(),
            )),
        }
    }

    /// Row of basis values `(e_1(s), ..., e_D(s))`; pairing a coefficient
    /// vector against it evaluates the synthesized function at `s`.
    pub fn synthesis_row(&self, s: f64) -> Result<DVector<f64>> {
        (1..=self.ambient_dim)
            .map(|i| self.eval_element(i, s))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    /// Stable content digest, embedded in model checkpoints.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(match self.kind {
            BasisKind::SineL2UnitInterval => b"sine_l2_unit_interval",
            BasisKind::AbstractCoefficient => b"abstract_coefficient",
        });
        h.write(&(self.ambient_dim as u64).to_le_bytes());
        h.finish()
    }
}

/// Minimal FNV-1a; enough for content digests, not cryptographic.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Coefficient vectors
// ---------------------------------------------------------------------------

/// An element of the truncated ambient space, stored as coefficients against
/// the basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coeffs(DVector<f64>);

impl Coeffs {
    pub fn zeros(dim: usize) -> Self {
        Coeffs(DVector::zeros(dim))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Coeffs(DVector::from_vec(values))
    }

    /// Basis vector `e_{index}` (0-based) in a space of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[index] = 1.0;
        Coeffs(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, other: &Coeffs) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Coeffs {
        Coeffs(&self.0 * a)
    }

    pub fn add(&self, other: &Coeffs) -> Coeffs {
        Coeffs(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Coeffs) -> Coeffs {
        Coeffs(&self.0 - &other.0)
    }

    /// `a*x + b*y`.
    pub fn combine(a: f64, x: &Coeffs, b: f64, y: &Coeffs) -> Coeffs {
        Coeffs(&x.0 * a + &y.0 * b)
    }

    /// Coordinate truncation `P_n`: keeps the first `n` coefficients.
    pub fn truncate(&self, n: usize) -> Coeffs {
        let mut v = self.0.clone();
        for i in n..v.len() {
            v[i] = 0.0;
        }
        Coeffs(v)
    }
}

impl From<DVector<f64>> for Coeffs {
    fn from(v: DVector<f64>) -> Self {
        Coeffs(v)
    }
}

// ---------------------------------------------------------------------------
// Encoders and decoders
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderTag {
    Projection,
    Deeponet,
    Pca,
    Frame,
}

/// Finite-rank coordinate operator `x -> (<a_i, x>)_{i<=N}`; the pairing is
/// the coefficient dot product.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    tag: EncoderTag,
    /// `N x D` functional matrix; row `i` is `a_i`.
    rows: DMatrix<f64>,
}

impl Encoder {
    /// First-`n` coordinate projection.
    pub fn projection(n: usize, ambient_dim: usize) -> Result<Self> {
        if n == 0 || n > ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "projection rank {n} must lie in 1..={ambient_dim}"
            )));
        }
        let mut rows = DMatrix::zeros(n, ambient_dim);
        for i in 0..n {
            rows[(i, i)] = 1.0;
        }
        Ok(Encoder {
            tag: EncoderTag::Projection,
            rows,
        })
    }

    pub fn from_rows(tag: EncoderTag, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidArgument("encoder needs at least one row".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder rows"));
        }
        if tag == EncoderTag::Projection {
            for i in 0..rows.nrows() {
                for j in 0..rows.ncols() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if rows[(i, j)] != want {
                        return Err(Error::InvalidArgument(
                            "projection encoder rows must be the leading standard basis rows"
                                .into(),
                        ));
                    }
                }
            }
        }
        Ok(Encoder { tag, rows })
    }

    pub fn tag(&self) -> EncoderTag {
        self.tag
    }

    pub fn rank(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// `x -> (<a_i, x>)_i`.
    pub fn encode(&self, x: &Coeffs) -> Result<DVector<f64>> {
        if x.dim() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.dim(),
                context: "encode input",
            });
        }
        Ok(&self.rows * x.as_vector())
    }

    /// Largest singular value of the functional matrix.
    pub fn operator_norm(&self) -> f64 {
        self.rows.clone().svd(false, false).singular_values[0]
    }
}

/// Finite-rank embedding operator `y -> sum_j y_j e_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoder {
    /// `D x N'` element matrix; column `j` is `e_j`.
    elements: DMatrix<f64>,
}

impl Decoder {
    /// First-`n` coordinate embedding.
    pub fn projection(n: usize, ambient_dim: usize) -> Result<Self> {
        if n == 0 || n > ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "projection rank {n} must lie in 1..={ambient_dim}"
            )));
        }
        let mut elements = DMatrix::zeros(ambient_dim, n);
        for i in 0..n {
            elements[(i, i)] = 1.0;
        }
        Ok(Decoder { elements })
    }

    /// Builds from columns, rejecting linearly dependent elements.
    pub fn from_elements(elements: DMatrix<f64>) -> Result<Self> {
        if elements.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "decoder needs at least one element".into(),
            ));
        }
        if elements.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder elements"));
        }
        let svd = elements.clone().svd(false, false);
        let smax = svd.singular_values[0];
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * smax)
            .count();
        if rank < elements.ncols() {
            return Err(Error::DependentDecoderElements {
                rank,
                expected: elements.ncols(),
            });
        }
        Ok(Decoder { elements })
    }

    pub fn rank(&self) -> usize {
        self.elements.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn elements(&self) -> &DMatrix<f64> {
        &self.elements
    }

    pub fn decode(&self, y: &DVector<f64>) -> Result<Coeffs> {
        if y.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: y.len(),
                context: "decode input",
            });
        }
        Ok(Coeffs(&self.elements * y))
    }

    pub fn operator_norm(&self) -> f64 {
        self.elements.clone().svd(false, false).singular_values[0]
    }
}

/// Partial-sum operator `S = D ∘ E`; for a projection pair this is the
/// coordinate truncation `P_N` with operator norm 1.
pub fn partial_sum(encoder: &Encoder, decoder: &Decoder, x: &Coeffs) -> Result<Coeffs> {
    if encoder.rank() != decoder.rank() {
        return Err(Error::DimensionMismatch {
            expected: encoder.rank(),
            got: decoder.rank(),
            context: "partial_sum encoder/decoder ranks",
        });
    }
    decoder.decode(&encoder.encode(x)?)
}

// ---------------------------------------------------------------------------
// Compact sets
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactShape {
    Box,
    Ellipsoid,
}

/// Hilbert-cube-style compact set with nonincreasing radii `c_i`, either the
/// box `{|x_i| <= c_i}` or the ellipsoid `{sum (x_i/c_i)^2 <= 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactSpec {
    radii: Vec<f64>,
    shape: CompactShape,
}

impl CompactSpec {
    pub fn new(radii: Vec<f64>, shape: CompactShape) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidArgument("radii must be nonempty".into()));
        }
        for w in radii.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidArgument(
                    "radii must be nonincreasing".into(),
                ));
            }
        }
        if radii.iter().any(|&c| c <= 0.0 || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "radii must be positive and finite".into(),
            ));
        }
        Ok(CompactSpec { radii, shape })
    }

    /// Default summable schedule `c_i = c0 / i^2`.
    pub fn inverse_square(c0: f64, dim: usize, shape: CompactShape) -> Result<Self> {
        let radii = (1..=dim).map(|i| c0 / (i as f64 * i as f64)).collect();
        Self::new(radii, shape)
    }

    pub fn dim(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn shape(&self) -> CompactShape {
        self.shape
    }

    pub fn contains(&self, x: &Coeffs) -> bool {
        if x.dim() != self.dim() {
            return false;
        }
        match self.shape {
            CompactShape::Box => x
                .as_slice()
                .iter()
                .zip(&self.radii)
                .all(|(&v, &c)| v.abs() <= c * (1.0 + 1e-12)),
            CompactShape::Ellipsoid => {
                let s: f64 = x
                    .as_slice()
                    .iter()
                    .zip(&self.radii)
                    .map(|(&v, &c)| (v / c) * (v / c))
                    .sum();
                s <= 1.0 + 1e-12
            }
        }
    }

    /// `sqrt(sum_{i>n} c_i^2)`: exact bound on `|x - P_n x|` over the box.
    pub fn tail_bound(&self, n: usize) -> f64 {
        self.radii
            .iter()
            .skip(n)
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// One draw from the set; box coordinates are independent uniforms, the
    /// ellipsoid is a uniformly drawn ball image.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Coeffs {
        let d = self.dim();
        match self.shape {
            CompactShape::Box => {
                let mut v = DVector::zeros(d);
                for i in 0..d {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    v[i] = self.radii[i] * u;
                }
                Coeffs(v)
            }
            CompactShape::Ellipsoid => {
                let mut v = DVector::zeros(d);
                for i in 0..d {
                    v[i] = rng.sample::<f64, _>(StandardNormal);
                }
                let norm = v.norm();
                if norm == 0.0 {
                    return Coeffs(v);
                }
                let u: f64 = rng.random_range(0.0..=1.0);
                let r = u.powf(1.0 / d as f64);
                for i in 0..d {
                    v[i] = self.radii[i] * r * v[i] / norm;
                }
                Coeffs(v)
            }
        }
    }

    /// Seeded batch of draws; identical seeds give identical samples.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Coeffs> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

// ---------------------------------------------------------------------------
// DeepONet sensor encoder
// ---------------------------------------------------------------------------

/// Values of the normalized bump partition `P_{eps,i}(y)` at `y`, one entry
/// per sensor. The unnormalized bump is `exp(-1/(eps^2 - d(y,y_i)^2))` inside
/// the radius and zero outside.
pub fn deeponet_partition(sensors: &[f64], epsilon: f64, y: f64) -> Vec<f64> {
    let mut raw: Vec<f64> = sensors
        .iter()
        .map(|&s| {
            let d2 = (y - s) * (y - s);
            let gap = epsilon * epsilon - d2;
            if gap > 0.0 {
                (-1.0 / gap).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        for v in &mut raw {
            *v /= total;
        }
    }
    raw
}

/// Sensor-evaluation encoder and bump-partition decoder on `[0,1]`.
///
/// Encoder row `i` is the synthesis row at sensor `y_i`, so the pairing
/// evaluates `u(y_i)`. Decoder element `j` holds the basis coefficients of
/// the partition function `P_{eps,j}`, computed by composite Simpson
/// quadrature.
pub fn deeponet_encoder(
    basis: &BasisSpec,
    sensors: &[f64],
    epsilon: f64,
) -> Result<(Encoder, Decoder)> {
    if sensors.is_empty() {
        return Err(Error::InvalidArgument("need at least one sensor".into()));
    }
    if epsilon <= 0.0 || epsilon.is_nan() {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if sensors.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidArgument(
            "sensors must lie in [0,1]".into(),
        ));
    }
    let mut sorted = sensors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidArgument(
                "sensors must be pairwise distinct".into(),
            ));
        }
    }
    // Covering check at the extreme points: the endpoints and the midpoints
    // between consecutive sensors maximize the distance to the sensor set.
    let mut worst: (f64, f64) = (*sorted.first().unwrap(), sorted[0]);
    let end_gap = 1.0 - sorted.last().unwrap();
    if end_gap > worst.1 {
        worst = (1.0, end_gap);
    }
    for w in sorted.windows(2) {
        let gap = (w[1] - w[0]) / 2.0;
        if gap > worst.1 {
            worst = ((w[0] + w[1]) / 2.0, gap);
        }
    }
    // Strict inequality: at distance exactly epsilon every bump vanishes.
    if worst.1 >= epsilon {
        return Err(Error::CoveringViolated {
            point: worst.0,
            distance: worst.1,
            epsilon,
        });
    }

    let d = basis.ambient_dim;
    let mut rows = DMatrix::zeros(sensors.len(), d);
    for (i, &s) in sensors.iter().enumerate() {
        rows.set_row(i, &basis.synthesis_row(s)?.transpose());
    }
    let encoder = Encoder::from_rows(EncoderTag::Deeponet, rows)?;

    // Basis-coefficient expansion of each partition function.
    const QUAD_INTERVALS: usize = 8192;
    let mut elements = DMatrix::zeros(d, sensors.len());
    for j in 1..=d {
        for (i, _) in sensors.iter().enumerate() {
            let f = |y: f64| {
                deeponet_partition(sensors, epsilon, y)[i] * basis.eval_element(j, y).unwrap()
            };
            elements[(j - 1, i)] = simpson(&f, 0.0, 1.0, QUAD_INTERVALS);
        }
    }
    let decoder = Decoder::from_elements(elements)?;
    Ok((encoder, decoder))
}

/// Composite Simpson rule with `n` (even) intervals.
pub(crate) fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

// ---------------------------------------------------------------------------
// PCA encoder
// ---------------------------------------------------------------------------

/// Top-`n` eigenvectors of the empirical uncentered covariance, as an
/// orthonormal encoder/decoder pair. Returns the full eigenvalue spectrum in
/// nonincreasing order alongside.
pub fn pca_encoder(samples: &[Coeffs], n: usize) -> Result<(Encoder, Decoder, Vec<f64>)> {
    if samples.len() < n {
        return Err(Error::InvalidArgument(format!(
            "need at least {n} samples, got {}",
            samples.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let d = samples[0].dim();
    if n > d {
        return Err(Error::InvalidArgument(format!(
            "requested {n} modes in dimension {d}"
        )));
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in samples {
        if x.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.dim(),
                context: "pca sample",
            });
        }
        cov += x.as_vector() * x.as_vector().transpose();
    }
    cov /= samples.len() as f64;

    let eig = cov.symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let lead = eigenvalues[0];
    let rank = eigenvalues
        .iter()
        .filter(|&&l| l > RANK_TOL * lead.max(f64::MIN_POSITIVE))
        .count();
    if rank < n {
        return Err(Error::DegenerateRank { rank, requested: n });
    }

    let mut rows = DMatrix::zeros(n, d);
    let mut elements = DMatrix::zeros(d, n);
    for (r, &i) in idx.iter().take(n).enumerate() {
        let v = eig.eigenvectors.column(i);
        rows.set_row(r, &v.transpose());
        elements.set_column(r, &v);
    }
    let encoder = Encoder::from_rows(EncoderTag::Pca, rows)?;
    let decoder = Decoder::from_elements(elements)?;
    Ok((encoder, decoder, eigenvalues))
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Writes sampled points with header `index,coeff_1,...,coeff_D`.
pub fn write_points_csv<W: Write>(mut w: W, points: &[Coeffs]) -> Result<()> {
    let d = points.first().map(|p| p.dim()).unwrap_or(0);
    write!(w, "index")?;
    for j in 1..=d {
        write!(w, ",coeff_{j}")?;
    }
    writeln!(w)?;
    for (i, p) in points.iter().enumerate() {
        write!(w, "{i}")?;
        for v in p.as_slice() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
