//! Seeded samplers for finite measures on `X` and `X x X^k`, Gaussian
//! measures with trace-class covariance, pushforwards, and moment
//! functionals.
//!
//! Measures are represented operationally: a sampler plus a total mass.
//! Integrals are Monte-Carlo estimates with reported standard errors. The
//! joint measure is `mu = mu^0 (x) eta` with `mu^0` the input marginal on `X`
//! and `eta` the law of the `k` direction slots.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc;
use crate::metrics::NormEstimate;
use crate::space::{Coeffs, CompactSpec, Encoder};

// ---------------------------------------------------------------------------
// Gaussian spec
// ---------------------------------------------------------------------------

/// Centered Gaussian with covariance diagonal in the basis; the eigenvalues
/// are required nonincreasing and nonnegative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    eigenvalues: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidArgument("eigenvalues must be nonempty".into()));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::NegativeEigenvalue { index: i, value: l });
            }
        }
        for w in eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidArgument(
                    "eigenvalues must be nonincreasing".into(),
                ));
            }
        }
        Ok(GaussianSpec { eigenvalues })
    }

    /// `lambda_i = scale * i^{-exponent}`.
    pub fn power(dim: usize, exponent: f64, scale: f64) -> Result<Self> {
        Self::new(
            (1..=dim)
                .map(|i| scale * (i as f64).powf(-exponent))
                .collect(),
        )
    }

    pub fn point_mass(dim: usize) -> Self {
        GaussianSpec {
            eigenvalues: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace(&self) -> f64 {
        mc::pairwise_sum(&self.eigenvalues)
    }

    /// Karhunen-Loeve draw: `x_i = sqrt(lambda_i) xi_i`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Coeffs {
        let mut v = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let xi: f64 = rng.sample(StandardNormal);
            v[i] = self.eigenvalues[i].sqrt() * xi;
        }
        Coeffs::from(v)
    }
}

/// Seeded batch of Gaussian draws; identical seeds give identical streams.
pub fn sample_gaussian(spec: &GaussianSpec, n: usize, seed: u64) -> Vec<Coeffs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| spec.draw(&mut rng)).collect()
}

// ---------------------------------------------------------------------------
// Measure samplers
// ---------------------------------------------------------------------------

/// Input marginal `mu^0` (up to total mass).
#[derive(Clone, Debug)]
pub enum InputMeasure {
    Gaussian(GaussianSpec),
    UniformCompact(CompactSpec),
    Empirical(Vec<Coeffs>),
}

impl InputMeasure {
    pub fn dim(&self) -> usize {
        match self {
            InputMeasure::Gaussian(g) => g.dim(),
            InputMeasure::UniformCompact(k) => k.dim(),
            InputMeasure::Empirical(pts) => pts.first().map(|p| p.dim()).unwrap_or(0),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Coeffs {
        match self {
            InputMeasure::Gaussian(g) => g.draw(rng),
            InputMeasure::UniformCompact(k) => k.draw(rng),
            InputMeasure::Empirical(pts) => pts[rng.random_range(0..pts.len())].clone(),
        }
    }
}

/// Law of the direction slots `(h^1,...,h^k)`.
#[derive(Clone, Debug)]
pub enum DirectionLaw {
    /// Independent identical Gaussian per slot: `eta = gamma^(x)k`.
    Iid(GaussianSpec),
    /// Independent slots with per-slot Gaussians (still a product).
    PerSlot(Vec<GaussianSpec>),
    /// One Gaussian draw reused for every slot; exchangeable but not a
    /// product measure for `k >= 2`.
    Coupled(GaussianSpec),
}

impl DirectionLaw {
    pub fn dim(&self) -> usize {
        match self {
            DirectionLaw::Iid(g) | DirectionLaw::Coupled(g) => g.dim(),
            DirectionLaw::PerSlot(gs) => gs.first().map(|g| g.dim()).unwrap_or(0),
        }
    }

    fn draw(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<Coeffs> {
        match self {
            DirectionLaw::Iid(g) => (0..k).map(|_| g.draw(rng)).collect(),
            DirectionLaw::PerSlot(gs) => gs.iter().take(k).map(|g| g.draw(rng)).collect(),
            DirectionLaw::Coupled(g) => {
                let h = g.draw(rng);
                vec![h; k]
            }
        }
    }
}

/// One joint draw `(x, h^1,...,h^k)`.
#[derive(Clone, Debug)]
pub struct Draw {
    pub x: Coeffs,
    pub dirs: Vec<Coeffs>,
}

/// Finite measure `mu = mu^0 (x) eta` on `X x X^k`, realized as a seeded
/// sampler with explicit total mass. A sampler value is immutable; streams
/// are owned by the callers (one per worker batch).
#[derive(Clone, Debug)]
pub struct MeasureSampler {
    input: InputMeasure,
    directions: DirectionLaw,
    k: usize,
    total_mass: f64,
}

impl MeasureSampler {
    pub fn new(
        input: InputMeasure,
        directions: DirectionLaw,
        k: usize,
        total_mass: f64,
    ) -> Result<Self> {
        if total_mass <= 0.0 || !total_mass.is_finite() {
            return Err(Error::InvalidArgument("total mass must be positive".into()));
        }
        if k > 0 && directions.dim() != input.dim() {
            return Err(Error::DimensionMismatch {
                expected: input.dim(),
                got: directions.dim(),
                context: "direction dimension",
            });
        }
        if let DirectionLaw::PerSlot(gs) = &directions {
            if gs.len() < k {
                return Err(Error::InvalidArgument(format!(
                    "need {k} per-slot direction laws, got {}",
                    gs.len()
                )));
            }
        }
        if let InputMeasure::Empirical(pts) = &input {
            if pts.is_empty() {
                return Err(Error::InvalidArgument(
                    "empirical measure needs at least one point".into(),
                ));
            }
        }
        Ok(MeasureSampler {
            input,
            directions,
            k,
            total_mass,
        })
    }

    /// `mu^0 = gamma_in`, `eta = gamma_dir^(x)k`, unit mass.
    pub fn gaussian(input: GaussianSpec, directions: GaussianSpec, k: usize) -> Result<Self> {
        Self::new(
            InputMeasure::Gaussian(input),
            DirectionLaw::Iid(directions),
            k,
            1.0,
        )
    }

    pub fn input(&self) -> &InputMeasure {
        &self.input
    }

    pub fn directions(&self) -> &DirectionLaw {
        &self.directions
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }

    /// Whether `mu` factorizes over the input and every direction slot.
    pub fn is_product(&self) -> bool {
        !(matches!(self.directions, DirectionLaw::Coupled(_)) && self.k >= 2)
    }

    /// Marginal `mu^{0:i}` over `X x X^i`.
    pub fn marginal(&self, i: usize) -> Result<MeasureSampler> {
        if i > self.k {
            return Err(Error::InvalidArgument(format!(
                "marginal order {i} exceeds k = {}",
                self.k
            )));
        }
        let mut m = self.clone();
        m.k = i;
        Ok(m)
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        Draw {
            x: self.input.draw(rng),
            dirs: self.directions.draw(self.k, rng),
        }
    }
}

// ---------------------------------------------------------------------------
// Moment functionals
// ---------------------------------------------------------------------------

/// Moment weight `1 + t^e`; a zero exponent drops the factor so that
/// `q = p = 0` recovers the total mass.
fn moment_weight(t: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        1.0 + t.powf(e)
    }
}

/// Monte-Carlo estimate of the moment
/// `int (1+|x|^q) prod_j (1+|h_j|^p) d mu^{0:k}` over the order-`k` marginal.
pub fn moment(
    mu: &MeasureSampler,
    k: usize,
    q: f64,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    let marginal = mu.marginal(k)?;
    let (means, ses) = mc::mean_stderr_vec(n, seed, 1, |rng, out| {
        let draw = marginal.draw(rng);
        let mut w = moment_weight(draw.x.norm(), q);
        for h in &draw.dirs {
            w *= moment_weight(h.norm(), p);
        }
        out[0] = w;
    });
    let value = mu.total_mass() * means[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("moment estimate"));
    }
    NormEstimate::mc_mean_power(value, mu.total_mass() * ses[0], n)
}

// ---------------------------------------------------------------------------
// Pushforward
// ---------------------------------------------------------------------------

/// Finite-dimensional image of the input marginal under an encoder: draws
/// `E x` for `x ~ mu^0`.
#[derive(Clone, Debug)]
pub struct PushforwardSampler {
    encoder: Encoder,
    input: InputMeasure,
    total_mass: f64,
}

impl PushforwardSampler {
    pub fn dim(&self) -> usize {
        self.encoder.rank()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.encoder
            .encode(&self.input.draw(rng))
            .expect("dims checked at construction")
    }
}

pub fn pushforward(encoder: &Encoder, mu: &MeasureSampler) -> Result<PushforwardSampler> {
    if encoder.ambient_dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: encoder.ambient_dim(),
            context: "pushforward encoder",
        });
    }
    Ok(PushforwardSampler {
        encoder: encoder.clone(),
        input: mu.input.clone(),
        total_mass: mu.total_mass(),
    })
}

// ---------------------------------------------------------------------------
// Radon-Nikodym bound (product case)
// ---------------------------------------------------------------------------

/// Monte-Carlo estimate of `int prod_{r<=i} |h^r|^p d eta^{1:i}`: the
/// constant density bound of the reweighted marginal with respect to `mu^0`
/// in the product case. Refuses non-product measures rather than guessing a
/// disintegration.
pub fn rn_bound(
    mu: &MeasureSampler,
    p: f64,
    i: usize,
    n: usize,
    seed: u64,
) -> Result<NormEstimate> {
    if !mu.is_product() {
        return Err(Error::NonProductMeasure);
    }
    if i > mu.k() {
        return Err(Error::InvalidArgument(format!(
            "order {i} exceeds k = {}",
            mu.k()
        )));
    }
    if i == 0 {
        return NormEstimate::exact(1.0);
    }
    let marginal = mu.marginal(i)?;
    let (means, ses) = mc::mean_stderr_vec(n, seed, 1, |rng, out| {
        let draw = marginal.draw(rng);
        let mut w = 1.0;
        for h in &draw.dirs {
            w *= h.norm().powf(p);
        }
        out[0] = w;
    });
    if !means[0].is_finite() {
        return Err(Error::NonFinite("rn_bound estimate"));
    }
    NormEstimate::mc_mean_power(means[0], ses[0], n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::CompactShape;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_eigenvalues_give_zero_samples() {
        let g = GaussianSpec::point_mass(6);
        for x in sample_gaussian(&g, 20, 1) {
            assert_eq!(x, Coeffs::zeros(6));
        }
    }

    #[test]
    fn single_mode_variance_matches() {
        let g = GaussianSpec::new(vec![1.0, 0.0, 0.0]).unwrap();
        let samples = sample_gaussian(&g, 100_000, 2);
        let var0 =
            samples.iter().map(|x| x.as_slice()[0].powi(2)).sum::<f64>() / samples.len() as f64;
        let var1 =
            samples.iter().map(|x| x.as_slice()[1].powi(2)).sum::<f64>() / samples.len() as f64;
        assert!((var0 - 1.0).abs() < 0.02, "var0 = {var0}");
        assert_eq!(var1, 0.0);
    }

    #[test]
    fn mean_square_norm_matches_trace() {
        let g = GaussianSpec::power(16, 2.0, 1.0).unwrap();
        let samples = sample_gaussian(&g, 100_000, 3);
        let ms = samples.iter().map(|x| x.norm().powi(2)).sum::<f64>() / samples.len() as f64;
        assert_relative_eq!(ms, g.trace(), max_relative = 0.02);
    }

    #[test]
    fn seeded_streams_are_bit_identical() {
        let g = GaussianSpec::power(8, 2.0, 1.0).unwrap();
        assert_eq!(sample_gaussian(&g, 50, 7), sample_gaussian(&g, 50, 7));
        let mu = MeasureSampler::gaussian(g.clone(), g, 2).unwrap();
        let a: Vec<Draw> = {
            let mut r = rng(9);
            (0..10).map(|_| mu.draw(&mut r)).collect()
        };
        let mut r = rng(9);
        for d in a {
            let e = mu.draw(&mut r);
            assert_eq!(d.x, e.x);
            assert_eq!(d.dirs, e.dirs);
        }
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        assert!(matches!(
            GaussianSpec::new(vec![1.0, -0.1]),
            Err(Error::NegativeEigenvalue { .. })
        ));
    }

    #[test]
    fn moment_of_point_mass_is_mass() {
        let mu = MeasureSampler::new(
            InputMeasure::Empirical(vec![Coeffs::zeros(4)]),
            DirectionLaw::Iid(GaussianSpec::point_mass(4)),
            1,
            1.0,
        )
        .unwrap();
        let est = moment(&mu, 1, 2.0, 2.0, 100, 0).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn moment_zero_exponents_recover_total_mass() {
        let g = GaussianSpec::power(8, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::new(
            InputMeasure::Gaussian(g.clone()),
            DirectionLaw::Iid(g),
            2,
            2.5,
        )
        .unwrap();
        let est = moment(&mu, 2, 0.0, 0.0, 500, 1).unwrap();
        assert_eq!(est.value, 2.5);
    }

    #[test]
    fn moment_order_zero_matches_trace_oracle() {
        // E[1 + |x|^2] = 1 + sum lambda_i on the truncation.
        let dim = 64;
        let g = GaussianSpec::power(dim, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g.clone(), 0).unwrap();
        let est = moment(&mu, 0, 2.0, 2.0, 200_000, 5).unwrap();
        let exact = 1.0 + g.trace();
        assert!(
            (est.value - exact).abs() < 3.0 * est.std_error + 1e-3,
            "estimate {} vs exact {exact}",
            est.value
        );
        // The truncated trace sits within 1/dim of the full series.
        assert!((exact - (1.0 + std::f64::consts::PI.powi(2) / 6.0)).abs() < 1.0 / dim as f64);
    }

    #[test]
    fn marginal_moment_bounded_by_full_moment() {
        let g = GaussianSpec::power(12, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g, 3).unwrap();
        let full = moment(&mu, 3, 2.0, 2.0, 40_000, 11).unwrap();
        for i in 0..3 {
            let m = moment(&mu, i, 2.0, 2.0, 40_000, 11).unwrap();
            assert!(
                m.value <= full.value + 2.0 * (m.std_error + full.std_error),
                "order {i}: {} vs {}",
                m.value,
                full.value
            );
        }
    }

    #[test]
    fn pushforward_of_projection_keeps_leading_variances() {
        let dim = 10;
        let g = GaussianSpec::power(dim, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g.clone(), 0).unwrap();
        let e = Encoder::projection(3, dim).unwrap();
        let pf = pushforward(&e, &mu).unwrap();
        let mut r = rng(13);
        let n = 100_000;
        let mut var = [0.0; 3];
        for _ in 0..n {
            let y = pf.draw(&mut r);
            for j in 0..3 {
                var[j] += y[j] * y[j];
            }
        }
        for j in 0..3 {
            var[j] /= n as f64;
            assert_relative_eq!(var[j], g.eigenvalues()[j], max_relative = 0.03);
        }
    }

    #[test]
    fn pushforward_point_mass_is_encoded_point() {
        let x0 = Coeffs::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mu = MeasureSampler::new(
            InputMeasure::Empirical(vec![x0.clone()]),
            DirectionLaw::Iid(GaussianSpec::point_mass(4)),
            0,
            1.0,
        )
        .unwrap();
        let e = Encoder::projection(2, 4).unwrap();
        let pf = pushforward(&e, &mu).unwrap();
        let mut r = rng(1);
        let y = pf.draw(&mut r);
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn pushforward_covariance_transport() {
        // Empirical covariance of E x matches E Q E^T within 2%.
        let dim = 12;
        let g = GaussianSpec::power(dim, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g.clone(), 0).unwrap();
        let mut r = rng(17);
        let rows =
            nalgebra::DMatrix::from_fn(3, dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let e = Encoder::from_rows(crate::space::EncoderTag::Frame, rows.clone()).unwrap();
        let pf = pushforward(&e, &mu).unwrap();
        let n = 100_000;
        let mut cov = nalgebra::DMatrix::zeros(3, 3);
        let mut rr = rng(18);
        for _ in 0..n {
            let y = pf.draw(&mut rr);
            cov += &y * y.transpose();
        }
        cov /= n as f64;
        let q = nalgebra::DMatrix::from_diagonal(&DVector::from_vec(g.eigenvalues().to_vec()));
        let want = &rows * q * rows.transpose();
        assert!(
            (cov.clone() - &want).norm() <= 0.02 * want.norm(),
            "cov deviation {}",
            (cov - &want).norm() / want.norm()
        );
    }

    #[test]
    fn rn_bound_point_mass_directions() {
        let g = GaussianSpec::power(6, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::new(
            InputMeasure::Gaussian(g),
            DirectionLaw::Iid(GaussianSpec::point_mass(6)),
            1,
            1.0,
        )
        .unwrap();
        let est = rn_bound(&mu, 2.0, 1, 1000, 3).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn rn_bound_first_order_matches_trace_oracle() {
        // E|h|^2 = sum lambda_j = truncated pi^2/6 for lambda_j = j^-2.
        let g = GaussianSpec::power(64, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g.clone(), 1).unwrap();
        let est = rn_bound(&mu, 2.0, 1, 200_000, 4).unwrap();
        assert!(
            (est.value - g.trace()).abs() < 3.0 * est.std_error + 1e-3,
            "estimate {} vs {}",
            est.value,
            g.trace()
        );
    }

    #[test]
    fn rn_bound_second_order_is_square_of_first() {
        let g = GaussianSpec::power(32, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::gaussian(g.clone(), g, 2).unwrap();
        let one = rn_bound(&mu, 2.0, 1, 150_000, 5).unwrap();
        let two = rn_bound(&mu, 2.0, 2, 150_000, 6).unwrap();
        assert_relative_eq!(two.value, one.value * one.value, max_relative = 0.05);
    }

    #[test]
    fn rn_bound_refuses_non_product() {
        let g = GaussianSpec::power(6, 2.0, 1.0).unwrap();
        let mu = MeasureSampler::new(
            InputMeasure::Gaussian(g.clone()),
            DirectionLaw::Coupled(g),
            2,
            1.0,
        )
        .unwrap();
        assert!(!mu.is_product());
        assert!(matches!(
            rn_bound(&mu, 2.0, 2, 100, 0),
            Err(Error::NonProductMeasure)
        ));
    }

    #[test]
    fn compact_input_draws_stay_inside() {
        let k = CompactSpec::inverse_square(1.0, 8, CompactShape::Box).unwrap();
        let mu = MeasureSampler::new(
            InputMeasure::UniformCompact(k.clone()),
            DirectionLaw::Iid(GaussianSpec::power(8, 2.0, 1.0).unwrap()),
            1,
            1.0,
        )
        .unwrap();
        let mut r = rng(21);
        for _ in 0..200 {
            let d = mu.draw(&mut r);
            assert!(k.contains(&d.x));
            assert_eq!(d.dirs.len(), 1);
        }
    }
}
