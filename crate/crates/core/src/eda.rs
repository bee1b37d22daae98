//! Encoder-decoder models `F = D ∘ f_theta ∘ E` and their exact chain-rule
//! derivatives: derivatives are always computed in encoded coordinates via
//! jets, never by differencing in the ambient space.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{self, Activation, NetParams};
use crate::operator::Operator;
use crate::space::{
    deeponet_encoder, pca_encoder, BasisSpec, Coeffs, Decoder, Encoder,
};

/// Immutable encoder-decoder model; training produces fresh models via
/// [`EDAModel::with_net`] rather than mutating in place.
#[derive(Clone, Debug)]
pub struct EDAModel {
    encoder: Encoder,
    net: NetParams,
    decoder: Decoder,
}

impl EDAModel {
    pub fn new(encoder: Encoder, net: NetParams, decoder: Decoder) -> Result<Self> {
        if net.input_dim() != encoder.rank() {
            return Err(Error::DimensionMismatch {
                expected: encoder.rank(),
                got: net.input_dim(),
                context: "net input vs encoder rank",
            });
        }
        if net.output_dim() != decoder.rank() {
            return Err(Error::DimensionMismatch {
                expected: decoder.rank(),
                got: net.output_dim(),
                context: "net output vs decoder rank",
            });
        }
        if encoder.ambient_dim() != decoder.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: encoder.ambient_dim(),
                got: decoder.ambient_dim(),
                context: "encoder vs decoder ambient dims",
            });
        }
        Ok(EDAModel {
            encoder,
            net,
            decoder,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn net(&self) -> &NetParams {
        &self.net
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Same encoder/decoder with replaced network parameters.
    pub fn with_net(&self, net: NetParams) -> Result<Self> {
        EDAModel::new(self.encoder.clone(), net, self.decoder.clone())
    }

    /// `D f_theta(E x)`.
    pub fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        let y = self.encoder.encode(x)?;
        self.decoder.decode(&self.net.forward(&y))
    }

    /// `D ( D^i f_theta(E x)[E h^1, ..., E h^i] )`.
    pub fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        let y = self.encoder.encode(x)?;
        let enc_dirs: Vec<DVector<f64>> = dirs
            .iter()
            .map(|h| self.encoder.encode(h))
            .collect::<Result<_>>()?;
        let d = jets::directional_derivative(&self.net, &y, &enc_dirs)?;
        self.decoder.decode(&d)
    }

    /// `||D||_op * ||E||_op^order`: the constant relating the model's
    /// operator-norm Sobolev norm to the finite-dimensional norm of the core
    /// network under the encoder pushforward.
    pub fn factorization_constant(&self, order: usize) -> f64 {
        self.decoder.operator_norm() * self.encoder.operator_norm().powi(order as i32)
    }
}

impl Operator for EDAModel {
    fn dim_in(&self) -> usize {
        self.encoder.ambient_dim()
    }
    fn dim_out(&self) -> usize {
        self.decoder.ambient_dim()
    }
    fn eval(&self, x: &Coeffs) -> Result<Coeffs> {
        EDAModel::eval(self, x)
    }
    fn derivative(&self, x: &Coeffs, dirs: &[Coeffs]) -> Result<Coeffs> {
        EDAModel::derivative(self, x, dirs)
    }
    fn max_order(&self) -> Option<usize> {
        Some(jets::MAX_ORDER)
    }
    fn growth(&self, order: usize) -> (f64, f64) {
        // A single affine core is linear; deeper cores have bounded
        // activations, hence bounded values and derivatives.
        if self.net.weights().len() == 1 && order == 0 {
            (2.0, 2.0)
        } else {
            (0.0, 2.0)
        }
    }
    fn derivative_constant_in_x(&self, order: usize) -> bool {
        self.net.weights().len() == 1 && order >= 1
    }
}

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

fn core_dims(n: usize, hidden: &[usize], n_prime: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(n);
    dims.extend_from_slice(hidden);
    dims.push(n_prime);
    dims
}

/// Orthonormal-basis model: projection encoder onto the first `d`
/// coordinates and projection decoder onto the first `m`.
pub fn hgno_new(
    ambient_dim: usize,
    d: usize,
    m: usize,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<EDAModel> {
    let encoder = Encoder::projection(d, ambient_dim)?;
    let decoder = Decoder::projection(m, ambient_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = NetParams::random(&core_dims(d, hidden, m), activation, &mut rng)?;
    EDAModel::new(encoder, net, decoder)
}

/// Frame-based model over explicit coordinate functionals and elements.
pub fn son_new(
    encoder: Encoder,
    decoder: Decoder,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<EDAModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = NetParams::random(
        &core_dims(encoder.rank(), hidden, decoder.rank()),
        activation,
        &mut rng,
    )?;
    EDAModel::new(encoder, net, decoder)
}

/// Sensor-evaluation model: encoder rows evaluate at the sensors, decoder
/// elements are the bump-partition expansions.
pub fn deeponet_new(
    basis: &BasisSpec,
    sensors: &[f64],
    epsilon: f64,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<EDAModel> {
    let (encoder, decoder) = deeponet_encoder(basis, sensors, epsilon)?;
    son_new(encoder, decoder, hidden, activation, seed)
}

/// Data-driven model: encoder/decoder from the top principal modes of the
/// input and output sample sets.
pub fn pcanet_new(
    input_samples: &[Coeffs],
    output_samples: &[Coeffs],
    n: usize,
    n_prime: usize,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<EDAModel> {
    let (encoder, _, _) = pca_encoder(input_samples, n)?;
    let (_, decoder, _) = pca_encoder(output_samples, n_prime)?;
    son_new(encoder, decoder, hidden, activation, seed)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// JSON checkpoint: encoder tag and rows, flat network parameters, decoder
/// elements, and the digest of the basis the model was built against.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub net: NetParams,
    pub decoder: Decoder,
    pub basis_hash: u64,
}

impl EDAModel {
    pub fn to_checkpoint(&self, basis: &BasisSpec) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.clone(),
            net: self.net.clone(),
            decoder: self.decoder.clone(),
            basis_hash: basis.digest(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, basis: &BasisSpec) -> Result<Self> {
        if ck.basis_hash != basis.digest() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint basis hash {:#x} does not match the target basis {:#x}",
                ck.basis_hash,
                basis.digest()
            )));
        }
        EDAModel::new(ck.encoder, ck.net, ck.decoder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::fd_oracle;
    use crate::operator::jacobian;
    use crate::space::EncoderTag;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(dim: usize, r: &mut ChaCha8Rng) -> Coeffs {
        Coeffs::from_vec((0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
    }

    fn random_model(
        ambient: usize,
        d: usize,
        m: usize,
        hidden: &[usize],
        seed: u64,
    ) -> EDAModel {
        hgno_new(ambient, d, m, hidden, Activation::Tanh, seed).unwrap()
    }

    #[test]
    fn identity_core_reproduces_partial_sum() {
        let ambient = 10;
        let n = 4;
        let encoder = Encoder::projection(n, ambient).unwrap();
        let decoder = Decoder::projection(n, ambient).unwrap();
        let model = EDAModel::new(encoder, NetParams::identity(n), decoder).unwrap();
        let mut r = rng(1);
        let x = randn(ambient, &mut r);
        assert_eq!(model.eval(&x).unwrap(), x.truncate(n));
    }

    #[test]
    fn constant_core_gives_constant_output() {
        let ambient = 8;
        let n = 3;
        let encoder = Encoder::projection(n, ambient).unwrap();
        let decoder = Decoder::projection(n, ambient).unwrap();
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let net = NetParams::affine(DMatrix::zeros(n, n), c.clone()).unwrap();
        let model = EDAModel::new(encoder, net, decoder).unwrap();
        let mut r = rng(2);
        let want = model.decoder().decode(&c).unwrap();
        for _ in 0..5 {
            let x = randn(ambient, &mut r);
            assert_eq!(model.eval(&x).unwrap(), want);
        }
    }

    #[test]
    fn eval_matches_composition_oracle() {
        let model = random_model(12, 5, 4, &[9], 3);
        let mut r = rng(4);
        let x = randn(12, &mut r);
        // Independent composition of the three stages.
        let y = model.encoder().encode(&x).unwrap();
        let z = model.net().forward(&y);
        let want = model.decoder().decode(&z).unwrap();
        let got = model.eval(&x).unwrap();
        assert!(got.sub(&want).norm() <= 1e-13 * want.norm().max(1.0));
    }

    #[test]
    fn linear_core_first_derivative_is_dae() {
        let ambient = 9;
        let (n, m) = (4, 3);
        let mut r = rng(5);
        let a = DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal));
        let encoder = Encoder::projection(n, ambient).unwrap();
        let decoder = Decoder::projection(m, ambient).unwrap();
        let model =
            EDAModel::new(encoder, NetParams::affine(a.clone(), DVector::zeros(m)).unwrap(), decoder)
                .unwrap();
        let x = randn(ambient, &mut r);
        let h = randn(ambient, &mut r);
        let got = model.derivative(&x, std::slice::from_ref(&h)).unwrap();
        let want = model
            .decoder()
            .decode(&(&a * model.encoder().encode(&h).unwrap()))
            .unwrap();
        assert!(got.sub(&want).norm() <= 1e-13);
        // Affine core has vanishing second derivative.
        let second = model.derivative(&x, &[h.clone(), h]).unwrap();
        assert_eq!(second, Coeffs::zeros(ambient));
    }

    #[test]
    fn derivative_matches_ambient_finite_differences() {
        let ambient = 10;
        let model = random_model(ambient, 5, 4, &[8], 6);
        let mut r = rng(7);
        let x = randn(ambient, &mut r);
        for order in 1..=2usize {
            let dirs: Vec<Coeffs> = (0..order)
                .map(|_| {
                    let v = randn(ambient, &mut r);
                    v.scaled(1.0 / v.norm())
                })
                .collect();
            let exact = model.derivative(&x, &dirs).unwrap();
            let f = |y: &DVector<f64>| {
                model.eval(&Coeffs::from(y.clone())).unwrap().as_vector().clone()
            };
            let dvecs: Vec<DVector<f64>> = dirs.iter().map(|d| d.as_vector().clone()).collect();
            let fd = fd_oracle(&f, x.as_vector(), &dvecs, 1e-3).unwrap();
            let rel = (exact.as_vector() - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-4, "order {order}: rel err {rel}");
        }
    }

    #[test]
    fn first_derivative_rank_bounded_by_min_rank() {
        let ambient = 16;
        let (n, m) = (5, 7);
        let model = random_model(ambient, n, m, &[12], 8);
        let mut r = rng(9);
        let x = randn(ambient, &mut r);
        let jac = jacobian(&model, &x).unwrap();
        let svals = jac.svd(false, false).singular_values;
        let bound = n.min(m);
        for (i, s) in svals.iter().enumerate() {
            if i >= bound {
                assert!(
                    *s <= 1e-10 * svals[0],
                    "singular value {i} = {s} exceeds rank bound {bound}"
                );
            }
        }
    }

    #[test]
    fn opnorm_sobolev_bounded_by_factorized_core_norm() {
        // ||D^i F(x)||op <= ||D|| ||E||^i ||D^i f(Ex)||op, so the model's
        // operator-norm Sobolev norm is bounded by the factorization constant
        // times the core network's norm under the encoder pushforward.
        let ambient = 8;
        let (n, m) = (3, 3);
        let mut r = rng(10);
        let rows = DMatrix::from_fn(n, ambient, |_, _| r.sample::<f64, _>(StandardNormal));
        let elements = DMatrix::from_fn(ambient, m, |_, _| r.sample::<f64, _>(StandardNormal));
        let encoder = Encoder::from_rows(EncoderTag::Frame, rows).unwrap();
        let decoder = Decoder::from_elements(elements).unwrap();
        let model = son_new(encoder, decoder, &[6], Activation::Tanh, 11).unwrap();

        let gamma = crate::measures::GaussianSpec::power(ambient, 2.0, 1.0).unwrap();
        let nu = crate::measures::MeasureSampler::gaussian(gamma,
            crate::measures::GaussianSpec::power(ambient, 2.0, 1.0).unwrap(), 0).unwrap();
        let zero = crate::targets::zero_target(ambient);
        let k = 1;
        let p = 2.0;
        let lhs =
            crate::metrics::opnorm_sobolev_error(&model, &zero, &nu, k, p, 4000, 12).unwrap();

        // Core-network Sobolev norm under the pushforward, same draw count.
        let pf = crate::measures::pushforward(model.encoder(), &nu).unwrap();
        let (means, _) = crate::mc::mean_stderr_vec(4000, 12, k + 1, |rng2, out| {
            let y = pf.draw(rng2);
            let f0 = model.net().forward(&y);
            out[0] = f0.norm().powf(p);
            let mut jac = DMatrix::zeros(model.net().output_dim(), model.net().input_dim());
            for j in 0..model.net().input_dim() {
                let mut e = DVector::zeros(model.net().input_dim());
                e[j] = 1.0;
                let col = jets::directional_derivative(model.net(), &y, &[e]).unwrap();
                jac.set_column(j, &col);
            }
            out[1] = jac.svd(false, false).singular_values[0].powf(p);
        });
        let core_norm = means
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
            .powf(1.0 / p);
        let c = (0..=k)
            .map(|i| model.factorization_constant(i))
            .fold(0.0f64, f64::max);
        assert!(
            lhs.value <= c * core_norm * (1.0 + 1e-6) + 3.0 * lhs.std_error,
            "model norm {} vs bound {}",
            lhs.value,
            c * core_norm
        );
    }

    #[test]
    fn hgno_uses_projection_pairs() {
        let model = hgno_new(12, 4, 6, &[8], Activation::Tanh, 1).unwrap();
        assert_eq!(model.encoder().tag(), EncoderTag::Projection);
        assert_eq!(model.encoder().rank(), 4);
        assert_eq!(model.decoder().rank(), 6);
    }

    #[test]
    fn deeponet_model_encoder_is_sensor_synthesis() {
        let basis = BasisSpec::sine(10).unwrap();
        let sensors = [0.25, 0.75];
        let model =
            deeponet_new(&basis, &sensors, 0.6, &[5], Activation::Tanh, 2).unwrap();
        let (enc, _) = deeponet_encoder(&basis, &sensors, 0.6).unwrap();
        assert_eq!(model.encoder().rows(), enc.rows());
        assert_eq!(model.encoder().tag(), EncoderTag::Deeponet);
    }

    #[test]
    fn pcanet_on_low_rank_data_recovers_modes() {
        let dim = 8;
        let mut r = rng(13);
        let samples: Vec<Coeffs> = (0..60)
            .map(|_| {
                let a: f64 = r.sample(StandardNormal);
                let b: f64 = r.sample(StandardNormal);
                let mut v = vec![0.0; dim];
                v[0] = a;
                v[1] = b;
                Coeffs::from_vec(v)
            })
            .collect();
        let model =
            pcanet_new(&samples, &samples, 2, 2, &[4], Activation::Tanh, 3).unwrap();
        assert_eq!(model.encoder().tag(), EncoderTag::Pca);
        // Modes span {e1, e2}.
        let p = model.encoder().rows().transpose() * model.encoder().rows();
        let mut want = DMatrix::zeros(dim, dim);
        want[(0, 0)] = 1.0;
        want[(1, 1)] = 1.0;
        assert!((p - want).norm() < 1e-10);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let basis = BasisSpec::sine(10).unwrap();
        let model = random_model(10, 4, 3, &[7, 5], 14);
        let json = serde_json::to_string(&model.to_checkpoint(&basis)).unwrap();
        let ck: Checkpoint = serde_json::from_str(&json).unwrap();
        let back = EDAModel::from_checkpoint(ck, &basis).unwrap();
        assert_eq!(model.net(), back.net());
        assert_eq!(model.encoder().rows(), back.encoder().rows());
        assert_eq!(model.decoder().elements(), back.decoder().elements());
        let mut r = rng(15);
        let x = randn(10, &mut r);
        assert_eq!(model.eval(&x).unwrap(), back.eval(&x).unwrap());
    }

    #[test]
    fn checkpoint_wrong_basis_rejected() {
        let basis = BasisSpec::sine(10).unwrap();
        let other = BasisSpec::sine(12).unwrap();
        let model = random_model(10, 4, 3, &[7], 16);
        let ck = model.to_checkpoint(&basis);
        assert!(EDAModel::from_checkpoint(ck, &other).is_err());
    }
}
