//! Invariant harness: fast programmatic property checks for every module,
//! run by `oplab verify`. Each check returns an error message on violation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use oplab_core::bump::{bump_derivative, bump_eval, BumpSpec};
use oplab_core::eda::hgno_new;
use oplab_core::jets::{self, Activation, NetParams};
use oplab_core::measures::{sample_gaussian, GaussianSpec, MeasureSampler};
use oplab_core::metrics;
use oplab_core::operator::{jacobian, Operator};
use oplab_core::space::{
    deeponet_partition, partial_sum, pca_encoder, Coeffs, CompactShape, CompactSpec, Decoder,
    Encoder,
};
use oplab_core::targets::{diagonal_target, identity_target, zero_target, QuadraticTarget};
use oplab_core::training;

type Check = (&'static str, fn() -> Result<(), String>);

pub struct SuiteResult {
    pub suite: &'static str,
    pub checks: Vec<(&'static str, Result<(), String>)>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, r)| r.is_ok())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(dim: usize, r: &mut ChaCha8Rng) -> Coeffs {
    Coeffs::from_vec((0..dim).map(|_| r.sample(StandardNormal)).collect())
}

fn randn_vec(dim: usize, r: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| r.sample(StandardNormal))
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// space
// ---------------------------------------------------------------------------

fn space_partial_sum_tail() -> Result<(), String> {
    let dim = 64;
    let x = Coeffs::from_vec((1..=dim).map(|i| 1.0 / (i * i) as f64).collect());
    let e = Encoder::projection(16, dim).map_err(|e| e.to_string())?;
    let d = Decoder::projection(16, dim).map_err(|e| e.to_string())?;
    let s = partial_sum(&e, &d, &x).map_err(|e| e.to_string())?;
    let err = x.sub(&s).norm();
    let oracle: f64 = (17..=dim).map(|i| (i as f64).powi(-4)).sum::<f64>().sqrt();
    ensure(
        (err - oracle).abs() <= 1e-13 * oracle,
        format!("tail {err} vs oracle {oracle}"),
    )
}

fn space_partition_of_unity() -> Result<(), String> {
    let sensors = [0.1, 0.35, 0.6, 0.85];
    for k in 0..=1000 {
        let y = k as f64 / 1000.0;
        let s: f64 = deeponet_partition(&sensors, 0.3, y).iter().sum();
        ensure((s - 1.0).abs() <= 1e-12, format!("sum {s} at y={y}"))?;
    }
    Ok(())
}

fn space_pca_orthonormal() -> Result<(), String> {
    let mut r = rng(3);
    let samples: Vec<Coeffs> = (0..200).map(|_| randn(8, &mut r)).collect();
    let (e, _, _) = pca_encoder(&samples, 5).map_err(|e| e.to_string())?;
    let gram = e.rows() * e.rows().transpose();
    ensure(
        (gram - DMatrix::identity(5, 5)).norm() <= 1e-10,
        "pca rows not orthonormal",
    )
}

fn space_compact_membership() -> Result<(), String> {
    let k = CompactSpec::inverse_square(1.0, 16, CompactShape::Box).map_err(|e| e.to_string())?;
    let a = k.sample(500, 7);
    let b = k.sample(500, 7);
    ensure(a == b, "seeded compact sampling not deterministic")?;
    for x in &a {
        ensure(k.contains(x), "sample escaped the compact")?;
        let tail = x.sub(&x.truncate(8)).norm();
        ensure(
            tail <= k.tail_bound(8) * (1.0 + 1e-12),
            "tail decay bound violated",
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// jets
// ---------------------------------------------------------------------------

fn jets_fd_agreement() -> Result<(), String> {
    let mut r = rng(11);
    for _ in 0..5 {
        let net =
            NetParams::random(&[8, 16, 16, 4], Activation::Tanh, &mut r).map_err(|e| e.to_string())?;
        let x = randn_vec(8, &mut r);
        for order in 1..=3usize {
            let dirs: Vec<DVector<f64>> = (0..order)
                .map(|_| {
                    let v = randn_vec(8, &mut r);
                    let n = v.norm();
                    v / n
                })
                .collect();
            let jet = jets::directional_derivative(&net, &x, &dirs).map_err(|e| e.to_string())?;
            let f = |y: &DVector<f64>| net.forward(y);
            let fd = jets::fd_oracle(&f, &x, &dirs, 1e-3).map_err(|e| e.to_string())?;
            let rel = (&jet - &fd).norm() / fd.norm().max(1e-12);
            ensure(rel <= 1e-4, format!("order {order} rel error {rel}"))?;
        }
    }
    Ok(())
}

fn jets_symmetry_and_multilinearity() -> Result<(), String> {
    let mut r = rng(13);
    let net = NetParams::random(&[6, 12, 6], Activation::Softplus, &mut r)
        .map_err(|e| e.to_string())?;
    let x = randn_vec(6, &mut r);
    let h = randn_vec(6, &mut r);
    let g = randn_vec(6, &mut r);
    let hg = jets::directional_derivative(&net, &x, &[h.clone(), g.clone()])
        .map_err(|e| e.to_string())?;
    let gh = jets::directional_derivative(&net, &x, &[g.clone(), h.clone()])
        .map_err(|e| e.to_string())?;
    ensure(
        (&hg - &gh).norm() <= 1e-13 * hg.norm().max(1.0),
        "permutation symmetry violated",
    )?;
    let scaled = jets::directional_derivative(&net, &x, &[h.clone() * 2.0, g.clone()])
        .map_err(|e| e.to_string())?;
    ensure(
        (&scaled - &hg * 2.0).norm() <= 1e-12 * hg.norm().max(1.0),
        "multilinearity violated",
    )?;
    let zeroed = jets::directional_derivative(&net, &x, &[h, DVector::zeros(6)])
        .map_err(|e| e.to_string())?;
    ensure(zeroed == DVector::zeros(6), "nilpotency violated")
}

// ---------------------------------------------------------------------------
// eda
// ---------------------------------------------------------------------------

fn eda_chain_rule_vs_ambient_fd() -> Result<(), String> {
    let mut r = rng(17);
    for seed in 0..5u64 {
        let model =
            hgno_new(10, 5, 4, &[8], Activation::Tanh, seed).map_err(|e| e.to_string())?;
        let x = randn(10, &mut r);
        for order in 1..=2usize {
            let dirs: Vec<Coeffs> = (0..order)
                .map(|_| {
                    let v = randn(10, &mut r);
                    v.scaled(1.0 / v.norm())
                })
                .collect();
            let exact = model.derivative(&x, &dirs).map_err(|e| e.to_string())?;
            let f = |y: &DVector<f64>| {
                model
                    .eval(&Coeffs::from(y.clone()))
                    .unwrap()
                    .as_vector()
                    .clone()
            };
            let dvecs: Vec<DVector<f64>> = dirs.iter().map(|d| d.as_vector().clone()).collect();
            let fd =
                jets::fd_oracle(&f, x.as_vector(), &dvecs, 1e-3).map_err(|e| e.to_string())?;
            let rel = (exact.as_vector() - &fd).norm() / fd.norm().max(1e-12);
            ensure(rel <= 1e-4, format!("order {order} rel error {rel}"))?;
        }
    }
    Ok(())
}

fn eda_rank_bound() -> Result<(), String> {
    let mut r = rng(19);
    let model = hgno_new(16, 5, 7, &[10], Activation::Tanh, 23).map_err(|e| e.to_string())?;
    let x = randn(16, &mut r);
    let jac = jacobian(&model, &x).map_err(|e| e.to_string())?;
    let svals = jac.svd(false, false).singular_values;
    for (i, s) in svals.iter().enumerate() {
        if i >= 5 {
            ensure(
                *s <= 1e-10 * svals[0],
                format!("singular value {i} = {s} above rank bound"),
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// targets
// ---------------------------------------------------------------------------

fn targets_quadratic_consistency() -> Result<(), String> {
    let mut r = rng(29);
    let t = QuadraticTarget::random(8, 3, 0.7, &mut r).map_err(|e| e.to_string())?;
    let x = randn(8, &mut r);
    let h = randn(8, &mut r);
    let g = randn(8, &mut r);
    let hg = t.derivative(&x, &[h.clone(), g.clone()]).map_err(|e| e.to_string())?;
    let gh = t.derivative(&x, &[g, h.clone()]).map_err(|e| e.to_string())?;
    ensure(
        hg.sub(&gh).norm() <= 1e-14 * hg.norm().max(1.0),
        "second derivative not symmetric",
    )?;
    let f = |y: &DVector<f64>| t.eval(&Coeffs::from(y.clone())).unwrap().as_vector().clone();
    let fd = jets::fd_oracle(&f, x.as_vector(), &[h.as_vector().clone()], 1e-5)
        .map_err(|e| e.to_string())?;
    let exact = t.derivative(&x, &[h]).map_err(|e| e.to_string())?;
    ensure(
        (exact.as_vector() - fd).norm() <= 1e-6,
        "first derivative deviates from finite differences",
    )
}

fn targets_cylindrical_factorization() -> Result<(), String> {
    let mut r = rng(31);
    let inner = std::sync::Arc::new(
        QuadraticTarget::random(10, 4, 0.6, &mut r).map_err(|e| e.to_string())?,
    );
    let cyl = oplab_core::targets::cylindrical_approximation(inner.clone(), 4, 6)
        .map_err(|e| e.to_string())?;
    for _ in 0..20 {
        let x = randn(10, &mut r);
        let want = inner
            .eval(&x.truncate(4))
            .map_err(|e| e.to_string())?
            .truncate(6);
        let got = cyl.eval(&x).map_err(|e| e.to_string())?;
        ensure(
            got.sub(&want).norm() <= 1e-13 * want.norm().max(1.0),
            "cylindrical factorization violated",
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// measures
// ---------------------------------------------------------------------------

fn measures_determinism_and_trace() -> Result<(), String> {
    let g = GaussianSpec::power(16, 2.0, 1.0).map_err(|e| e.to_string())?;
    ensure(
        sample_gaussian(&g, 100, 5) == sample_gaussian(&g, 100, 5),
        "gaussian stream not deterministic",
    )?;
    let samples = sample_gaussian(&g, 50_000, 6);
    let ms = samples.iter().map(|x| x.norm().powi(2)).sum::<f64>() / samples.len() as f64;
    ensure(
        (ms - g.trace()).abs() <= 0.03 * g.trace(),
        format!("trace identity off: {ms} vs {}", g.trace()),
    )
}

fn measures_rn_product_consistency() -> Result<(), String> {
    let g = GaussianSpec::power(16, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mu = MeasureSampler::gaussian(g.clone(), g.clone(), 2).map_err(|e| e.to_string())?;
    let one = oplab_core::measures::rn_bound(&mu, 2.0, 1, 60_000, 7).map_err(|e| e.to_string())?;
    let two = oplab_core::measures::rn_bound(&mu, 2.0, 2, 60_000, 8).map_err(|e| e.to_string())?;
    ensure(
        (two.value - one.value * one.value).abs()
            <= 3.0 * (two.std_error + 2.0 * one.value * one.std_error) + 1e-3,
        format!("product structure off: {} vs {}", two.value, one.value * one.value),
    )
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

fn metrics_zero_and_homogeneity() -> Result<(), String> {
    let dim = 12;
    let f = identity_target(dim);
    let kset = CompactSpec::inverse_square(1.0, dim, CompactShape::Box).map_err(|e| e.to_string())?;
    let zero = metrics::compact_open_seminorm(&f, &f, &kset, &kset, 1, 300, 1)
        .map_err(|e| e.to_string())?;
    ensure(zero.value == 0.0, "seminorm of equal operators not zero")?;
    let z = zero_target(dim);
    let g1 = diagonal_target((1..=dim).map(|j| 1.0 / j as f64).collect()).map_err(|e| e.to_string())?;
    let g2 = diagonal_target((1..=dim).map(|j| 2.0 / j as f64).collect()).map_err(|e| e.to_string())?;
    let a = metrics::compact_open_seminorm(&z, &g1, &kset, &kset, 1, 300, 2)
        .map_err(|e| e.to_string())?;
    let b = metrics::compact_open_seminorm(&z, &g2, &kset, &kset, 1, 300, 2)
        .map_err(|e| e.to_string())?;
    ensure(
        (b.value - 2.0 * a.value).abs() <= 1e-12 * b.value.max(1.0),
        "derivative scaling not homogeneous",
    )
}

fn metrics_gaussian_identity() -> Result<(), String> {
    let dim = 32;
    let gamma = GaussianSpec::power(dim, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mut r = rng(37);
    let l = DMatrix::from_fn(8, dim, |_, _| r.sample::<f64, _>(StandardNormal));
    let exact = metrics::gaussian_hs_norm(&l, &gamma)
        .map_err(|e| e.to_string())?
        .value;
    let (means, _) = oplab_core::mc::mean_stderr_vec(100_000, 38, 1, |rr, out| {
        let h = gamma.draw(rr);
        out[0] = (&l * h.as_vector()).norm_squared();
    });
    let mc = means[0].sqrt();
    ensure(
        (mc - exact).abs() <= 0.02 * exact,
        format!("hs identity off: mc {mc} vs exact {exact}"),
    )
}

fn metrics_domination_chain() -> Result<(), String> {
    let dim = 12;
    let f = diagonal_target((1..=dim).map(|j| 1.0 / j as f64).collect()).map_err(|e| e.to_string())?;
    let g = zero_target(dim);
    let gamma = GaussianSpec::power(dim, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mu = MeasureSampler::gaussian(gamma.clone(), gamma, 1).map_err(|e| e.to_string())?;
    let bast =
        metrics::bastiani_sobolev_error(&f, &g, &mu, 1, 2.0, 20_000, 3).map_err(|e| e.to_string())?;
    let tilde =
        metrics::tilde_sobolev_error(&f, &g, &mu, 1, 2.0, 20_000, 3).map_err(|e| e.to_string())?;
    ensure(
        bast.value <= tilde.value + 2.0 * metrics::joint_stderr(&bast, &tilde),
        format!("tilde domination violated: {} vs {}", bast.value, tilde.value),
    )
}

// ---------------------------------------------------------------------------
// bump
// ---------------------------------------------------------------------------

fn bump_plateau_and_support() -> Result<(), String> {
    let spec = BumpSpec::new(0.5, 3).map_err(|e| e.to_string())?;
    let mut r = rng(41);
    for _ in 0..1000 {
        let dir = randn(6, &mut r);
        let dir = dir.scaled(1.0 / dir.norm());
        let inside: f64 = r.random_range(0.0..spec.plateau_radius());
        let x_in = dir.scaled(inside);
        ensure(bump_eval(&spec, &x_in) == 1.0, "plateau value not one")?;
        let h = randn(6, &mut r);
        ensure(
            bump_derivative(&spec, &x_in, std::slice::from_ref(&h)).map_err(|e| e.to_string())?
                == 0.0,
            "plateau derivative not zero",
        )?;
        let outside: f64 = spec.support_radius() * r.random_range(1.0..2.0);
        let x_out = dir.scaled(outside);
        ensure(bump_eval(&spec, &x_out) == 0.0, "support bound violated")?;
    }
    Ok(())
}

fn bump_derivative_fd() -> Result<(), String> {
    let spec = BumpSpec::new(1.0, 3).map_err(|e| e.to_string())?;
    let mut r = rng(43);
    for _ in 0..10 {
        let dir = randn(6, &mut r);
        let x = dir.scaled(r.random_range(1.05..1.35) / dir.norm());
        let h = randn(6, &mut r);
        let h = h.scaled(1.0 / h.norm());
        let exact = bump_derivative(&spec, &x, std::slice::from_ref(&h)).map_err(|e| e.to_string())?;
        let f = |v: &DVector<f64>| {
            DVector::from_vec(vec![bump_eval(&spec, &Coeffs::from(v.clone()))])
        };
        let fd = jets::fd_oracle(&f, x.as_vector(), &[h.as_vector().clone()], 1e-4)
            .map_err(|e| e.to_string())?[0];
        ensure(
            (exact - fd).abs() <= 1e-5 * fd.abs().max(1.0),
            format!("bump derivative off: {exact} vs {fd}"),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

fn training_gradient_fd() -> Result<(), String> {
    let dim = 8;
    let model = hgno_new(dim, 4, 4, &[8], Activation::Tanh, 47).map_err(|e| e.to_string())?;
    let target = identity_target(dim);
    let g = GaussianSpec::power(dim, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mu = MeasureSampler::gaussian(g.clone(), g, 1).map_err(|e| e.to_string())?;
    let mut r = rng(48);
    let batch: Vec<oplab_core::measures::Draw> = (0..6).map(|_| mu.draw(&mut r)).collect();
    let grad = training::grad_theta(&model, &target, &batch, 1, 2.0)
        .map_err(|e| e.to_string())?
        .flat();
    let flat = model.net().params_flat();
    let step = 1e-5;
    for k in (0..flat.len()).step_by(11) {
        let mut plus = flat.clone();
        plus[k] += step;
        let mut minus = flat.clone();
        minus[k] -= step;
        let loss = |p: &[f64]| -> Result<f64, String> {
            let m = model
                .with_net(model.net().with_params_flat(p).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            training::softened_loss(&m, &target, &batch, 1).map_err(|e| e.to_string())
        };
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        ensure(
            (grad[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-6),
            format!("grad[{k}] = {} vs fd {fd}", grad[k]),
        )?;
    }
    Ok(())
}

fn training_determinism() -> Result<(), String> {
    let dim = 8;
    let m0 = hgno_new(dim, 3, 3, &[5], Activation::Tanh, 49).map_err(|e| e.to_string())?;
    let target = identity_target(dim);
    let g = GaussianSpec::power(dim, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mu = MeasureSampler::gaussian(g.clone(), g, 1).map_err(|e| e.to_string())?;
    let cfg = training::TrainConfig {
        k_loss: 1,
        p: 2.0,
        n_train: 8,
        n_dirs: 1,
        optimizer: training::OptimizerKind::MomentumGd,
        step_size: 0.05,
        momentum: 0.9,
        iterations: 15,
        seeds: vec![1, 2, 3],
    };
    let (ma, ra) = training::train(&cfg, &m0, &target, &mu, 50).map_err(|e| e.to_string())?;
    let (mb, rb) = training::train(&cfg, &m0, &target, &mu, 50).map_err(|e| e.to_string())?;
    ensure(ma.net() == mb.net(), "trained parameters differ across reruns")?;
    ensure(ra.loss_history == rb.loss_history, "loss histories differ")
}

// ---------------------------------------------------------------------------
// Suite registry
// ---------------------------------------------------------------------------

pub fn run_all() -> Vec<SuiteResult> {
    let suites: Vec<(&'static str, Vec<Check>)> = vec![
        (
            "space",
            vec![
                ("partial_sum_tail_oracle", space_partial_sum_tail),
                ("deeponet_partition_of_unity", space_partition_of_unity),
                ("pca_rows_orthonormal", space_pca_orthonormal),
                ("compact_membership_and_determinism", space_compact_membership),
            ],
        ),
        (
            "jets",
            vec![
                ("finite_difference_agreement", jets_fd_agreement),
                ("symmetry_multilinearity_nilpotency", jets_symmetry_and_multilinearity),
            ],
        ),
        (
            "eda",
            vec![
                ("chain_rule_vs_ambient_fd", eda_chain_rule_vs_ambient_fd),
                ("first_derivative_rank_bound", eda_rank_bound),
            ],
        ),
        (
            "targets",
            vec![
                ("quadratic_derivatives", targets_quadratic_consistency),
                ("cylindrical_factorization", targets_cylindrical_factorization),
            ],
        ),
        (
            "measures",
            vec![
                ("determinism_and_trace", measures_determinism_and_trace),
                ("rn_bound_product_structure", measures_rn_product_consistency),
            ],
        ),
        (
            "metrics",
            vec![
                ("zero_and_homogeneity", metrics_zero_and_homogeneity),
                ("gaussian_hs_identity", metrics_gaussian_identity),
                ("tilde_domination", metrics_domination_chain),
            ],
        ),
        (
            "bump",
            vec![
                ("plateau_and_support", bump_plateau_and_support),
                ("derivative_fd_agreement", bump_derivative_fd),
            ],
        ),
        (
            "training",
            vec![
                ("gradient_fd_agreement", training_gradient_fd),
                ("seeded_determinism", training_determinism),
            ],
        ),
    ];
    suites
        .into_iter()
        .map(|(suite, checks)| SuiteResult {
            suite,
            checks: checks.into_iter().map(|(name, f)| (name, f())).collect(),
        })
        .collect()
}
