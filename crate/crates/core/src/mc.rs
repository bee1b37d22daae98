//! Deterministic batched Monte-Carlo engine.
//!
//! Draw index space is split into fixed-size batches; batch `b` consumes the
//! ChaCha stream `(seed, stream = b)`, and batch results are folded in batch
//! order. Estimates are therefore bit-identical for any worker-pool size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Draws per stream batch.
pub const BATCH: usize = 1024;

/// RNG for one batch of the estimator identified by `seed`.
pub fn stream(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// Sums in split-half order; the reduction tree depends only on the length,
/// so duplicated inputs and re-partitioned work give identical results.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Per-component mean and standard error of a vector-valued kernel over `n`
/// seeded draws.
pub fn mean_stderr_vec<K>(n: usize, seed: u64, dim: usize, kernel: K) -> (Vec<f64>, Vec<f64>)
where
    K: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    assert!(n > 0 && dim > 0);
    let n_batches = n.div_ceil(BATCH);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let count = BATCH.min(n - b * BATCH);
            let mut sums = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            let mut buf = vec![0.0; dim];
            for _ in 0..count {
                buf.iter_mut().for_each(|v| *v = 0.0);
                kernel(&mut rng, &mut buf);
                for (i, &v) in buf.iter().enumerate() {
                    sums[i] += v;
                    sq[i] += v * v;
                }
            }
            (sums, sq)
        })
        .collect();

    let mut sums = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (s, q) in partials {
        for i in 0..dim {
            sums[i] += s[i];
            sq[i] += q[i];
        }
    }
    let nf = n as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / nf).collect();
    let stderrs: Vec<f64> = means
        .iter()
        .zip(&sq)
        .map(|(&m, &q)| {
            if n < 2 {
                return 0.0;
            }
            let var = ((q - nf * m * m) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    (means, stderrs)
}

/// Maximum of a scalar kernel over `n` seeded draws.
pub fn sampled_sup<K>(n: usize, seed: u64, kernel: K) -> f64
where
    K: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    assert!(n > 0);
    let n_batches = n.div_ceil(BATCH);
    let partials: Vec<f64> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let count = BATCH.min(n - b * BATCH);
            let mut sup = f64::NEG_INFINITY;
            for _ in 0..count {
                sup = sup.max(kernel(&mut rng));
            }
            sup
        })
        .collect();
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn mean_of_uniform_is_half() {
        let (m, se) = mean_stderr_vec(200_000, 9, 1, |rng, out| {
            out[0] = rng.random_range(0.0..1.0);
        });
        assert_relative_eq!(m[0], 0.5, epsilon = 3.0 * se[0].max(1e-4));
        assert!(se[0] < 1e-3);
    }

    #[test]
    fn estimates_independent_of_pool_size() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                mean_stderr_vec(10_000, 4, 2, |rng, out| {
                    out[0] = rng.random_range(-1.0..1.0);
                    out[1] = out[0] * out[0];
                })
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_sum_duplication_halves_exactly() {
        let xs: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let doubled: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
        let s = pairwise_sum(&xs);
        let d = pairwise_sum(&doubled);
        assert_eq!(d / 2.0, s);
    }

    #[test]
    fn sup_is_deterministic() {
        let k = |rng: &mut ChaCha8Rng| rng.random_range(0.0..1.0f64);
        assert_eq!(sampled_sup(5000, 7, k), sampled_sup(5000, 7, k));
    }
}
