//! Reproducible Monte-Carlo execution.
//!
//! Every trial owns an independent ChaCha stream selected by its index, so
//! results are bit-identical regardless of thread count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Run `trials` independent simulations; trial `i` receives a generator on
/// stream `i + 1` of the master seed. Results are gathered by trial index.
pub fn run_trials<F>(trials: usize, seed: u64, trial: F) -> Vec<f64>
where
    F: Fn(usize, &mut ChaCha8Rng) -> f64 + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            trial(i, &mut rng)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
