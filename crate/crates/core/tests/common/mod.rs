#![allow(dead_code)]

use ndd_core::corpus::{synth_corpus, Corpus, SynthConfig, TransformSpec};

pub fn synth(
    refs: usize,
    noise: usize,
    feats: usize,
    dim: usize,
    sigma: f64,
    dropout: f64,
    seed: u64,
) -> Corpus {
    synth_corpus(&SynthConfig {
        n_reference: refs,
        n_noise: noise,
        features_per_image: feats,
        dim,
        transform: TransformSpec::new(sigma, dropout, seed),
        seed,
    })
    .unwrap()
}

/// The desk-scale corpus used by the end-to-end checks.
pub fn standard(seed: u64) -> Corpus {
    synth(200, 2000, 50, 128, 0.15, 0.3, seed)
}

/// Chi(k) cdf at `x / scale` through the regularized lower gamma function.
pub fn chi_cdf(k: f64, scale: f64, x: f64) -> f64 {
    use statrs::function::gamma::gamma_lr;
    if x <= 0.0 {
        0.0
    } else {
        let z = x / scale;
        gamma_lr(k / 2.0, z * z / 2.0)
    }
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}
