//! Synthetic desk-scale corpora.
//!
//! Every descriptor starts life as a raw histogram of |N(0,1)| components and
//! is L2-normalized last, the way SIFT normalizes its gradient histogram.
//! Query perturbations are applied to the raw histogram, so Gaussian noise of
//! scale `sigma` per component moves the raw descriptor by `sigma·Chi(d)`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, FeatureVector, ImageRecord, Role};
use crate::error::{Error, Result};

/// How queries are derived from their references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    /// Per-component standard deviation of the Gaussian perturbation.
    pub noise_sigma: f64,
    /// Fraction of each query's features replaced by unrelated descriptors.
    pub dropout_rate: f64,
    pub seed: u64,
    /// Skip clamping and normalization everywhere. Descriptors stay raw and
    /// query-to-reference distances are exactly `sigma·Chi(d)`.
    pub diagnostic: bool,
}

impl TransformSpec {
    pub fn new(noise_sigma: f64, dropout_rate: f64, seed: u64) -> Self {
        TransformSpec {
            noise_sigma,
            dropout_rate,
            seed,
            diagnostic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::argument(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::argument(format!(
                "dropout rate must lie in [0, 1], got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_reference: usize,
    pub n_noise: usize,
    pub features_per_image: usize,
    pub dim: usize,
    pub transform: TransformSpec,
    pub seed: u64,
}

/// Draws a raw descriptor: `|N(0,1)|` per component.
fn raw_descriptor<R: Rng>(dim: usize, rng: &mut R) -> FeatureVector {
    let values = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal).abs() as f32)
        .collect();
    FeatureVector::raw(values).expect("|N(0,1)| draws are finite")
}

/// The stored form of a raw descriptor.
fn finish(raw: &FeatureVector, diagnostic: bool) -> FeatureVector {
    if diagnostic {
        raw.clone()
    } else {
        FeatureVector::normalized(&raw.to_f64()).expect("|N(0,1)| draws are not all zero")
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every component of `f`.
///
/// With `renormalize`, negative components are clamped to zero and the result
/// is scaled to unit norm. Without it neither step happens, so
/// `distance(f, result)` is exactly `sigma` times a Chi(d) draw.
pub fn perturb_feature<R: Rng>(
    f: &FeatureVector,
    sigma: f64,
    renormalize: bool,
    rng: &mut R,
) -> Result<FeatureVector> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::argument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let base = f.to_f64();
    // an all-negative draw clamps to the zero vector; redraw until it doesn't
    for _ in 0..1000 {
        let mut out: Vec<f64> = base
            .iter()
            .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if !renormalize {
            return FeatureVector::raw(out.iter().map(|&v| v as f32).collect());
        }
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        if out.iter().any(|&v| v > 0.0) {
            return FeatureVector::normalized(&out);
        }
    }
    Ok(f.clone())
}

/// Builds a reference/noise/query corpus.
///
/// Image ids are `ref-NNNN`, `noise-NNNNNN` and `query-NNNN`; query `i`
/// is derived from reference `i`. Base descriptors come from `config.seed`,
/// query transforms from `config.transform.seed`.
pub fn synth_corpus(config: &SynthConfig) -> Result<Corpus> {
    let SynthConfig {
        n_reference,
        n_noise,
        features_per_image,
        dim,
        transform,
        seed,
    } = *config;
    if n_reference == 0 {
        return Err(Error::argument("need at least one reference image"));
    }
    if features_per_image == 0 {
        return Err(Error::argument("need at least one feature per image"));
    }
    if dim < 2 {
        return Err(Error::argument(format!(
            "dimension must be >= 2, got {dim}"
        )));
    }
    transform.validate()?;
    let diagnostic = transform.diagnostic;

    let mut base_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(2 * n_reference + n_noise);
    let mut reference_raw = Vec::with_capacity(n_reference);

    for i in 0..n_reference {
        let raw: Vec<FeatureVector> = (0..features_per_image)
            .map(|_| raw_descriptor(dim, &mut base_rng))
            .collect();
        let features = raw.iter().map(|r| finish(r, diagnostic)).collect();
        images.push(ImageRecord::new(
            format!("ref-{i:04}"),
            Role::Reference,
            features,
        ));
        reference_raw.push(raw);
    }
    for i in 0..n_noise {
        let features = (0..features_per_image)
            .map(|_| finish(&raw_descriptor(dim, &mut base_rng), diagnostic))
            .collect();
        images.push(ImageRecord::new(
            format!("noise-{i:06}"),
            Role::Noise,
            features,
        ));
    }

    let mut query_rng = ChaCha8Rng::seed_from_u64(transform.seed);
    let dropped_per_query = (transform.dropout_rate * features_per_image as f64).round() as usize;
    let mut ground_truth = BTreeMap::new();
    for (i, raw) in reference_raw.iter().enumerate() {
        let mut dropped = vec![false; features_per_image];
        for k in index::sample(&mut query_rng, features_per_image, dropped_per_query) {
            dropped[k] = true;
        }
        let mut features = Vec::with_capacity(features_per_image);
        for (k, r) in raw.iter().enumerate() {
            let f = if dropped[k] {
                finish(&raw_descriptor(dim, &mut query_rng), diagnostic)
            } else {
                // diagnostic mode stores the raw vector, so the distance to the
                // reference is exactly sigma·Chi(d)
                perturb_feature(r, transform.noise_sigma, !diagnostic, &mut query_rng)?
            };
            features.push(f);
        }
        let query_id = format!("query-{i:04}");
        ground_truth.insert(query_id.clone(), format!("ref-{i:04}"));
        images.push(ImageRecord::new(query_id, Role::Query, features));
    }

    Corpus::new(dim, images, ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(
        n_ref: usize,
        n_noise: usize,
        feats: usize,
        dim: usize,
        t: TransformSpec,
    ) -> SynthConfig {
        SynthConfig {
            n_reference: n_ref,
            n_noise,
            features_per_image: feats,
            dim,
            transform: t,
            seed: 7,
        }
    }

    #[test]
    fn zero_noise_query_equals_reference() {
        let c = synth_corpus(&config(1, 0, 1, 4, TransformSpec::new(0.0, 0.0, 7))).unwrap();
        let r = &c.image("ref-0000").unwrap().features[0];
        let q = &c.image("query-0000").unwrap().features[0];
        assert_eq!(r, q);
        assert_eq!(r.distance(q), 0.0);
    }

    #[test]
    fn standard_counts() {
        let c = synth_corpus(&SynthConfig {
            n_reference: 20,
            n_noise: 200,
            features_per_image: 5,
            dim: 16,
            transform: TransformSpec::new(0.15, 0.3, 42),
            seed: 42,
        })
        .unwrap();
        assert_eq!(c.images().len(), 240);
        assert_eq!(c.indexed_feature_count(), 220 * 5);
        assert_eq!(c.queries().count(), 20);
        assert_eq!(c.ground_truth().len(), 20);
        c.check_descriptors().unwrap();
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = config(3, 5, 4, 8, TransformSpec::new(0.2, 0.5, 1));
        assert_eq!(synth_corpus(&cfg).unwrap(), synth_corpus(&cfg).unwrap());
        let mut other = cfg;
        other.transform.seed = 2;
        assert_ne!(synth_corpus(&cfg).unwrap(), synth_corpus(&other).unwrap());
    }

    #[test]
    fn dropout_replaces_exact_fraction() {
        // with sigma 0 a kept feature equals its reference exactly
        let c = synth_corpus(&config(4, 0, 10, 8, TransformSpec::new(0.0, 0.3, 3))).unwrap();
        for i in 0..4 {
            let r = &c.image(&format!("ref-{i:04}")).unwrap().features;
            let q = &c.image(&format!("query-{i:04}")).unwrap().features;
            let kept = r.iter().zip(q).filter(|(a, b)| a == b).count();
            assert_eq!(kept, 7);
        }
    }

    #[test]
    fn invalid_arguments() {
        let t = TransformSpec::new(0.1, 0.1, 0);
        assert!(synth_corpus(&config(0, 1, 1, 4, t)).is_err());
        assert!(synth_corpus(&config(1, 1, 0, 4, t)).is_err());
        assert!(synth_corpus(&config(1, 1, 1, 1, t)).is_err());
        assert!(synth_corpus(&config(1, 1, 1, 4, TransformSpec::new(-1.0, 0.1, 0))).is_err());
        assert!(synth_corpus(&config(1, 1, 1, 4, TransformSpec::new(0.1, 1.5, 0))).is_err());
    }

    #[test]
    fn perturb_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = FeatureVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(perturb_feature(&f, 0.0, true, &mut rng).unwrap(), f);
        assert_eq!(perturb_feature(&f, 0.0, false, &mut rng).unwrap(), f);
        assert!(perturb_feature(&f, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn perturbed_descriptors_stay_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = finish(&raw_descriptor(2, &mut rng), false);
        for _ in 0..500 {
            let g = perturb_feature(&f, 3.0, true, &mut rng).unwrap();
            g.check_descriptor().unwrap();
        }
    }
}
