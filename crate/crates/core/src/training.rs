//! Training: split nearest-neighbour matches of labelled queries into correct
//! and incorrect populations, fit a density to each, and estimate the prior
//! probability that a match is correct.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureVector, Role};
use crate::distributions::{
    compare_fits, fit, make_histogram, Family, FittedModel, Histogram, DEFAULT_BINS,
};
use crate::error::{Error, Result};
use crate::index::NearestNeighbor;

pub const MODEL_VERSION: u32 = 1;

/// Default epsilon relative to the peak density of the incorrect model.
pub const EPSILON_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchSample {
    pub distance: f64,
    /// The match landed in the query's ground-truth reference image.
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Correct,
    Incorrect,
}

impl Population {
    pub fn name(self) -> &'static str {
        match self {
            Population::Correct => "correct",
            Population::Incorrect => "incorrect",
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportEntry {
    pub population: Population,
    pub family: Family,
    pub params: Vec<f64>,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Histogram bins used for both fits.
    pub nbins: usize,
    /// Queries whose matches were used; evaluation must avoid them.
    pub train_queries: Vec<String>,
}

/// Everything the sequential search needs: both distance densities, the
/// prior `P(X)` and the additive epsilon of the likelihood ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDecisionModel {
    pub version: u32,
    pub dim: usize,
    pub prior: f64,
    pub epsilon: f64,
    pub correct_model: FittedModel,
    pub incorrect_model: FittedModel,
    pub train_stats: TrainStats,
    pub fit_report: Vec<FitReportEntry>,
}

impl TrainedDecisionModel {
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::validation(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if self.dim == 0 {
            return Err(Error::validation("model dimension must be positive"));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::validation(format!(
                "prior must lie strictly inside (0, 1), got {}",
                self.prior
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        self.correct_model
            .validate()
            .map_err(|e| Error::validation(format!("correct_model: {e}")))?;
        self.incorrect_model
            .validate()
            .map_err(|e| Error::validation(format!("incorrect_model: {e}")))?;
        Ok(())
    }

    /// `chi`, or `chi/normal` when the two populations use different
    /// families.
    pub fn label(&self) -> String {
        if self.correct_model.family == self.incorrect_model.family {
            self.correct_model.family.to_string()
        } else {
            format!(
                "{}/{}",
                self.correct_model.family, self.incorrect_model.family
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub family_correct: Family,
    pub family_incorrect: Family,
    pub nbins: usize,
    /// `None` picks [`EPSILON_RELATIVE`] times the peak incorrect density.
    pub epsilon: Option<f64>,
}

impl TrainConfig {
    pub fn new(family: Family) -> Self {
        TrainConfig {
            family_correct: family,
            family_incorrect: family,
            nbins: DEFAULT_BINS,
            epsilon: None,
        }
    }
}

/// Matches every feature of the listed queries, in list then feature order.
pub fn collect_matches(
    corpus: &Corpus,
    train_query_ids: &[String],
    nn: &dyn NearestNeighbor,
) -> Result<Vec<MatchSample>> {
    let mut features: Vec<&FeatureVector> = Vec::new();
    let mut truths: Vec<&str> = Vec::new();
    for id in train_query_ids {
        let image = corpus
            .image(id)
            .ok_or_else(|| Error::argument(format!("unknown query id '{id}'")))?;
        if image.role != Role::Query {
            return Err(Error::argument(format!(
                "'{id}' is a {} image, not a query",
                image.role
            )));
        }
        let truth = corpus
            .truth_of(id)
            .ok_or_else(|| Error::argument(format!("query '{id}' has no ground truth")))?;
        for f in &image.features {
            features.push(f);
            truths.push(truth);
        }
    }
    let matches = nn.nearest_batch(&features)?;
    Ok(matches
        .into_iter()
        .zip(truths)
        .map(|(m, truth)| MatchSample {
            distance: m.distance,
            correct: m.owner == truth,
        })
        .collect())
}

/// Laplace-smoothed fraction of correct matches: `(correct + 1) / (n + 2)`.
pub fn estimate_prior(samples: &[MatchSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::argument("cannot estimate a prior from no samples"));
    }
    let correct = samples.iter().filter(|s| s.correct).count();
    Ok((correct as f64 + 1.0) / (samples.len() as f64 + 2.0))
}

/// Distances of one population.
pub fn population_distances(samples: &[MatchSample], population: Population) -> Vec<f64> {
    let want = population == Population::Correct;
    samples
        .iter()
        .filter(|s| s.correct == want)
        .map(|s| s.distance)
        .collect()
}

/// Histograms of the correct and incorrect populations.
pub fn population_histograms(
    samples: &[MatchSample],
    nbins: usize,
) -> Result<(Histogram, Histogram)> {
    let mut out = Vec::with_capacity(2);
    for population in [Population::Correct, Population::Incorrect] {
        let distances = population_distances(samples, population);
        if distances.is_empty() {
            return Err(Error::Training(format!(
                "the {population} match population is empty"
            )));
        }
        out.push(make_histogram(&distances, nbins, None)?);
    }
    let incorrect = out.pop().expect("two populations");
    let correct = out.pop().expect("two populations");
    Ok((correct, incorrect))
}

/// Collects matches for `train_query_ids` and trains a model on them.
pub fn train(
    corpus: &Corpus,
    train_query_ids: &[String],
    nn: &dyn NearestNeighbor,
    config: &TrainConfig,
) -> Result<TrainedDecisionModel> {
    let samples = collect_matches(corpus, train_query_ids, nn)?;
    train_from_samples(corpus.dim(), train_query_ids, &samples, config)
}

/// Trains on already collected matches.
pub fn train_from_samples(
    dim: usize,
    train_query_ids: &[String],
    samples: &[MatchSample],
    config: &TrainConfig,
) -> Result<TrainedDecisionModel> {
    let (correct_hist, incorrect_hist) = population_histograms(samples, config.nbins)?;
    let correct_model = fit(&correct_hist, config.family_correct)
        .map_err(|e| Error::Training(format!("correct population: {e}")))?;
    let incorrect_model = fit(&incorrect_hist, config.family_incorrect)
        .map_err(|e| Error::Training(format!("incorrect population: {e}")))?;

    let mut fit_report = Vec::new();
    for (population, hist) in [
        (Population::Correct, &correct_hist),
        (Population::Incorrect, &incorrect_hist),
    ] {
        // a family that cannot be fitted is simply absent from the report
        if let Ok(fits) = compare_fits(hist, &Family::ALL) {
            fit_report.extend(fits.into_iter().map(|m| FitReportEntry {
                population,
                family: m.family,
                params: m.params,
                sse: m.sse,
            }));
        }
    }

    let epsilon = match config.epsilon {
        Some(e) => e,
        None => EPSILON_RELATIVE * incorrect_model.max_density(),
    };
    let n_correct = samples.iter().filter(|s| s.correct).count();
    let model = TrainedDecisionModel {
        version: MODEL_VERSION,
        dim,
        prior: estimate_prior(samples)?,
        epsilon,
        correct_model,
        incorrect_model,
        train_stats: TrainStats {
            n_correct,
            n_incorrect: samples.len() - n_correct,
            nbins: config.nbins,
            train_queries: train_query_ids.to_vec(),
        },
        fit_report,
    };
    model.validate()?;
    Ok(model)
}

/// Serializes the model as pretty JSON. Floats are written in their
/// shortest round-tripping form, so reloading is bit-exact.
pub fn model_to_json(model: &TrainedDecisionModel) -> Result<String> {
    let mut s = serde_json::to_string_pretty(model)
        .map_err(|e| Error::validation(format!("cannot serialize model: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<TrainedDecisionModel> {
    let model: TrainedDecisionModel =
        serde_json::from_str(text).map_err(|e| Error::validation(format!("model file: {e}")))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &TrainedDecisionModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedDecisionModel> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Checks that the training and test query sets share no id.
pub fn check_disjoint(train: &[String], test: &[String]) -> Result<()> {
    let train: HashSet<&str> = train.iter().map(String::as_str).collect();
    if let Some(id) = test.iter().find(|id| train.contains(id.as_str())) {
        return Err(Error::argument(format!(
            "query '{id}' is in both the training and the test set"
        )));
    }
    Ok(())
}
