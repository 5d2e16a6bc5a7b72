//! End-to-end evaluation, reports and plots.

mod plot;
mod report;

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::corpus::{Corpus, FeatureVector, Role};
use crate::decision::{bayes_search, vote_search, SearchConfig};
use crate::error::{Error, Result};
use crate::index::{Match, NearestNeighbor};
use crate::training::{check_disjoint, TrainedDecisionModel};

pub use plot::{emit_plots, render_svg, PlotPanel};
pub use report::{parse_report_csv, report_to_csv, write_report_csv, REPORT_HEADER};

/// The thresholds of the published comparison.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.90, 0.99, 0.999];

/// Memoizes nearest-neighbour answers by exact query bits.
///
/// Evaluating several thresholds and models with the same seeds revisits the
/// same query features in the same order; the cache makes those repeats free.
pub struct CachedNeighbors<'a> {
    inner: &'a dyn NearestNeighbor,
    cache: Mutex<HashMap<Vec<u32>, Match>>,
}

impl<'a> CachedNeighbors<'a> {
    pub fn new(inner: &'a dyn NearestNeighbor) -> Self {
        CachedNeighbors {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn key(q: &FeatureVector) -> Vec<u32> {
        q.values().iter().map(|v| v.to_bits()).collect()
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NearestNeighbor for CachedNeighbors<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn nearest(&self, query: &FeatureVector) -> Result<Match> {
        let key = Self::key(query);
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let m = self.inner.nearest(query)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, m.clone());
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub test_queries: Vec<String>,
    pub thresholds: Vec<f64>,
    /// Query `i` of `test_queries` is searched with seed `seed + i`.
    pub seed: u64,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub family: String,
    pub threshold: f64,
    /// Fraction of test queries whose answer is the ground truth, undecided
    /// answers included.
    pub accuracy: f64,
    /// Mean number of sampled features over all test queries.
    pub mean_n: f64,
    pub undecided_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub seed: u64,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.n_queries = self.n_queries.max(other.n_queries);
    }

    pub fn row(&self, family: &str, threshold: f64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.threshold == threshold)
    }
}

fn test_queries<'c>(
    corpus: &'c Corpus,
    ids: &[String],
) -> Result<Vec<(&'c crate::corpus::ImageRecord, &'c str)>> {
    ids.iter()
        .map(|id| {
            let image = corpus
                .image(id)
                .filter(|im| im.role == Role::Query)
                .ok_or_else(|| Error::argument(format!("'{id}' is not a query in the corpus")))?;
            let truth = corpus
                .truth_of(id)
                .ok_or_else(|| Error::argument(format!("query '{id}' has no ground truth")))?;
            Ok((image, truth))
        })
        .collect()
}

/// Runs the sequential search for every test query at every threshold.
pub fn evaluate(
    corpus: &Corpus,
    model: &TrainedDecisionModel,
    nn: &dyn NearestNeighbor,
    config: &EvalConfig,
) -> Result<EvalReport> {
    check_disjoint(&model.train_stats.train_queries, &config.test_queries)?;
    if let Some(t) = config.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::argument(format!(
            "threshold must lie strictly inside (0, 1), got {t}"
        )));
    }
    let queries = test_queries(corpus, &config.test_queries)?;
    if queries.is_empty() && !config.thresholds.is_empty() {
        return Err(Error::argument("no test queries"));
    }

    let family = model.label();
    let mut rows = Vec::with_capacity(config.thresholds.len());
    for &threshold in &config.thresholds {
        let outcomes = queries
            .par_iter()
            .enumerate()
            .map(|(i, (query, truth))| {
                let search = SearchConfig {
                    threshold,
                    max_samples: config.max_samples,
                    seed: config.seed.wrapping_add(i as u64),
                };
                let d = bayes_search(query, nn, model, &search)?;
                Ok((
                    d.matched_image.as_deref() == Some(*truth),
                    d.samples_used,
                    d.decided,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = outcomes.len() as f64;
        rows.push(EvalRow {
            family: family.clone(),
            threshold,
            accuracy: outcomes.iter().filter(|o| o.0).count() as f64 / n,
            mean_n: outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / n,
            undecided_fraction: outcomes.iter().filter(|o| !o.2).count() as f64 / n,
        });
    }
    Ok(EvalReport {
        rows,
        seed: config.seed,
        n_queries: queries.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteSummary {
    pub accuracy: f64,
    pub mean_n: f64,
}

/// Accuracy of the vote baseline over the test queries.
pub fn evaluate_votes(
    corpus: &Corpus,
    nn: &dyn NearestNeighbor,
    test_query_ids: &[String],
    sample_budget: Option<usize>,
) -> Result<VoteSummary> {
    let queries = test_queries(corpus, test_query_ids)?;
    if queries.is_empty() {
        return Err(Error::argument("no test queries"));
    }
    let mut correct = 0usize;
    let mut used = 0usize;
    for (query, truth) in &queries {
        let v = vote_search(query, nn, sample_budget)?;
        correct += usize::from(v.image_id == *truth);
        used += v.samples_used;
    }
    let n = queries.len() as f64;
    Ok(VoteSummary {
        accuracy: correct as f64 / n,
        mean_n: used as f64 / n,
    })
}
