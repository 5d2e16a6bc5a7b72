//! Sequential Bayesian search and the vote baseline.
//!
//! Query features are sampled in random order without replacement. Each
//! sample is matched, the likelihood ratio of its distance
//!
//! ```text
//! L = (P(D | correct) + E) / (P(D | incorrect) + E)
//! ```
//!
//! is folded into the log-evidence of the matched image only, and that image's
//! posterior `S·P(X) / (S·P(X) + 1 − P(X))`, with `S` the product of its ratios,
//! is compared with the threshold. The posterior is computed as
//! `logistic(logit(P(X)) + Σ ln L)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ImageRecord, Role};
use crate::error::{Error, Result};
use crate::index::NearestNeighbor;
use crate::training::TrainedDecisionModel;

/// Largest posterior representable below one.
const POSTERIOR_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Evidence contributed by one match at `distance`. Always positive and
/// finite.
pub fn likelihood_ratio(model: &TrainedDecisionModel, distance: f64) -> f64 {
    let e = model.epsilon;
    (model.correct_model.pdf(distance) + e) / (model.incorrect_model.pdf(distance) + e)
}

/// Posterior after log-evidence `log_l_sum`, starting from `prior`.
///
/// Zero evidence returns `prior` unchanged. The result is kept strictly
/// inside (0, 1): strong positive evidence saturates just below one.
pub fn posterior_from_logsum(prior: f64, log_l_sum: f64) -> f64 {
    if log_l_sum == 0.0 {
        return prior;
    }
    let z = prior.ln() - (-prior).ln_1p() + log_l_sum;
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, POSTERIOR_MAX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    /// 1-based sample number.
    pub step: usize,
    pub matched_image: String,
    pub distance: f64,
    pub log_likelihood_ratio: f64,
    /// Posterior of `matched_image` after this sample.
    pub posterior_of_matched: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDecision {
    /// Some image reached the threshold.
    pub decided: bool,
    /// The decided image, or the best posterior when undecided.
    pub matched_image: Option<String>,
    pub posterior: f64,
    pub samples_used: usize,
    pub trace: Vec<SampleTrace>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub threshold: f64,
    /// Defaults to the query's feature count.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(threshold: f64, seed: u64) -> Self {
        SearchConfig {
            threshold,
            max_samples: None,
            seed,
        }
    }
}

fn check_query(query: &ImageRecord, nn: &dyn NearestNeighbor) -> Result<()> {
    if query.features.is_empty() {
        return Err(Error::argument(format!(
            "query '{}' has no features",
            query.image_id
        )));
    }
    if let Some(f) = query.features.iter().find(|f| f.dim() != nn.dim()) {
        return Err(Error::argument(format!(
            "query '{}' has dimension {}, index has {}",
            query.image_id,
            f.dim(),
            nn.dim()
        )));
    }
    Ok(())
}

/// Random visiting order of `n` features for `seed`.
pub fn sampling_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Samples query features until one image's posterior reaches the threshold.
pub fn bayes_search(
    query: &ImageRecord,
    nn: &dyn NearestNeighbor,
    model: &TrainedDecisionModel,
    config: &SearchConfig,
) -> Result<QueryDecision> {
    if query.role != Role::Query {
        return Err(Error::argument(format!(
            "'{}' is a {} image, not a query",
            query.image_id, query.role
        )));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::argument(format!(
            "threshold must lie strictly inside (0, 1), got {}",
            config.threshold
        )));
    }
    check_query(query, nn)?;
    if model.dim != nn.dim() {
        return Err(Error::argument(format!(
            "model dimension {} does not match index dimension {}",
            model.dim,
            nn.dim()
        )));
    }

    let n = query.features.len();
    let budget = config.max_samples.unwrap_or(n).min(n);
    let order = sampling_order(n, config.seed);

    let mut evidence: BTreeMap<String, f64> = BTreeMap::new();
    let mut trace = Vec::with_capacity(budget.min(64));
    for (step, &k) in order.iter().take(budget).enumerate() {
        let m = nn.nearest(&query.features[k])?;
        let log_l = likelihood_ratio(model, m.distance).ln();
        let acc = evidence.entry(m.owner.clone()).or_insert(0.0);
        *acc += log_l;
        let posterior = posterior_from_logsum(model.prior, *acc);
        trace.push(SampleTrace {
            step: step + 1,
            matched_image: m.owner,
            distance: m.distance,
            log_likelihood_ratio: log_l,
            posterior_of_matched: posterior,
        });
        if posterior >= config.threshold {
            let matched = trace.last().map(|t| t.matched_image.clone());
            return Ok(QueryDecision {
                decided: true,
                matched_image: matched,
                posterior,
                samples_used: trace.len(),
                trace,
                threshold: config.threshold,
            });
        }
    }

    // undecided: best accumulated evidence, ties to the smallest id
    let mut best: Option<(&String, f64)> = None;
    for (id, &acc) in &evidence {
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((id, acc));
        }
    }
    let (matched_image, posterior) = match best {
        Some((id, acc)) => (Some(id.clone()), posterior_from_logsum(model.prior, acc)),
        None => (None, model.prior),
    };
    Ok(QueryDecision {
        decided: false,
        matched_image,
        posterior,
        samples_used: trace.len(),
        trace,
        threshold: config.threshold,
    })
}

/// Final per-image posteriors after a sequence of `(image, distance)`
/// observations, without any stopping rule.
pub fn accumulate_posteriors<'a, I>(
    model: &TrainedDecisionModel,
    observations: I,
) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut evidence: BTreeMap<String, f64> = BTreeMap::new();
    for (image, distance) in observations {
        *evidence.entry(image.to_string()).or_insert(0.0) += likelihood_ratio(model, distance).ln();
    }
    evidence
        .into_iter()
        .map(|(id, acc)| (id, posterior_from_logsum(model.prior, acc)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub image_id: String,
    /// Nearest-neighbour votes per image.
    pub tally: BTreeMap<String, usize>,
    pub samples_used: usize,
}

/// Matches every feature (or the first `sample_budget`) and returns the image
/// with most votes, ties to the smallest id.
pub fn vote_search(
    query: &ImageRecord,
    nn: &dyn NearestNeighbor,
    sample_budget: Option<usize>,
) -> Result<VoteResult> {
    check_query(query, nn)?;
    let n = sample_budget
        .unwrap_or(query.features.len())
        .min(query.features.len());
    if n == 0 {
        return Err(Error::argument("vote budget must be at least one feature"));
    }
    let features: Vec<_> = query.features[..n].iter().collect();
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for m in nn.nearest_batch(&features)? {
        *tally.entry(m.owner).or_insert(0) += 1;
    }
    let mut best: Option<(&String, usize)> = None;
    for (id, &votes) in &tally {
        if best.is_none_or(|(_, b)| votes > b) {
            best = Some((id, votes));
        }
    }
    let image_id = best.expect("at least one vote").0.clone();
    Ok(VoteResult {
        image_id,
        tally,
        samples_used: n,
    })
}

/// Writes the trace as CSV: `step,matched_image,distance,log_L,posterior`.
pub fn write_trace_csv<W: Write>(decision: &QueryDecision, out: &mut W) -> Result<()> {
    writeln!(out, "step,matched_image,distance,log_L,posterior")?;
    for t in &decision.trace {
        writeln!(
            out,
            "{},{},{},{},{}",
            t.step, t.matched_image, t.distance, t.log_likelihood_ratio, t.posterior_of_matched
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, HashMap};

    use super::*;
    use crate::corpus::FeatureVector;
    use crate::distributions::{Family, FittedModel};
    use crate::index::Match;
    use crate::training::{TrainStats, MODEL_VERSION};

    fn model(prior: f64, epsilon: f64) -> TrainedDecisionModel {
        TrainedDecisionModel {
            version: MODEL_VERSION,
            dim: 2,
            prior,
            epsilon,
            correct_model: FittedModel::new(Family::Chi, &[2.0, 0.5]).unwrap(),
            incorrect_model: FittedModel::new(Family::Chi, &[2.0, 2.0]).unwrap(),
            train_stats: TrainStats {
                n_correct: 1,
                n_incorrect: 1,
                nbins: 8,
                train_queries: vec![],
            },
            fit_report: vec![],
        }
    }

    /// Answers from a fixed table keyed by the first component.
    struct Scripted(HashMap<u32, (String, f64)>);

    impl NearestNeighbor for Scripted {
        fn dim(&self) -> usize {
            2
        }
        fn nearest(&self, q: &FeatureVector) -> Result<Match> {
            let (owner, distance) = self.0[&q.values()[0].to_bits()].clone();
            Ok(Match {
                owner,
                distance,
                entry_ordinal: 0,
                feature_ordinal: 0,
            })
        }
    }

    fn scripted_query(answers: &[(&str, f64)]) -> (ImageRecord, Scripted) {
        let mut table = HashMap::new();
        let mut features = Vec::new();
        for (i, &(owner, d)) in answers.iter().enumerate() {
            let x = (i as f32 + 1.0) * 1e-3;
            let f = FeatureVector::normalized(&[x as f64, 1.0]).unwrap();
            table.insert(f.values()[0].to_bits(), (owner.to_string(), d));
            features.push(f);
        }
        (
            ImageRecord::new("q", Role::Query, features),
            Scripted(table),
        )
    }

    #[test]
    fn rayleigh_ratio_by_hand() {
        let m = model(0.5, 1e-15);
        let hand = (0.2 / 0.25) * (-0.08f64).exp() / ((0.2 / 4.0) * (-0.005f64).exp());
        assert!((likelihood_ratio(&m, 0.2) - hand).abs() < 1e-12 * hand);
        // 16·e^(−0.075)
        assert!((hand - 14.8439).abs() < 1e-4);
    }

    #[test]
    fn ratio_is_one_where_both_densities_vanish_or_agree() {
        let m = model(0.5, 1e-15);
        assert_eq!(likelihood_ratio(&m, 1e6), 1.0);
        let mut same = model(0.5, 1e-15);
        same.incorrect_model = same.correct_model.clone();
        assert!((likelihood_ratio(&same, 0.7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior_from_logsum(0.37, 0.0), 0.37);
        assert!((posterior_from_logsum(0.5, 3f64.ln()) - 0.75).abs() < 1e-15);
        let direct = {
            let s = 2.0 * 5.0 * 0.5;
            s * 0.1 / (s * 0.1 + 0.9)
        };
        let logs = 2f64.ln() + 5f64.ln() + 0.5f64.ln();
        assert!((posterior_from_logsum(0.1, logs) - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn posterior_stays_open_under_extreme_evidence() {
        for s in [-700.0, -40.0, 40.0, 700.0] {
            let p = posterior_from_logsum(0.5, s);
            assert!(p > 0.0 && p < 1.0, "{s} -> {p}");
        }
    }

    #[test]
    fn stops_at_first_crossing() {
        // three near matches on "a" give overwhelming evidence
        let (q, nn) = scripted_query(&[("a", 0.1), ("a", 0.1), ("a", 0.1), ("b", 3.0)]);
        let m = model(0.2, 1e-12);
        let d = bayes_search(&q, &nn, &m, &SearchConfig::new(0.9, 1)).unwrap();
        assert!(d.decided);
        assert_eq!(d.matched_image.as_deref(), Some("a"));
        assert!(d.posterior >= 0.9);
        assert_eq!(d.samples_used, d.trace.len());
        assert!(d
            .trace
            .iter()
            .all(|t| t.posterior_of_matched > 0.0 && t.posterior_of_matched < 1.0));
    }

    #[test]
    fn threshold_below_prior_decides_on_first_supportive_match() {
        let (q, nn) = scripted_query(&[("a", 0.5), ("b", 0.5)]);
        let m = model(0.6, 1e-12);
        assert!(likelihood_ratio(&m, 0.5) >= 1.0);
        let d = bayes_search(&q, &nn, &m, &SearchConfig::new(0.55, 3)).unwrap();
        assert!(d.decided);
        assert_eq!(d.samples_used, 1);
    }

    #[test]
    fn undecided_returns_argmax_with_id_tie_break() {
        let (q, nn) = scripted_query(&[("b", 1.0), ("a", 1.0)]);
        let m = model(0.01, 1e-12);
        let d = bayes_search(&q, &nn, &m, &SearchConfig::new(0.999, 0)).unwrap();
        assert!(!d.decided);
        assert_eq!(d.samples_used, 2);
        assert_eq!(d.matched_image.as_deref(), Some("a"));
    }

    #[test]
    fn budget_limits_samples() {
        let (q, nn) = scripted_query(&[("a", 4.0), ("b", 4.0), ("c", 4.0), ("d", 4.0)]);
        let m = model(0.01, 1e-12);
        let cfg = SearchConfig {
            threshold: 0.999,
            max_samples: Some(2),
            seed: 5,
        };
        assert_eq!(bayes_search(&q, &nn, &m, &cfg).unwrap().samples_used, 2);
    }

    #[test]
    fn argument_errors() {
        let (mut q, nn) = scripted_query(&[("a", 0.1)]);
        let m = model(0.5, 1e-12);
        assert!(bayes_search(&q, &nn, &m, &SearchConfig::new(1.0, 0)).is_err());
        assert!(bayes_search(&q, &nn, &m, &SearchConfig::new(0.0, 0)).is_err());
        q.role = Role::Reference;
        assert!(bayes_search(&q, &nn, &m, &SearchConfig::new(0.9, 0)).is_err());
        q.role = Role::Query;
        q.features.clear();
        assert!(bayes_search(&q, &nn, &m, &SearchConfig::new(0.9, 0)).is_err());
    }

    #[test]
    fn vote_tally_and_tie_break() {
        let (q, nn) = scripted_query(&[("b", 0.1), ("a", 0.1), ("c", 0.1), ("b", 0.1), ("a", 0.1)]);
        let v = vote_search(&q, &nn, None).unwrap();
        assert_eq!(v.image_id, "a");
        assert_eq!(v.tally.values().sum::<usize>(), 5);
        assert_eq!(
            v.tally,
            BTreeMap::from([("a".into(), 2), ("b".into(), 2), ("c".into(), 1)])
        );
        let v = vote_search(&q, &nn, Some(1)).unwrap();
        assert_eq!((v.image_id.as_str(), v.samples_used), ("b", 1));
    }

    #[test]
    fn trace_csv_header_and_rows() {
        let (q, nn) = scripted_query(&[("a", 3.0), ("b", 3.0)]);
        let d = bayes_search(&q, &nn, &model(0.01, 1e-12), &SearchConfig::new(0.9, 0)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,matched_image,distance,log_L,posterior");
        assert_eq!(lines.len(), 1 + d.trace.len());
    }
}
