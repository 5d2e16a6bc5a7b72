//! Descriptors, image records and corpora.
//!
//! A [`FeatureVector`] stands in for a SIFT descriptor: nonnegative, finite and
//! L2-normalized. Corpora hold reference, noise and query images together with
//! the query → reference ground truth.

pub(crate) mod io;
mod synth;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{ground_truth_path, load_corpus, load_corpus_with, save_corpus, CorpusFormat};
pub use synth::{perturb_feature, synth_corpus, SynthConfig, TransformSpec};

/// Default descriptor length (SIFT).
pub const DEFAULT_DIM: usize = 128;

/// Absolute tolerance on the L2 norm of a normalized descriptor.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

/// A fixed-length descriptor.
///
/// Components are stored in single precision; every distance computation
/// widens them to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    /// Builds a normalized descriptor, rejecting non-finite or negative
    /// components and norms further than [`UNIT_NORM_TOLERANCE`] from one.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        let f = Self::raw(values)?;
        f.check_descriptor()?;
        Ok(f)
    }

    /// Builds an unnormalized vector. Only finiteness is checked.
    ///
    /// Used for pre-normalization descriptors and diagnostic corpora.
    pub fn raw(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("feature vector has no components"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(FeatureVector(values))
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::validation(
                "cannot normalize a zero or non-finite vector",
            ));
        }
        Self::raw(values.iter().map(|v| (v / norm) as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance, accumulated in double precision.
    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Checks the descriptor invariants (nonnegative, unit norm).
    pub fn check_descriptor(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|&v| v < 0.0) {
            return Err(Error::validation(format!(
                "component {i} is negative ({})",
                self.0[i]
            )));
        }
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::validation(format!(
                "descriptor norm {norm} is not 1 within {UNIT_NORM_TOLERANCE}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reference,
    Noise,
    Query,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Reference => "reference",
            Role::Noise => "noise",
            Role::Query => "query",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Role::Reference => 0,
            Role::Noise => 1,
            Role::Query => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        match code {
            0 => Some(Role::Reference),
            1 => Some(Role::Noise),
            2 => Some(Role::Query),
            _ => None,
        }
    }

    /// Reference and noise images are indexed; queries never are.
    pub fn is_indexed(self) -> bool {
        !matches!(self, Role::Query)
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Role::Reference),
            "noise" => Ok(Role::Noise),
            "query" => Ok(Role::Query),
            other => Err(Error::argument(format!("unknown role '{other}'"))),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub role: Role,
    pub features: Vec<FeatureVector>,
    pub meta: BTreeMap<String, String>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, role: Role, features: Vec<FeatureVector>) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            role,
            features,
            meta: BTreeMap::new(),
        }
    }
}

/// Reference, noise and query images sharing one descriptor dimension.
///
/// Immutable once built; [`Corpus::new`] checks every structural invariant.
#[derive(Debug, Clone)]
pub struct Corpus {
    dim: usize,
    images: Vec<ImageRecord>,
    ground_truth: BTreeMap<String, String>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.images == other.images
            && self.ground_truth == other.ground_truth
    }
}

impl Corpus {
    pub fn new(
        dim: usize,
        images: Vec<ImageRecord>,
        ground_truth: BTreeMap<String, String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("corpus dimension must be positive"));
        }
        let mut by_id = HashMap::with_capacity(images.len());
        for (i, image) in images.iter().enumerate() {
            if image.image_id.is_empty() {
                return Err(Error::validation(format!("image #{i} has an empty id")));
            }
            if image.features.is_empty() {
                return Err(Error::validation(format!(
                    "image '{}' has no features",
                    image.image_id
                )));
            }
            if let Some(f) = image.features.iter().position(|f| f.dim() != dim) {
                return Err(Error::validation(format!(
                    "image '{}' feature {f} has dimension {} (corpus dimension {dim})",
                    image.image_id,
                    image.features[f].dim()
                )));
            }
            if by_id.insert(image.image_id.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "duplicate image id '{}'",
                    image.image_id
                )));
            }
        }

        let mut seen_refs = HashMap::new();
        for (query, reference) in &ground_truth {
            match by_id.get(query).map(|&i| images[i].role) {
                Some(Role::Query) => {}
                Some(role) => {
                    return Err(Error::validation(format!(
                        "ground truth key '{query}' is a {role} image, not a query"
                    )))
                }
                None => {
                    return Err(Error::validation(format!(
                        "ground truth key '{query}' is not in the corpus"
                    )))
                }
            }
            match by_id.get(reference).map(|&i| images[i].role) {
                Some(Role::Reference) => {}
                Some(role) => {
                    return Err(Error::validation(format!(
                        "ground truth for '{query}' points at {role} image '{reference}'"
                    )))
                }
                None => {
                    return Err(Error::validation(format!(
                        "ground truth for '{query}' points at unknown image '{reference}'"
                    )))
                }
            }
            if let Some(other) = seen_refs.insert(reference.as_str(), query.as_str()) {
                return Err(Error::validation(format!(
                    "reference '{reference}' is the ground truth of both '{other}' and '{query}'"
                )));
            }
        }

        Ok(Corpus {
            dim,
            images,
            ground_truth,
            by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn ground_truth(&self) -> &BTreeMap<String, String> {
        &self.ground_truth
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.images[i])
    }

    pub fn truth_of(&self, query_id: &str) -> Option<&str> {
        self.ground_truth.get(query_id).map(String::as_str)
    }

    pub fn images_with_role(&self, role: Role) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |im| im.role == role)
    }

    /// Query images in corpus order.
    pub fn queries(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images_with_role(Role::Query)
    }

    /// Number of features that an index built from this corpus would hold.
    pub fn indexed_feature_count(&self) -> usize {
        self.images
            .iter()
            .filter(|im| im.role.is_indexed())
            .map(|im| im.features.len())
            .sum()
    }

    /// Checks the descriptor invariants on every feature.
    pub fn check_descriptors(&self) -> Result<()> {
        for image in &self.images {
            for (i, f) in image.features.iter().enumerate() {
                f.check_descriptor().map_err(|e| {
                    Error::validation(format!("image '{}' feature {i}: {e}", image.image_id))
                })?;
            }
        }
        Ok(())
    }
}

/// Deterministic half split of the corpus queries by ordinal.
///
/// Even ordinals train, odd ordinals test. Only queries with ground truth
/// take part.
pub fn split_queries(corpus: &Corpus) -> (Vec<String>, Vec<String>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, q) in corpus
        .queries()
        .filter(|q| corpus.truth_of(&q.image_id).is_some())
        .enumerate()
    {
        if i % 2 == 0 {
            train.push(q.image_id.clone());
        } else {
            test.push(q.image_id.clone());
        }
    }
    (train, test)
}
