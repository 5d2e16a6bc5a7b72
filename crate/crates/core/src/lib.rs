//! Near-duplicate image detection over local feature descriptors.
//!
//! Query descriptors are matched exactly against a reference database. The
//! distance of every match is turned into a likelihood ratio using densities
//! fitted to correct and incorrect training matches, and a per-image posterior
//! is accumulated until one image crosses a probability threshold.
//!
//! Modules follow the pipeline:
//!
//! - [`corpus`]: descriptors, image records, synthetic corpora, file formats
//! - [`index`]: exact nearest-neighbour search
//! - [`distributions`]: distance densities, histograms, least-squares fitting
//! - [`training`]: match collection, prior estimation, model files
//! - [`decision`]: sequential Bayesian search and the vote baseline
//! - [`harness`]: evaluation, CSV reports and SVG plots

pub mod corpus;
pub mod decision;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod index;
pub mod training;

pub use error::{Error, Result};
