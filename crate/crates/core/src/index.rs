//! Exact nearest-neighbour search over reference and noise descriptors.
//!
//! Search is a linear scan. Single-precision dot products screen every
//! entry, eight entries per vector lane group, and the survivors are re-ranked with an exact double-precision
//! distance. The screening error is bounded analytically, so no entry that
//! could win under the double-precision scan is ever discarded. Results are
//! identical to a scalar `f64` scan, ties going to the smallest entry
//! ordinal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::io::ByteReader;
use crate::corpus::{Corpus, FeatureVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDIX";
const VERSION: u8 = 1;
/// Queries scanned together so each stored entry is loaded once per block.
const QUERY_BLOCK: usize = 8;
/// Entries interleaved per lane group in the screening layout.
const LANES: usize = 8;

/// A nearest-neighbour answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    /// Image owning the matched entry.
    pub owner: String,
    /// Euclidean distance in descriptor units.
    pub distance: f64,
    /// Position of the entry in the index.
    pub entry_ordinal: usize,
    /// Position of the matched feature inside its owner image.
    pub feature_ordinal: u32,
}

/// Anything that can answer exact or approximate nearest-neighbour queries.
pub trait NearestNeighbor: Sync {
    fn dim(&self) -> usize;

    fn nearest(&self, query: &FeatureVector) -> Result<Match>;

    fn nearest_batch(&self, queries: &[&FeatureVector]) -> Result<Vec<Match>> {
        queries.iter().map(|q| self.nearest(q)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    dim: usize,
    data: Vec<f32>,
    /// `data` regrouped so lane `l` of group `g`, component `k` sits at
    /// `(g * dim + k) * LANES + l`; padding entries are zero.
    lanes: Vec<f32>,
    norms_sq: Vec<f64>,
    owners: Vec<u32>,
    owner_ids: Vec<String>,
    ordinals: Vec<u32>,
}

/// Squared Euclidean distance in scalar double precision.
pub fn squared_distance_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        s += d * d;
    }
    s
}

/// Relative error bound of a recursively summed single-precision dot
/// product of length `dim` against `sum |a_i b_i|`, doubled for slack.
fn dot_error_factor(dim: usize) -> f64 {
    let u = f32::EPSILON as f64 / 2.0;
    let steps = (dim + 2) as f64;
    2.0 * steps * u / (1.0 - steps * u)
}

impl FeatureIndex {
    /// Indexes every feature of every reference and noise image, in image
    /// then feature order.
    pub fn build(corpus: &Corpus) -> Result<Self> {
        let mut index = FeatureIndex {
            dim: corpus.dim(),
            data: Vec::with_capacity(corpus.indexed_feature_count() * corpus.dim()),
            lanes: Vec::new(),
            norms_sq: Vec::new(),
            owners: Vec::new(),
            owner_ids: Vec::new(),
            ordinals: Vec::new(),
        };
        for image in corpus.images().iter().filter(|im| im.role.is_indexed()) {
            let owner = index.owner_ids.len() as u32;
            index.owner_ids.push(image.image_id.clone());
            for (k, f) in image.features.iter().enumerate() {
                index.push_entry(owner, k as u32, f.values());
            }
        }
        if index.is_empty() {
            return Err(Error::EmptyIndex(
                "corpus has no reference or noise images".into(),
            ));
        }
        index.regroup();
        Ok(index)
    }

    fn push_entry(&mut self, owner: u32, ordinal: u32, values: &[f32]) {
        self.data.extend_from_slice(values);
        self.norms_sq
            .push(values.iter().map(|&v| (v as f64) * (v as f64)).sum());
        self.owners.push(owner);
        self.ordinals.push(ordinal);
    }

    fn regroup(&mut self) {
        let dim = self.dim;
        let groups = self.len().div_ceil(LANES);
        let mut lanes = vec![0f32; groups * dim * LANES];
        for (i, row) in self.data.chunks_exact(dim).enumerate() {
            let (g, l) = (i / LANES, i % LANES);
            for (k, &v) in row.iter().enumerate() {
                lanes[(g * dim + k) * LANES + l] = v;
            }
        }
        self.lanes = lanes;
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn owner_of(&self, i: usize) -> &str {
        &self.owner_ids[self.owners[i] as usize]
    }

    pub fn feature_ordinal_of(&self, i: usize) -> u32 {
        self.ordinals[i]
    }

    fn check_query(&self, q: &FeatureVector) -> Result<()> {
        if q.dim() != self.dim {
            return Err(Error::argument(format!(
                "query has dimension {}, index has {}",
                q.dim(),
                self.dim
            )));
        }
        if self.is_empty() {
            return Err(Error::EmptyIndex("index has no entries".into()));
        }
        Ok(())
    }

    fn make_match(&self, entry: usize, d2: f64) -> Match {
        Match {
            owner: self.owner_of(entry).to_string(),
            distance: d2.sqrt(),
            entry_ordinal: entry,
            feature_ordinal: self.ordinals[entry],
        }
    }

    /// Re-ranks screened candidates exactly. Candidates arrive in entry order,
    /// so a strict comparison keeps the smallest ordinal on ties.
    fn resolve(&self, q: &[f32], candidates: &[usize]) -> Match {
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in candidates {
            let d2 = squared_distance_f64(q, self.entry(i));
            if d2 < best.0 || best.1 == usize::MAX {
                best = (d2, i);
            }
        }
        self.make_match(best.1, best.0)
    }

    /// Screens up to `N` queries against every entry.
    fn scan_block<const N: usize>(&self, block: &[&FeatureVector]) -> Vec<Match> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { self.scan_block_avx2::<N>(block) };
        }
        self.scan_block_generic::<N>(block)
    }

    /// Same arithmetic as the generic path, compiled with wider vectors.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn scan_block_avx2<const N: usize>(&self, block: &[&FeatureVector]) -> Vec<Match> {
        self.scan_block_generic::<N>(block)
    }

    #[inline(always)]
    fn scan_block_generic<const N: usize>(&self, block: &[&FeatureVector]) -> Vec<Match> {
        debug_assert!(!block.is_empty() && block.len() <= N);
        let dim = self.dim;
        let factor = dot_error_factor(dim);
        // components transposed so one row feeds all N queries; unused
        // query slots stay zero and are ignored below
        let mut qt = vec![[0f32; N]; dim];
        let mut q_n2 = [0f64; N];
        for (j, q) in block.iter().enumerate() {
            for (k, &v) in q.values().iter().enumerate() {
                qt[k][j] = v;
                q_n2[j] += (v as f64) * (v as f64);
            }
        }
        let q_n = q_n2.map(f64::sqrt);
        let mut lowers: Vec<Vec<(usize, f64)>> = vec![Vec::new(); block.len()];
        let mut uppers = [f64::INFINITY; N];

        for (g, group) in self.lanes.chunks_exact(dim * LANES).enumerate() {
            let mut acc = [[0f32; LANES]; N];
            for (row, qk) in group.chunks_exact(LANES).zip(&qt) {
                for j in 0..N {
                    for l in 0..LANES {
                        acc[j][l] += qk[j] * row[l];
                    }
                }
            }
            let first = g * LANES;
            let width = LANES.min(self.len() - first);
            let mut e_n2 = [0f64; LANES];
            e_n2[..width].copy_from_slice(&self.norms_sq[first..first + width]);
            let e_n = e_n2.map(f64::sqrt);
            for j in 0..block.len() {
                let mut approx = [0f64; LANES];
                let mut slack = [0f64; LANES];
                for l in 0..LANES {
                    approx[l] = q_n2[j] + e_n2[l] - 2.0 * acc[j][l] as f64;
                    slack[l] = 2.0 * factor * q_n[j] * e_n[l]
                        + 1e-12 * (q_n2[j] + e_n2[l])
                        + f64::MIN_POSITIVE;
                }
                if !(0..width).any(|l| approx[l] - slack[l] <= uppers[j]) {
                    continue;
                }
                for l in 0..width {
                    let lower = approx[l] - slack[l];
                    if lower <= uppers[j] {
                        let upper = approx[l] + slack[l];
                        if upper < uppers[j] {
                            uppers[j] = upper;
                        }
                        lowers[j].push((first + l, lower));
                    }
                }
            }
        }

        block
            .iter()
            .zip(lowers)
            .zip(uppers)
            .map(|((q, lows), upper)| {
                // entries kept early may have been overtaken by a later bound
                let candidates: Vec<usize> = lows
                    .into_iter()
                    .filter(|&(_, lower)| lower <= upper)
                    .map(|(i, _)| i)
                    .collect();
                self.resolve(q.values(), &candidates)
            })
            .collect()
    }

    /// Exact nearest neighbour of `q`.
    pub fn nn_query(&self, q: &FeatureVector) -> Result<Match> {
        self.check_query(q)?;
        Ok(self
            .scan_block::<1>(&[q])
            .pop()
            .expect("one query in, one match out"))
    }

    /// Exact nearest neighbours of many queries, in input order.
    pub fn nn_batch(&self, queries: &[&FeatureVector]) -> Result<Vec<Match>> {
        for q in queries {
            self.check_query(q)?;
        }
        let blocks: Vec<Vec<Match>> = queries
            .par_chunks(QUERY_BLOCK)
            .map(|block| {
                if block.len() == QUERY_BLOCK {
                    self.scan_block::<QUERY_BLOCK>(block)
                } else {
                    block
                        .iter()
                        .flat_map(|q| self.scan_block::<1>(&[*q]))
                        .collect()
                }
            })
            .collect();
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Plain scalar scan without screening. Slow; kept for cross-checks.
    pub fn nn_query_scalar(&self, q: &FeatureVector) -> Result<Match> {
        self.check_query(q)?;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.len() {
            let d2 = squared_distance_f64(q.values(), self.entry(i));
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        Ok(self.make_match(best.1, best.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION])?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            let id = self.owner_of(i).as_bytes();
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id)?;
            out.write_all(&self.ordinals[i].to_le_bytes())?;
            for v in self.entry(i) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut r = ByteReader::new(&mut reader);
        r.header(MAGIC, VERSION)?;
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::format(5, "dimension is zero"));
        }
        let count = r.u64("entry count")?;
        if count == 0 {
            return Err(Error::format(9, "index has no entries"));
        }
        let mut index = FeatureIndex {
            dim,
            data: Vec::new(),
            lanes: Vec::new(),
            norms_sq: Vec::new(),
            owners: Vec::new(),
            owner_ids: Vec::new(),
            ordinals: Vec::new(),
        };
        for _ in 0..count {
            let id = r.string("owner id")?;
            let ordinal = r.u32("feature ordinal")?;
            let at = r.offset();
            let values = r.f32s(dim, "entry values")?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(at, "entry has a non-finite value"));
            }
            let owner = match index.owner_ids.last() {
                Some(last) if *last == id => index.owner_ids.len() as u32 - 1,
                _ => {
                    index.owner_ids.push(id);
                    index.owner_ids.len() as u32 - 1
                }
            };
            index.push_entry(owner, ordinal, &values);
        }
        if !r.at_eof()? {
            return Err(Error::format(
                r.offset(),
                "trailing bytes after the last entry",
            ));
        }
        index.regroup();
        Ok(index)
    }
}

impl NearestNeighbor for FeatureIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn nearest(&self, query: &FeatureVector) -> Result<Match> {
        self.nn_query(query)
    }

    fn nearest_batch(&self, queries: &[&FeatureVector]) -> Result<Vec<Match>> {
        self.nn_batch(queries)
    }
}

pub fn build_index(corpus: &Corpus) -> Result<FeatureIndex> {
    FeatureIndex::build(corpus)
}
