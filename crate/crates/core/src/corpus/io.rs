//! Corpus files.
//!
//! Text: a `dim=<d>` header, then one feature per line as
//! `image_id<TAB>role<TAB>v1 v2 ... vd`. Consecutive lines sharing an id form
//! one image. Lines starting with `#` are comments, except
//! `#meta<TAB>image_id<TAB>key<TAB>value` which carries image metadata.
//!
//! Binary: `NDCF`, version byte `1`, little-endian `u32` dim, then per image a
//! `u32`-length-prefixed UTF-8 id, a role byte (0 reference, 1 noise,
//! 2 query), a `u32` feature count and the raw little-endian `f32` values.
//! Metadata is not stored in the binary format.
//!
//! Both formats keep ground truth in a sibling file (see
//! [`ground_truth_path`]) with one `query_id<TAB>reference_id` per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{Corpus, FeatureVector, ImageRecord, Role};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDCF";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Text,
    Binary,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(CorpusFormat::Text),
            "binary" => Ok(CorpusFormat::Binary),
            other => Err(Error::argument(format!(
                "unknown corpus format '{other}' (expected text or binary)"
            ))),
        }
    }
}

/// `<path>.gt`
pub fn ground_truth_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".gt");
    PathBuf::from(s)
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        CorpusFormat::Text => write_text(corpus, &mut out)?,
        CorpusFormat::Binary => write_binary(corpus, &mut out)?,
    }
    out.flush()?;

    let mut gt = BufWriter::new(File::create(ground_truth_path(path))?);
    for (q, r) in corpus.ground_truth() {
        writeln!(gt, "{q}\t{r}")?;
    }
    gt.flush()?;
    Ok(())
}

/// Loads a corpus and checks the descriptor invariants.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    load_corpus_with(path, format, false)
}

/// Loads a corpus, optionally L2-normalizing every feature first (for
/// descriptors stored unnormalized, e.g. as 0–255 bins).
pub fn load_corpus_with(path: &Path, format: CorpusFormat, normalize: bool) -> Result<Corpus> {
    let mut reader = BufReader::new(File::open(path)?);
    let (dim, mut images) = match format {
        CorpusFormat::Text => read_text(&mut reader)?,
        CorpusFormat::Binary => read_binary(&mut reader)?,
    };
    if normalize {
        for image in &mut images {
            for f in &mut image.features {
                *f = FeatureVector::normalized(&f.to_f64())
                    .map_err(|e| Error::validation(format!("image '{}': {e}", image.image_id)))?;
            }
        }
    }

    let gt_path = ground_truth_path(path);
    let ground_truth = if gt_path.exists() {
        read_ground_truth(&gt_path)?
    } else {
        BTreeMap::new()
    };
    let corpus = Corpus::new(dim, images, ground_truth)?;
    corpus.check_descriptors()?;
    Ok(corpus)
}

fn write_text<W: Write>(corpus: &Corpus, out: &mut W) -> Result<()> {
    writeln!(out, "dim={}", corpus.dim())?;
    for image in corpus.images() {
        for (k, v) in &image.meta {
            writeln!(out, "#meta\t{}\t{k}\t{v}", image.image_id)?;
        }
        for f in &image.features {
            write!(out, "{}\t{}\t", image.image_id, image.role)?;
            for (i, v) in f.values().iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                // shortest representation that round-trips the f32 (<= 9 digits)
                write!(out, "{v}")?;
            }
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn check_text_field(line_no: usize, what: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(Error::parse(line_no, format!("invalid {what} '{value}'")));
    }
    Ok(())
}

fn read_text<R: BufRead>(reader: &mut R) -> Result<(usize, Vec<ImageRecord>)> {
    let mut lines = reader.lines().enumerate();
    let dim = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            let value = line
                .trim()
                .strip_prefix("dim=")
                .ok_or_else(|| Error::parse(1, "expected header 'dim=<d>'"))?;
            value
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::parse(1, format!("invalid dimension '{value}'")))?
        }
        None => return Err(Error::parse(1, "empty file")),
    };

    let mut images: Vec<ImageRecord> = Vec::new();
    let mut seen = BTreeMap::new();
    let mut meta: Vec<(usize, String, String, String)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta\t") {
            let parts: Vec<&str> = rest.splitn(3, '\t').collect();
            if parts.len() != 3 {
                return Err(Error::parse(
                    line_no,
                    "meta line needs image_id, key and value",
                ));
            }
            meta.push((
                line_no,
                parts[0].to_string(),
                parts[1].to_string(),
                parts[2].to_string(),
            ));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }

        let mut fields = line.splitn(3, '\t');
        let (id, role, values) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(role), Some(values)) => (id, role, values),
            _ => {
                return Err(Error::parse(
                    line_no,
                    "expected image_id<TAB>role<TAB>values",
                ))
            }
        };
        check_text_field(line_no, "image id", id)?;
        let role = Role::from_str(role).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let values = values
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse::<f32>().map_err(|_| {
                    Error::parse(line_no, format!("value {i} is not a number: '{tok}'"))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        if values.len() != dim {
            return Err(Error::validation(format!(
                "line {line_no}: feature has {} values, expected {dim}",
                values.len()
            )));
        }
        let feature = FeatureVector::raw(values)
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;

        match images.last_mut() {
            Some(last) if last.image_id == id => {
                if last.role != role {
                    return Err(Error::parse(
                        line_no,
                        format!("image '{id}' changes role from {} to {role}", last.role),
                    ));
                }
                last.features.push(feature);
            }
            _ => {
                if seen.insert(id.to_string(), images.len()).is_some() {
                    return Err(Error::parse(
                        line_no,
                        format!("records for image '{id}' are not contiguous"),
                    ));
                }
                images.push(ImageRecord::new(id, role, vec![feature]));
            }
        }
    }

    for (line_no, id, key, value) in meta {
        let &i = seen
            .get(&id)
            .ok_or_else(|| Error::parse(line_no, format!("meta for unknown image '{id}'")))?;
        images[i].meta.insert(key, value);
    }
    Ok((dim, images))
}

fn read_ground_truth(path: &Path) -> Result<BTreeMap<String, String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut map = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (q, r) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(line_no, "expected query_id<TAB>reference_id"))?;
        if map.insert(q.to_string(), r.to_string()).is_some() {
            return Err(Error::parse(
                line_no,
                format!("duplicate ground truth for '{q}'"),
            ));
        }
    }
    Ok(map)
}

fn write_binary<W: Write>(corpus: &Corpus, out: &mut W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&(corpus.dim() as u32).to_le_bytes())?;
    for image in corpus.images() {
        let id = image.image_id.as_bytes();
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id)?;
        out.write_all(&[image.role.code()])?;
        out.write_all(&(image.features.len() as u32).to_le_bytes())?;
        for f in &image.features {
            for v in f.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Little-endian reader that tracks its byte offset for error messages.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        ByteReader { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::format(
                        self.offset + filled as u64,
                        format!("truncated file while reading {what}"),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Returns `false` at a clean end of file.
    pub(crate) fn at_eof(&mut self) -> Result<bool>
    where
        R: BufRead,
    {
        Ok(self.inner.fill_buf()?.is_empty())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.exact(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let start = self.offset;
        let len = self.u32(what)? as usize;
        if len > 1 << 20 {
            return Err(Error::format(
                start,
                format!("{what} length {len} is implausible"),
            ));
        }
        let mut bytes = vec![0u8; len];
        self.exact(&mut bytes, what)?;
        String::from_utf8(bytes).map_err(|_| Error::format(start, format!("{what} is not UTF-8")))
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u8) -> Result<()> {
        let mut m = [0u8; 4];
        self.exact(&mut m, "magic")?;
        if &m != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let v = self.u8("version")?;
        if v != version {
            return Err(Error::format(4, format!("unsupported version {v}")));
        }
        Ok(())
    }
}

fn read_binary<R: BufRead>(reader: &mut R) -> Result<(usize, Vec<ImageRecord>)> {
    let mut r = ByteReader::new(reader);
    r.header(MAGIC, VERSION)?;
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(5, "dimension is zero"));
    }
    let mut images = Vec::new();
    while !r.at_eof()? {
        let id = r.string("image id")?;
        let role_at = r.offset();
        let role = r.u8("role")?;
        let role = Role::from_code(role)
            .ok_or_else(|| Error::format(role_at, format!("unknown role byte {role}")))?;
        let count = r.u32("feature count")? as usize;
        let mut features = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.offset();
            let values = r.f32s(dim, "feature values")?;
            features.push(
                FeatureVector::raw(values)
                    .map_err(|e| Error::format(at, format!("image '{id}': {e}")))?,
            );
        }
        images.push(ImageRecord::new(id, role, features));
    }
    Ok((dim, images))
}
