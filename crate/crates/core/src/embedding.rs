//! Embedding containers, file formats, splitting and seeded randomness.
//!
//! The binary format (`.frte`) is little-endian throughout:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FRTE"
//!      4     4  version (u32) = 1
//!      8     8  n rows (u64)
//!     16     4  d columns (u32)
//!     20  4·n·d values, IEEE-754 binary32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ForteError, Result};
use crate::matrix::FeatureMatrix;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"FRTE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// `n` feature vectors of dimension `d`, stored row-major as `f32`.
///
/// Construction rejects empty shapes and non-finite values, so every
/// instance satisfies `n >= 1`, `d >= 1` and all-finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 {
            return Err(ForteError::Empty("embedding matrix has no rows"));
        }
        if d == 0 {
            return Err(ForteError::Empty("embedding matrix has no columns"));
        }
        if data.len() != n * d {
            return Err(ForteError::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ForteError::NonFinite {
                row: pos / d + 1,
                col: pos % d + 1,
            });
        }
        Ok(EmbeddingMatrix { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(ForteError::RaggedRow {
                    row: i + 1,
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    /// Convenience constructor from `f64` rows (values are rounded to `f32`).
    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f32).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Rows at the given indices, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    pub fn to_features(&self) -> FeatureMatrix {
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        FeatureMatrix::new(self.n, self.d, data).expect("shape is consistent")
    }

    /// Rounds a feature matrix to `f32` storage.
    pub fn from_features(f: &FeatureMatrix) -> Result<Self> {
        let data = f.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(f.rows(), f.cols(), data)
    }

    /// Applies `f` to every value, keeping the shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.n, self.d, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Reads a comma-separated matrix. A first line made only of non-numeric
/// tokens is treated as a header and skipped. Reported rows are 1-based line
/// numbers of the file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ForteError::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<EmbeddingMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut data = Vec::new();
    let mut d = 0usize;
    let mut n = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ForteError::Config(format!("csv: {e}")))?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if n == 0 && d == 0 && record.iter().all(|t| t.parse::<f64>().is_err()) {
            // header row
            d = record.len();
            continue;
        }
        if d == 0 {
            d = record.len();
        }
        if record.len() != d {
            return Err(ForteError::RaggedRow {
                row: line,
                expected: d,
                found: record.len(),
            });
        }
        for (col, tok) in record.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| ForteError::BadCell {
                row: line,
                col: col + 1,
                text: tok.to_string(),
            })?;
            let v32 = v as f32;
            if !v32.is_finite() {
                return Err(ForteError::NonFinite {
                    row: line,
                    col: col + 1,
                });
            }
            data.push(v32);
        }
        n += 1;
    }
    EmbeddingMatrix::new(n, d, data)
}

/// Writes a matrix as CSV. Values use the shortest decimal form that reads
/// back to the same `f32`, so CSV round trips are lossless.
pub fn save_csv(
    m: &EmbeddingMatrix,
    header: Option<&[String]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if let Some(labels) = header {
        out.push_str(&labels.join(","));
        out.push('\n');
    }
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| ForteError::io(path, e))
}

pub fn encode_binary(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    buf.extend_from_slice(&EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.n as u64).to_le_bytes());
    buf.extend_from_slice(&(m.d as u32).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 {
        return Err(ForteError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != EMBEDDING_MAGIC {
        return Err(ForteError::BadMagic {
            expected: EMBEDDING_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ForteError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(ForteError::VersionMismatch {
            expected: EMBEDDING_VERSION,
            found: version,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| ForteError::param("declared matrix size overflows"))?;
    if payload.len() < expected {
        return Err(ForteError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(ForteError::DimensionMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n, d, data)
}

pub fn save_binary(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| ForteError::io(path, e))?;
    f.write_all(&encode_binary(m))
        .map_err(|e| ForteError::io(path, e))
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ForteError::io(path, e))?;
    decode_binary(&bytes)
}

/// Loads `.csv`/`.txt` files as CSV and anything else as binary.
pub fn load_any(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if is_csv_path(path) {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

pub fn is_csv_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("csv") | Some("txt")
    )
}

/// Deterministic random stream: ChaCha8 keyed by `seed_from_u64(seed)`.
///
/// ChaCha output is specified bit-for-bit, so equal seeds give equal streams on
/// every platform. Independent substreams share the key and differ in the
/// ChaCha stream id.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "ChaCha8 (rand_chacha), key from seed_from_u64";

    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Row indices of the three parts of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub held_out: Vec<usize>,
    pub reference: Vec<usize>,
    pub test_like: Vec<usize>,
}

/// Shuffles `0..n` under `seed` and cuts it into contiguous thirds.
///
/// Remainder rows go to `held_out` first, then `reference`.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 3 {
        return Err(ForteError::param(format!(
            "three-way split needs at least 3 rows, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeededRng::new(seed));
    let base = n / 3;
    let rem = n % 3;
    let a = base + usize::from(rem >= 1);
    let b = base + usize::from(rem >= 2);
    Ok(SplitIndices {
        held_out: order[..a].to_vec(),
        reference: order[a..a + b].to_vec(),
        test_like: order[a + b..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub held_out: EmbeddingMatrix,
    pub reference: EmbeddingMatrix,
    pub test_like: EmbeddingMatrix,
    pub seed: u64,
}

impl SplitTriple {
    pub fn from_indices(m: &EmbeddingMatrix, idx: &SplitIndices, seed: u64) -> Result<Self> {
        Ok(SplitTriple {
            held_out: m.select_rows(&idx.held_out)?,
            reference: m.select_rows(&idx.reference)?,
            test_like: m.select_rows(&idx.test_like)?,
            seed,
        })
    }
}

pub fn three_way_split(m: &EmbeddingMatrix, seed: u64) -> Result<SplitTriple> {
    let idx = split_indices(m.n(), seed)?;
    SplitTriple::from_indices(m, &idx, seed)
}
