//! Dense embedding matrices in the `C2FE` binary format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "C2FE"
//! 4       4     format version (u32, currently 1)
//! 8       4     n_rows (u32)
//! 12      4     dim (u32)
//! 16      4*n   n_rows * dim IEEE-754 f32 values, row-major
//! ```
//!
//! A sidecar `<file>.manifest.json` may record the encoder, template id,
//! gloss usage and a SHA-256 over the row ids, so row alignment with the
//! corpus or taxonomy can be checked on load.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"C2FE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Passage,
    Prototype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
    kind: EmbeddingKind,
}

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>, kind: EmbeddingKind) -> Result<Self> {
        if n_rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::Format(format!(
                "{n_rows} x {dim} matrix needs {} values, got {}",
                n_rows.saturating_mul(dim),
                data.len()
            )));
        }
        if n_rows > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(Error::Format("matrix shape exceeds u32 header fields".into()));
        }
        check_finite(&data, dim)?;
        Ok(EmbeddingMatrix {
            n_rows,
            dim,
            data,
            kind,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], kind: EmbeddingKind) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Format(format!(
                "row {i} has length {}, expected {dim}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat(), kind)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n_rows)
    }

    /// Row subset `[start, start + len)` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_rows {
            return Err(Error::Format(format!(
                "rows {start}..{} out of range for {} rows",
                start + len,
                self.n_rows
            )));
        }
        Self::new(
            len,
            self.dim,
            self.data[start * self.dim..(start + len) * self.dim].to_vec(),
            self.kind,
        )
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_rows, self.dim), |(i, j)| {
            self.data[i * self.dim + j] as f64
        })
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
            .collect()
    }

    /// Scales every row to unit L2 norm. Norms are accumulated in f64.
    pub fn l2_normalize(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (row, norm) in self.row_norms().into_iter().enumerate() {
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row });
            }
            for x in &mut data[row * self.dim..(row + 1) * self.dim] {
                *x = (*x as f64 / norm) as f32;
            }
        }
        Ok(EmbeddingMatrix { data, ..*self })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], kind: EmbeddingKind) -> Result<Self> {
        let (n_rows, dim) = parse_header(bytes, &MAGIC, "C2FE")?;
        let expected = n_rows as u64 * dim as u64 * 4;
        let payload = &bytes[HEADER_LEN..];
        if (payload.len() as u64) < expected {
            return Err(Error::Format(format!(
                "truncated payload: header claims {n_rows} x {dim} ({expected} bytes), found {} bytes",
                payload.len()
            )));
        }
        if payload.len() as u64 > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after {n_rows} x {dim} payload",
                payload.len() as u64 - expected
            )));
        }
        let data = decode_f32s(payload);
        Self::new(n_rows, dim, data, kind)
    }

    pub fn read(path: impl AsRef<Path>, kind: EmbeddingKind) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, kind).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_finite(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / dim.max(1),
            col: i % dim.max(1),
        }),
        None => Ok(()),
    }
}

/// Validates the 16-byte header shared with checkpoints and returns (n_rows, dim).
pub(crate) fn parse_header(bytes: &[u8], magic: &[u8; 4], name: &str) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != magic {
        return Err(Error::Format(format!(
            "magic mismatch: expected {name:?}, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok((read_u32(bytes, 8) as usize, read_u32(bytes, 12) as usize))
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Provenance sidecar written next to an embedding file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub encoder: String,
    #[serde(default)]
    pub template_id: Option<u32>,
    #[serde(default)]
    pub gloss: bool,
    pub n_rows: usize,
    #[serde(default)]
    pub id_hash: Option<String>,
}

impl EmbeddingManifest {
    pub fn path_for(embeddings: impl AsRef<Path>) -> PathBuf {
        let mut s = embeddings.as_ref().as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Reads the sidecar of `embeddings` if one exists.
    pub fn load_for(embeddings: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = Self::path_for(embeddings);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn write_for(&self, embeddings: impl AsRef<Path>) -> Result<()> {
        let path = Self::path_for(embeddings);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Checks row count and, when recorded, the id hash against `ids`.
    pub fn verify(&self, ids: &[String]) -> Result<()> {
        if self.n_rows != ids.len() {
            return Err(Error::Format(format!(
                "manifest records {} rows but {} ids were supplied",
                self.n_rows,
                ids.len()
            )));
        }
        if let Some(expected) = &self.id_hash {
            let actual = id_hash(ids);
            if !expected.eq_ignore_ascii_case(&actual) {
                return Err(Error::Format(format!(
                    "row id hash mismatch: manifest {expected}, computed {actual}"
                )));
            }
        }
        Ok(())
    }
}

/// SHA-256 over the ids, each followed by `\n`, as lowercase hex.
pub fn id_hash(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
