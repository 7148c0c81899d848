//! `C2FM` checkpoints of the projection head.
//!
//! ```text
//! "C2FM" | version u32 | n_tensors u32 | step u32
//! n_tensors x ( n_rows u32 | dim u32 | n_rows * dim f32 )
//! ```
//!
//! Tensors are `w1`, `b1`, `w2`, `b2`; biases are stored as one-row matrices.
//! Everything is little-endian, values are rounded to f32.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::embedding::{decode_f32s, parse_header, read_u32, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::model::ProjectionHead;

pub const MAGIC: [u8; 4] = *b"C2FM";

pub fn to_bytes(head: &ProjectionHead, step: u64) -> Vec<u8> {
    let tensors: [(usize, usize, &[f64]); 4] = [
        (head.w1.nrows(), head.w1.ncols(), head.w1.as_slice().unwrap()),
        (1, head.b1.len(), head.b1.as_slice().unwrap()),
        (head.w2.nrows(), head.w2.ncols(), head.w2.as_slice().unwrap()),
        (1, head.b2.len(), head.b2.as_slice().unwrap()),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(step.min(u32::MAX as u64) as u32).to_le_bytes());
    for (rows, cols, data) in tensors {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ProjectionHead, u64)> {
    let (n_tensors, step) = parse_header(bytes, &MAGIC, "C2FM")?;
    if n_tensors != 4 {
        return Err(Error::Format(format!("expected 4 tensors, found {n_tensors}")));
    }
    let mut at = 16;
    let mut tensors = Vec::with_capacity(4);
    for t in 0..4 {
        if bytes.len() < at + 8 {
            return Err(Error::Format(format!("truncated header of tensor {t}")));
        }
        let rows = read_u32(bytes, at) as usize;
        let cols = read_u32(bytes, at + 4) as usize;
        at += 8;
        let len = rows * cols * 4;
        if bytes.len() < at + len {
            return Err(Error::Format(format!("truncated payload of tensor {t}")));
        }
        let data: Vec<f64> = decode_f32s(&bytes[at..at + len])
            .into_iter()
            .map(f64::from)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value in tensor {t}")));
        }
        at += len;
        tensors.push((rows, cols, data));
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let mut it = tensors.into_iter();
    let mut matrix = || {
        let (r, c, d) = it.next().unwrap();
        Array2::from_shape_vec((r, c), d).map_err(|e| Error::Format(e.to_string()))
    };
    let w1 = matrix()?;
    let b1 = Array1::from(matrix()?.into_raw_vec_and_offset().0);
    let w2 = matrix()?;
    let b2 = Array1::from(matrix()?.into_raw_vec_and_offset().0);
    if b1.len() != w1.nrows() || w2.ncols() != w1.nrows() || b2.len() != w2.nrows() {
        return Err(Error::Format("inconsistent tensor shapes".into()));
    }
    Ok((ProjectionHead { w1, b1, w2, b2 }, step as u64))
}

pub fn save(head: &ProjectionHead, step: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(head, step)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ProjectionHead, u64)> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
