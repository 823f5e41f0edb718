//! On-disk formats for embeddings and labels.
//!
//! Embedding files are little-endian: the 8-byte magic `LPEMB1\0\0`, `u32`
//! rows, `u32` columns, then `rows * cols` `f32` values in row-major order.
//!
//! Label files are headerless CSV with one `index,class` pair per line, both
//! 0-based, LF line endings. Ground-truth files share the shape.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"LPEMB1\0\0";
const HEADER_LEN: usize = 16;

pub fn encode_embeddings(matrix: ArrayView2<'_, f32>) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::DimensionOverflow {
        rows: rows as u64,
        cols: cols as u64,
    })?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::DimensionOverflow {
        rows: rows as u64,
        cols: cols as u64,
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    for v in matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Array2<f32>> {
    if bytes.len() < EMBEDDING_MAGIC.len() || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::BadMagic { kind: "embedding" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
    let payload = rows
        .checked_mul(cols)
        .and_then(|count| count.checked_mul(4))
        .and_then(|len| usize::try_from(len).ok())
        .and_then(|len| len.checked_add(HEADER_LEN))
        .ok_or(Error::DimensionOverflow { rows, cols })?;
    if bytes.len() < payload {
        return Err(Error::Truncated {
            expected: payload,
            actual: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} trailing bytes after payload", bytes.len() - payload),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows as usize, cols as usize), values)
        .expect("payload length checked above"))
}

pub fn write_embeddings(matrix: ArrayView2<'_, f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embeddings(matrix)?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    decode_embeddings(&fs::read(path)?)
}

/// Reads an embedding file and widens it to `f64`.
pub fn read_embeddings_f64(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    Ok(read_embeddings(path)?.mapv(f64::from))
}

pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected `index,class`, got {line:?}")))?;
        let index = a
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad index {a:?}: {e}")))?;
        let class = b
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad class {b:?}: {e}")))?;
        out.push((index, class));
    }
    Ok(out)
}

pub fn format_labels(pairs: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(pairs.len() * 8);
    for (i, c) in pairs {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(pairs: &[(usize, usize)], path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(format_labels(pairs).as_bytes())?;
    Ok(())
}

/// Turns a ground-truth CSV into a dense class vector of length `n`.
///
/// Every index in `0..n` must appear exactly once.
pub fn dense_classes(pairs: &[(usize, usize)], n: usize) -> Result<Vec<usize>> {
    let mut classes = vec![None; n];
    for &(i, c) in pairs {
        let slot = classes.get_mut(i).ok_or_else(|| {
            Error::InvalidDataset(format!("ground-truth index {i} out of range for {n} examples"))
        })?;
        if slot.replace(c).is_some() {
            return Err(Error::InvalidDataset(format!("ground-truth index {i} repeated")));
        }
    }
    classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::InvalidDataset(format!("no ground truth for {i}"))))
        .collect()
}
