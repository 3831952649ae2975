//! Binary weight snapshots for a [`ParameterStore`].
//!
//! File layout (little-endian): the 5-byte magic `RAFW1`, then for each
//! parameter in name order: u32 name length, the UTF-8 name, u32 rank,
//! u32 per dimension, then the f64 payload. Name order makes snapshots of
//! equal stores byte-identical.

use std::fs;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::tensor::ParameterStore;

pub const MAGIC: &[u8; 5] = b"RAFW1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic (not a RAFW1 weights file)")]
    BadMagic { path: String },
    #[error("{path}: truncated or malformed at parameter {index}")]
    Malformed { path: String, index: usize },
    #[error("weights file has parameter {name} with shape {found:?}, store expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weights file has no parameter named {0}")]
    MissingParameter(String),
}

type Result<T> = std::result::Result<T, WeightsError>;

fn io_err(path: &Path, source: std::io::Error) -> WeightsError {
    WeightsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize every parameter (frozen included) to `path`.
pub fn save_weights(path: &Path, store: &ParameterStore) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for (name, value) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for d in value.shape() {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for x in value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Raw (name, shape, data) triples from a weights file, in file order.
pub fn read_weights(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| io_err(path, e))?;
    if raw.len() < 5 || &raw[..5] != MAGIC {
        return Err(WeightsError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut entries = Vec::new();
    let mut pos = 5usize;
    let malformed = |index| WeightsError::Malformed {
        path: path.display().to_string(),
        index,
    };
    let mut index = 0usize;
    while pos < raw.len() {
        let take_u32 = |pos: &mut usize| -> Option<usize> {
            let b = raw.get(*pos..*pos + 4)?;
            *pos += 4;
            Some(u32::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let name_len = take_u32(&mut pos).ok_or_else(|| malformed(index))?;
        let name_bytes = raw.get(pos..pos + name_len).ok_or_else(|| malformed(index))?;
        let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| malformed(index))?;
        pos += name_len;
        let rank = take_u32(&mut pos).ok_or_else(|| malformed(index))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut pos).ok_or_else(|| malformed(index))?);
        }
        let count: usize = shape.iter().product();
        let bytes = raw.get(pos..pos + count * 8).ok_or_else(|| malformed(index))?;
        pos += count * 8;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push((name, shape, data));
        index += 1;
    }
    Ok(entries)
}

/// Load a snapshot into an already-registered store. Every parameter in
/// the store must be present in the file with a matching shape.
pub fn load_weights(path: &Path, store: &ParameterStore) -> Result<()> {
    let entries = read_weights(path)?;
    let by_name: std::collections::BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = entries
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    for (name, value) in store.iter() {
        let (shape, data) = by_name
            .get(name.as_str())
            .ok_or_else(|| WeightsError::MissingParameter(name.clone()))?;
        if value.shape() != shape.as_slice() {
            return Err(WeightsError::ShapeMismatch {
                name: name.clone(),
                expected: value.shape().to_vec(),
                found: (*shape).clone(),
            });
        }
        value.set_data(data);
    }
    Ok(())
}

/// Byte buffer of the current store contents; used for bit-identity checks.
pub fn snapshot_bytes(store: &ParameterStore) -> Vec<u8> {
    let mut buf = Vec::new();
    for (name, value) in store.iter() {
        buf.extend_from_slice(name.as_bytes());
        for x in value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}
