//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `REGRLCK1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every parameter's values as little-endian `f64`
//! in header order. Header entries carry `name`, `shape` and `offset`, the
//! offset counted in `f64` elements from the start of the data block. The
//! header may also carry free-form `meta` JSON (the run configuration).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::DiffError;

const MAGIC: &[u8; 8] = b"REGRLCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub params: Vec<CheckpointEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(store: &ParamStore, meta: serde_json::Value) -> Vec<u8> {
    let mut offset = 0;
    let params = store
        .iter()
        .map(|p| {
            let e = CheckpointEntry { name: p.name().to_string(), shape: p.shape().to_vec(), offset };
            offset += p.value().len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&CheckpointHeader { params, meta }).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in store.iter() {
        for v in p.value() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ParamStore), DiffError> {
    let bad = |m: &str| DiffError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..data_start]).map_err(|e| bad(&format!("header: {e}")))?;
    let data = &bytes[data_start..];
    if !data.len().is_multiple_of(8) {
        return Err(bad("data block is not a whole number of f64 values"));
    }
    let floats: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut store = ParamStore::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let end = e.offset.checked_add(n).filter(|&end| end <= floats.len()).ok_or_else(|| bad(&format!("parameter `{}` out of bounds", e.name)))?;
        store.add(e.name.clone(), &e.shape, floats[e.offset..end].to_vec());
    }
    Ok((header, store))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<(), DiffError> {
    let bytes = encode_checkpoint(store, meta);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore), DiffError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Copies checkpoint values into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), DiffError> {
    if target.len() != loaded.len() {
        return Err(DiffError::Checkpoint(format!("expected {} parameters, checkpoint has {}", target.len(), loaded.len())));
    }
    for (t, l) in target.iter_mut().zip(loaded.iter()) {
        if t.name() != l.name() || t.shape() != l.shape() {
            return Err(DiffError::Checkpoint(format!("parameter mismatch: `{}` {:?} vs `{}` {:?}", t.name(), t.shape(), l.name(), l.shape())));
        }
        t.value_mut().copy_from_slice(l.value());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut s = ParamStore::new();
            s.add("a", &[split], values[..split].to_vec());
            s.add("b.weight", &[values.len() - split, 1], values[split..].to_vec());
            let meta = serde_json::json!({"arch": "ibac"});
            let bytes = encode_checkpoint(&s, meta.clone());
            let (h, back) = decode_checkpoint(&bytes).unwrap();
            prop_assert_eq!(h.meta, meta);
            prop_assert_eq!(back.flat_values(), s.flat_values());
            prop_assert_eq!(h.params[1].offset, split);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_checkpoint(b"not a checkpoint").is_err());
        let mut s = ParamStore::new();
        s.add("a", &[3], vec![1.0, 2.0, 3.0]);
        let bytes = encode_checkpoint(&s, serde_json::Value::Null);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
    }
}
