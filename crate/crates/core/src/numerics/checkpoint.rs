//! Parameter checkpoints: one JSON header line followed by the raw
//! little-endian payload of every tensor, in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata, e.g. model hyperparameters.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        tensors: params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape(),
            })
            .collect(),
        meta,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for (_, _, t) in params.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    if header.dtype != DTYPE {
        return Err(Error::format(path, format!("unsupported dtype {}", header.dtype)));
    }
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in &header.tensors {
        let [rows, cols] = entry.shape;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(path, format!("truncated payload in {}", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        store.add(entry.name.clone(), Tensor::from_vec(rows, cols, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store = ParamStore::new();
        store.add("a", Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        store.add("b", Tensor::row(&[0.1, 0.2, 0.3]));
        save_checkpoint(&path, &store, serde_json::json!({"d": 4})).unwrap();
        let (header, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(header.meta["d"], 4);
        for ((_, n1, t1), (_, n2, t2)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            let bits1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits1, bits2);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(3, 3));
        save_checkpoint(&path, &store, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
