//! Embedding files: a JSON header line `{kind, dim, n_rows, track_ids}`
//! followed by `n_rows × dim` little-endian `f32` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingKind, EmbeddingMatrix};
use crate::corpus::TrackCatalog;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_REPORTED_MISSING: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub n_rows: usize,
    pub track_ids: Vec<String>,
}

pub fn save_embeddings(path: &Path, matrix: &EmbeddingMatrix, track_ids: &[String]) -> Result<()> {
    if track_ids.len() != matrix.len() {
        return Err(Error::InvalidArgument(format!(
            "{} track ids for {} embedding rows",
            track_ids.len(),
            matrix.len()
        )));
    }
    let header = EmbeddingHeader {
        kind: matrix.kind(),
        dim: matrix.dim(),
        n_rows: matrix.len(),
        track_ids: track_ids.to_vec(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for v in matrix.matrix().data() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a file without aligning it to any catalog.
pub fn read_embedding_file(path: &Path) -> Result<(EmbeddingHeader, Tensor)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: EmbeddingHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.track_ids.len() != header.n_rows {
        return Err(Error::format(
            path,
            format!(
                "header lists {} ids for {} rows",
                header.track_ids.len(),
                header.n_rows
            ),
        ));
    }
    let n = header.n_rows * header.dim;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != n * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", n * 4, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let values = Tensor::from_vec(header.n_rows, header.dim, data)?;
    if !values.is_finite() {
        return Err(Error::format(path, "non-finite embedding value"));
    }
    Ok((header, values))
}

/// Loads a file and reorders its rows to catalog indices.
pub fn load_embeddings(
    path: &Path,
    kind: EmbeddingKind,
    expected_dim: usize,
    catalog: &TrackCatalog,
) -> Result<EmbeddingMatrix> {
    let (header, values) = read_embedding_file(path)?;
    if header.kind != kind {
        return Err(Error::format(
            path,
            format!("expected {kind} embeddings, file holds {}", header.kind),
        ));
    }
    if header.dim != expected_dim {
        return Err(Error::Dimension {
            expected: expected_dim,
            found: header.dim,
        });
    }
    let mut row_of = std::collections::HashMap::with_capacity(header.n_rows);
    for (i, id) in header.track_ids.iter().enumerate() {
        row_of.insert(id.as_str(), i);
    }
    let missing: Vec<String> = catalog
        .ids()
        .iter()
        .filter(|id| !row_of.contains_key(id.as_str()))
        .take(MAX_REPORTED_MISSING)
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing {
            what: "embedding rows for tracks",
            ids: missing,
        });
    }
    let order: Vec<usize> = catalog.ids().iter().map(|id| row_of[id.as_str()]).collect();
    Ok(EmbeddingMatrix::new(kind, values.select_rows(&order)))
}
