//! Track embedding matrices: collaborative (`svd`) and audio.

mod file;
mod svd;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub use file::{load_embeddings, read_embedding_file, save_embeddings, EmbeddingHeader};
pub use svd::{
    build_svd_embeddings, cooccurrence_ppmi, randomized_svd, TruncatedSvd,
    OVERSAMPLING, POWER_ITERATIONS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Svd,
    Audio,
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingKind::Svd => f.write_str("svd"),
            EmbeddingKind::Audio => f.write_str("audio"),
        }
    }
}

/// One row per catalog track, aligned with catalog indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    kind: EmbeddingKind,
    values: Tensor,
}

impl EmbeddingMatrix {
    /// Audio rows are unit-normalised on construction (zero rows stay zero).
    pub fn new(kind: EmbeddingKind, mut values: Tensor) -> Self {
        if kind == EmbeddingKind::Audio {
            normalize_rows(&mut values);
        }
        EmbeddingMatrix { kind, values }
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn row(&self, track: usize) -> &[f64] {
        self.values.row_slice(track)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.values
    }
}

pub(crate) fn normalize_rows(values: &mut Tensor) {
    for r in 0..values.rows() {
        let row = values.row_slice_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        crate::numerics::dot(a, b) / (na * nb)
    }
}
