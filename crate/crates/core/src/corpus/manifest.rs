use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusSplit, Instance, TrackCatalog};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestionParams {
    pub events_path: PathBuf,
    pub session_gap: i64,
    pub k: usize,
    /// How sessions were delimited.
    pub sessionization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub window: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Catalog, users and split of a built corpus, plus the parameters that
/// produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Track id at each catalog index.
    pub tracks: Vec<String>,
    /// Training-portion popularity, aligned with `tracks`.
    pub popularity: Vec<u64>,
    /// User id at each user index.
    pub users: Vec<String>,
    pub split: SplitParams,
    pub train_horizon: Vec<usize>,
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub ingestion: IngestionParams,
    #[serde(default)]
    pub generation: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(
        split: &CorpusSplit,
        users: Vec<String>,
        split_params: SplitParams,
        ingestion: IngestionParams,
        generation: Option<serde_json::Value>,
    ) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            tracks: split.catalog.ids().to_vec(),
            popularity: split.catalog.popularity().to_vec(),
            users,
            split: split_params,
            train_horizon: split.train_horizon.clone(),
            train: split.train.clone(),
            validation: split.validation.clone(),
            test: split.test.clone(),
            ingestion,
            generation,
        }
    }

    pub fn catalog(&self) -> Result<TrackCatalog> {
        TrackCatalog::from_ordered(self.tracks.clone(), self.popularity.clone())
    }

    pub fn corpus_split(&self) -> Result<CorpusSplit> {
        Ok(CorpusSplit {
            window: self.split.window,
            train: self.train.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
            train_horizon: self.train_horizon.clone(),
            catalog: self.catalog()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", manifest.format_version),
            ));
        }
        Ok(manifest)
    }
}
