//! Listening events, sessions, splits and synthetic corpora.

mod ingest;
mod manifest;
mod split;
mod synthetic;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use ingest::{ingest_events, ingest_events_with_catalog, parse_events, sessionize, Corpus, DEFAULT_SESSION_GAP};
pub use manifest::{IngestionParams, Manifest, SplitParams, MANIFEST_VERSION};
pub use split::{make_split, CorpusSplit, Instance};
pub use synthetic::{generate_synthetic, write_events, SyntheticConfig, SyntheticCorpus};

pub type TrackIndex = usize;
pub type UserIndex = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListeningEvent {
    pub user_id: String,
    pub track_id: String,
    pub timestamp: i64,
}

/// Up to `K` distinct tracks in first-occurrence order. Model code treats
/// the track list as a set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub start_time: i64,
    pub tracks: Vec<TrackIndex>,
}

impl Session {
    pub fn new(start_time: i64, tracks: Vec<TrackIndex>) -> Self {
        Session { start_time, tracks }
    }

    pub fn contains(&self, track: TrackIndex) -> bool {
        self.tracks.contains(&track)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSequence {
    pub user_index: UserIndex,
    pub user_id: String,
    pub sessions: Vec<Session>,
}

impl SessionSequence {
    /// Distinct tracks over `sessions[range]`.
    pub fn heard_in(&self, range: std::ops::Range<usize>) -> BTreeSet<TrackIndex> {
        self.sessions[range]
            .iter()
            .flat_map(|s| s.tracks.iter().copied())
            .collect()
    }
}

/// Track ids, their dense indices and training popularity counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrackCatalog {
    ids: Vec<String>,
    index: HashMap<String, TrackIndex>,
    popularity: Vec<u64>,
}

impl TrackCatalog {
    /// Indices follow the sorted order of the ids.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        let ids: Vec<String> = sorted.into_iter().collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let popularity = vec![0; ids.len()];
        TrackCatalog {
            ids,
            index,
            popularity,
        }
    }

    /// Keeps the given order, which must be free of duplicates.
    pub fn from_ordered(ids: Vec<String>, popularity: Vec<u64>) -> crate::Result<Self> {
        if ids.len() != popularity.len() {
            return Err(crate::Error::InvalidArgument(format!(
                "{} track ids but {} popularity counts",
                ids.len(),
                popularity.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(crate::Error::InvalidArgument(format!("duplicate track id {id}")));
            }
        }
        Ok(TrackCatalog {
            ids,
            index,
            popularity,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, index: TrackIndex) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<TrackIndex> {
        self.index.get(id).copied()
    }

    pub fn popularity(&self) -> &[u64] {
        &self.popularity
    }

    pub fn set_popularity(&mut self, counts: Vec<u64>) {
        assert_eq!(counts.len(), self.ids.len());
        self.popularity = counts;
    }
}

/// Share of tracks in sessions after the first that were heard in an
/// earlier session of the same user.
pub fn repetition_ratio(sequences: &[SessionSequence]) -> f64 {
    let mut repeated = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let mut heard = BTreeSet::new();
        for (l, session) in seq.sessions.iter().enumerate() {
            if l > 0 {
                repeated += session.tracks.iter().filter(|t| heard.contains(*t)).count();
                total += session.len();
            }
            heard.extend(session.tracks.iter().copied());
        }
    }
    if total == 0 {
        0.0
    } else {
        repeated as f64 / total as f64
    }
}
