//! ACT-R declarative-memory activation of tracks.
//!
//! Three components are combined per (user, session, track):
//!
//! * base level: power-law decayed sum over past listens, softmax-normalised
//!   over the tracks of the session;
//! * spreading: correlation mass flowing from the previous session's tracks;
//! * partial matching: collaborative-embedding similarity to the previous
//!   session's tracks.
//!
//! Listen times are the start times of the sessions that contained the
//! track, and a session's components only read sessions strictly before it.

mod correlation;
mod table;

use std::collections::HashMap;

use crate::corpus::{Session, TrackIndex};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{dot, softmax};

pub use correlation::{build_correlation, CorrelationMatrix};
pub use table::{build_activation_table, write_activation_table, ActivationRow, ActivationTable};

/// Default decay exponent of the base-level component.
pub const DEFAULT_DECAY: f64 = 0.5;

/// Listen timestamps per track for one user, each list strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ListenHistory {
    listens: HashMap<TrackIndex, Vec<i64>>,
}

impl ListenHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sessions(sessions: &[Session]) -> Self {
        let mut h = ListenHistory::new();
        for s in sessions {
            h.record_session(s);
        }
        h
    }

    /// Records one listen per track of `session` at its start time.
    pub fn record_session(&mut self, session: &Session) {
        for &track in &session.tracks {
            self.record(track, session.start_time);
        }
    }

    pub fn record(&mut self, track: TrackIndex, time: i64) {
        let times = self.listens.entry(track).or_default();
        match times.last() {
            Some(&last) if last >= time => {
                let pos = times.partition_point(|&t| t < time);
                if times.get(pos) != Some(&time) {
                    times.insert(pos, time);
                }
            }
            _ => times.push(time),
        }
    }

    pub fn listens(&self, track: TrackIndex) -> &[i64] {
        self.listens.get(&track).map_or(&[], Vec::as_slice)
    }

    pub fn has_heard(&self, track: TrackIndex) -> bool {
        self.listens.contains_key(&track)
    }

    /// Heard tracks in ascending index order.
    pub fn heard_tracks(&self) -> Vec<TrackIndex> {
        let mut t: Vec<TrackIndex> = self.listens.keys().copied().collect();
        t.sort_unstable();
        t
    }
}

/// Unnormalised base level `Σ_k (t − t_k)^(−α)`; zero for unheard tracks.
pub fn base_level_raw(history: &ListenHistory, track: TrackIndex, at: i64, decay: f64) -> Result<f64> {
    if decay.is_nan() || decay <= 0.0 {
        return Err(Error::InvalidArgument(format!("decay must be positive, got {decay}")));
    }
    let mut total = 0.0;
    for &t in history.listens(track) {
        if t >= at {
            return Err(Error::FutureLeak {
                listen: t,
                session_start: at,
            });
        }
        total += ((at - t) as f64).powf(-decay);
    }
    Ok(total)
}

/// Base level of each of `tracks`, softmax-normalised over `tracks`.
pub fn base_level(
    history: &ListenHistory,
    tracks: &[TrackIndex],
    at: i64,
    decay: f64,
) -> Result<Vec<f64>> {
    let raw = tracks
        .iter()
        .map(|&v| base_level_raw(history, v, at, decay))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&raw))
}

/// `Σ_{v' ∈ previous} C[v', v]`, or 0 without a previous session.
pub fn spreading(correlation: &CorrelationMatrix, previous: Option<&Session>, track: TrackIndex) -> f64 {
    previous.map_or(0.0, |prev| {
        prev.tracks
            .iter()
            .map(|&source| correlation.get(source, track))
            .sum()
    })
}

/// `Σ_{v' ∈ previous} m_v · m_{v'}`, or 0 without a previous session.
pub fn partial_matching(embeddings: &EmbeddingMatrix, previous: Option<&Session>, track: TrackIndex) -> f64 {
    previous.map_or(0.0, |prev| {
        let mv = embeddings.row(track);
        prev.tracks.iter().map(|&o| dot(mv, embeddings.row(o))).sum()
    })
}
