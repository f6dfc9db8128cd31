use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{base_level, partial_matching, spreading, CorrelationMatrix, ListenHistory};
use crate::corpus::{SessionSequence, TrackCatalog, TrackIndex, UserIndex};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRow {
    pub track: TrackIndex,
    pub base_level: f64,
    pub spreading: f64,
    pub partial_matching: f64,
}

/// Activation components for every track of every session, indexed by
/// `[user][session]` in session track order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTable {
    rows: Vec<Vec<Vec<ActivationRow>>>,
}

impl ActivationTable {
    pub fn session(&self, user: UserIndex, session: usize) -> &[ActivationRow] {
        &self.rows[user][session]
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_sessions(&self, user: UserIndex) -> usize {
        self.rows[user].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserIndex, usize, &ActivationRow)> {
        self.rows.iter().enumerate().flat_map(|(u, sessions)| {
            sessions
                .iter()
                .enumerate()
                .flat_map(move |(l, rows)| rows.iter().map(move |r| (u, l, r)))
        })
    }
}

fn user_rows(
    seq: &SessionSequence,
    embeddings: &EmbeddingMatrix,
    correlation: &CorrelationMatrix,
    decay: f64,
) -> Result<Vec<Vec<ActivationRow>>> {
    let mut history = ListenHistory::new();
    let mut out = Vec::with_capacity(seq.sessions.len());
    for (l, session) in seq.sessions.iter().enumerate() {
        let previous = l.checked_sub(1).map(|p| &seq.sessions[p]);
        let bl = base_level(&history, &session.tracks, session.start_time, decay)?;
        let rows = session
            .tracks
            .iter()
            .zip(bl)
            .map(|(&v, b)| ActivationRow {
                track: v,
                base_level: b,
                spreading: spreading(correlation, previous, v),
                partial_matching: partial_matching(embeddings, previous, v),
            })
            .collect();
        out.push(rows);
        history.record_session(session);
    }
    Ok(out)
}

/// Components for every `(user, session, track)`. Session `l` only sees
/// sessions `0..l` of the same user. Users are processed in parallel.
pub fn build_activation_table(
    sequences: &[SessionSequence],
    embeddings: &EmbeddingMatrix,
    correlation: &CorrelationMatrix,
    decay: f64,
) -> Result<ActivationTable> {
    for (i, seq) in sequences.iter().enumerate() {
        if seq.user_index != i {
            return Err(Error::InvalidArgument(format!(
                "sequence {i} carries user index {}",
                seq.user_index
            )));
        }
    }
    let rows = sequences
        .par_iter()
        .map(|seq| user_rows(seq, embeddings, correlation, decay))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationTable { rows })
}

/// One JSON record per line: `{user, session, track, bl, spr, p}`.
pub fn write_activation_table(
    path: &Path,
    table: &ActivationTable,
    sequences: &[SessionSequence],
    catalog: &TrackCatalog,
) -> Result<()> {
    #[derive(Serialize)]
    struct Record<'a> {
        user: &'a str,
        session: usize,
        track: &'a str,
        bl: f64,
        spr: f64,
        p: f64,
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, l, row) in table.iter() {
        let rec = Record {
            user: &sequences[u].user_id,
            session: l,
            track: catalog.id(row.track),
            bl: row.base_level,
            spr: row.spreading,
            p: row.partial_matching,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
