//! Full-catalog relevance scores and the baseline scorers.
//!
//! REACTA scores every track as `BL + SPR + P`. Heard tracks take BL from
//! their listen history (softmax over the heard set) and SPR from the last
//! observed session; unheard tracks take `(BL̂, SPR̂)` from the predictor
//! applied to their encoded audio. `P = m_u · m_v` for every track.

mod bpr;
mod topk;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::actr::{base_level, partial_matching, ActivationRow, ActivationTable, CorrelationMatrix, ListenHistory};
use crate::corpus::{Instance, Session, SessionSequence, TrackIndex, UserIndex};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::dot;
use crate::training::SamplerKind;

pub use bpr::{pairwise_auc, train_bpr, BprConfig, BprModel};
pub use topk::{dense_candidates, top_k, ScoredList, ScoredTrack};

/// The evaluated model roster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "actr-repeat")]
    ActrRepeat,
    #[serde(rename = "actr-bpr")]
    ActrBpr,
    #[serde(rename = "pisa-u")]
    PisaU,
    #[serde(rename = "pisa-p")]
    PisaP,
    #[serde(rename = "reacta-u")]
    ReactaU,
    #[serde(rename = "reacta-p")]
    ReactaP,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::ActrRepeat,
        ModelKind::ActrBpr,
        ModelKind::PisaU,
        ModelKind::PisaP,
        ModelKind::ReactaU,
        ModelKind::ReactaP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ActrRepeat => "actr-repeat",
            ModelKind::ActrBpr => "actr-bpr",
            ModelKind::PisaU => "pisa-u",
            ModelKind::PisaP => "pisa-p",
            ModelKind::ReactaU => "reacta-u",
            ModelKind::ReactaP => "reacta-p",
        }
    }

    /// Family and negative sampler of the neural models.
    pub fn neural(self) -> Option<(crate::model::ModelFamily, SamplerKind)> {
        use crate::model::ModelFamily::{Pisa, Reacta};
        match self {
            ModelKind::PisaU => Some((Pisa, SamplerKind::Uniform)),
            ModelKind::PisaP => Some((Pisa, SamplerKind::Popularity)),
            ModelKind::ReactaU => Some((Reacta, SamplerKind::Uniform)),
            ModelKind::ReactaP => Some((Reacta, SamplerKind::Popularity)),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown model {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// What a scorer may see about one user: the observed sessions (oldest
/// first), their activation rows, and the time of the session to predict.
#[derive(Clone, Debug)]
pub struct UserContext<'a> {
    pub user: UserIndex,
    pub sessions: &'a [Session],
    pub rows: Vec<&'a [ActivationRow]>,
    pub at: i64,
}

impl<'a> UserContext<'a> {
    pub fn new(user: UserIndex, sessions: &'a [Session], rows: Vec<&'a [ActivationRow]>, at: i64) -> Result<Self> {
        let Some(last) = sessions.last() else {
            return Err(Error::InvalidArgument(format!("user {user} has no observed session")));
        };
        if rows.len() != sessions.len() {
            return Err(Error::Shape {
                op: "user context",
                detail: format!("{} sessions, {} activation rows", sessions.len(), rows.len()),
            });
        }
        if at <= last.start_time {
            return Err(Error::FutureLeak {
                listen: last.start_time,
                session_start: at,
            });
        }
        Ok(UserContext { user, sessions, rows, at })
    }

    /// The window observed before a held-out target session.
    pub fn for_instance(
        sequence: &'a SessionSequence,
        table: &'a ActivationTable,
        instance: Instance,
        window: usize,
    ) -> Result<Self> {
        let range = instance.observed(window);
        if instance.target >= sequence.sessions.len() || range.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "instance {instance:?} does not fit user {} with {} sessions",
                sequence.user_id,
                sequence.sessions.len()
            )));
        }
        let rows = range.clone().map(|l| table.session(instance.user, l)).collect();
        let at = sequence.sessions[instance.target].start_time;
        Self::new(instance.user, &sequence.sessions[range], rows, at)
    }

    /// The last `window` sessions, predicting a session starting at `at`.
    pub fn latest(sequence: &'a SessionSequence, table: &'a ActivationTable, window: usize, at: i64) -> Result<Self> {
        let n = sequence.sessions.len();
        let range = n.saturating_sub(window)..n;
        let rows = range.clone().map(|l| table.session(sequence.user_index, l)).collect();
        Self::new(sequence.user_index, &sequence.sessions[range], rows, at)
    }

    pub fn history(&self) -> ListenHistory {
        ListenHistory::from_sessions(self.sessions)
    }

    pub fn last_session(&self) -> &'a Session {
        self.sessions.last().expect("non-empty by construction")
    }

    /// Tracks of the observed sessions, ascending.
    pub fn heard(&self) -> Vec<TrackIndex> {
        self.history().heard_tracks()
    }
}

/// BL (softmax over the heard set) and SPR (from the last observed
/// session) of every heard track.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryActivation {
    pub tracks: Vec<TrackIndex>,
    pub base_level: Vec<f64>,
    pub spreading: Vec<f64>,
}

pub fn memory_activation(ctx: &UserContext, correlation: &CorrelationMatrix, decay: f64) -> Result<MemoryActivation> {
    let history = ctx.history();
    let tracks = history.heard_tracks();
    let base_level = base_level(&history, &tracks, ctx.at, decay)?;
    let spread = correlation.spread_all(&ctx.last_session().tracks);
    let spreading = tracks.iter().map(|&v| spread[v]).collect();
    Ok(MemoryActivation {
        tracks,
        base_level,
        spreading,
    })
}

/// Per-track score components over the whole catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct ReactaScores {
    pub base_level: Vec<f64>,
    pub spreading: Vec<f64>,
    pub partial_matching: Vec<f64>,
    pub heard: Vec<bool>,
    /// Number of tracks routed through the predictor.
    pub predicted: usize,
}

impl ReactaScores {
    pub fn totals(&self) -> Vec<f64> {
        (0..self.heard.len())
            .map(|v| self.base_level[v] + self.spreading[v] + self.partial_matching[v])
            .collect()
    }
}

/// Inputs shared by every scorer.
#[derive(Clone, Copy, Debug)]
pub struct Resources<'a> {
    pub collaborative: &'a EmbeddingMatrix,
    pub audio: Option<&'a EmbeddingMatrix>,
    pub correlation: &'a CorrelationMatrix,
    pub decay: f64,
}

pub fn score_catalog_reacta(ctx: &UserContext, model: &Model, res: &Resources) -> Result<ReactaScores> {
    let n = res.collaborative.len();
    let (m_u, _) = model.user_vector(res.collaborative, &ctx.rows, ctx.user)?;
    let mut out = ReactaScores {
        base_level: vec![0.0; n],
        spreading: vec![0.0; n],
        partial_matching: (0..n).map(|v| dot(&m_u, res.collaborative.row(v))).collect(),
        heard: vec![false; n],
        predicted: 0,
    };
    let memory = memory_activation(ctx, res.correlation, res.decay)?;
    for (i, &v) in memory.tracks.iter().enumerate() {
        out.heard[v] = true;
        out.base_level[v] = memory.base_level[i];
        out.spreading[v] = memory.spreading[i];
    }
    let unheard: Vec<TrackIndex> = (0..n).filter(|&v| !out.heard[v]).collect();
    if !unheard.is_empty() {
        let audio = res
            .audio
            .ok_or_else(|| Error::Config("scoring unheard tracks needs audio embeddings".into()))?;
        let missing: Vec<String> = unheard
            .iter()
            .filter(|&&v| v >= audio.len())
            .take(20)
            .map(|v| v.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing {
                what: "audio rows for unheard tracks".into(),
                ids: missing,
            });
        }
        let encoded = model.encode(&audio.matrix().select_rows(&unheard))?;
        let predicted = model.predict(&encoded, &m_u)?;
        for (i, &v) in unheard.iter().enumerate() {
            out.base_level[v] = predicted.get(i, 0);
            out.spreading[v] = predicted.get(i, 1);
        }
        out.predicted = unheard.len();
    }
    Ok(out)
}

/// `m_u · m_v` for every track.
pub fn score_catalog_pisa(ctx: &UserContext, model: &Model, res: &Resources) -> Result<Vec<f64>> {
    let (m_u, _) = model.user_vector(res.collaborative, &ctx.rows, ctx.user)?;
    Ok((0..res.collaborative.len())
        .map(|v| dot(&m_u, res.collaborative.row(v)))
        .collect())
}

/// `BL + SPR + P` over heard tracks only, with P against the last
/// observed session.
pub fn score_actr_repeat(ctx: &UserContext, res: &Resources) -> Result<Vec<(TrackIndex, f64)>> {
    let memory = memory_activation(ctx, res.correlation, res.decay)?;
    if memory.tracks.is_empty() {
        return Err(Error::InvalidArgument(format!("user {} has an empty history", ctx.user)));
    }
    let last = Some(ctx.last_session());
    Ok(memory
        .tracks
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = partial_matching(res.collaborative, last, v);
            (v, memory.base_level[i] + memory.spreading[i] + p)
        })
        .collect())
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// BPR dot product for every track; heard tracks additionally get their
/// `BL + SPR` activation, min-max normalised over the heard set and
/// rescaled to the catalog's BPR score range. This ranks exactly like the
/// sum of the two min-max normalised terms while leaving unheard tracks at
/// their raw BPR score.
pub fn score_actr_bpr(ctx: &UserContext, bpr: &BprModel, res: &Resources) -> Result<Vec<f64>> {
    if ctx.user >= bpr.n_users() || bpr.n_items() != res.collaborative.len() {
        return Err(Error::Config(format!(
            "BPR factors cover {} users × {} items; user {} / catalog {} requested",
            bpr.n_users(),
            bpr.n_items(),
            ctx.user,
            res.collaborative.len()
        )));
    }
    let mut scores = bpr.scores(ctx.user);
    let (lo, hi) = min_max(scores.iter().copied());
    let range = if hi > lo { hi - lo } else { 1.0 };
    let memory = memory_activation(ctx, res.correlation, res.decay)?;
    let act: Vec<f64> = (0..memory.tracks.len())
        .map(|i| memory.base_level[i] + memory.spreading[i])
        .collect();
    let (alo, ahi) = min_max(act.iter().copied());
    for (i, &v) in memory.tracks.iter().enumerate() {
        let norm = if ahi > alo { (act[i] - alo) / (ahi - alo) } else { 1.0 };
        scores[v] += range * norm;
    }
    Ok(scores)
}

/// A trained or rule-based recommender over a fixed catalog.
pub enum Scorer<'a> {
    Reacta(&'a Model),
    Pisa(&'a Model),
    ActrRepeat,
    ActrBpr(&'a BprModel),
}

impl<'a> Scorer<'a> {
    /// Candidate scores; every track for all but ACT-R-Repeat.
    pub fn candidates(&self, ctx: &UserContext, res: &Resources) -> Result<Vec<(TrackIndex, f64)>> {
        let scores = match self {
            Scorer::Reacta(m) => score_catalog_reacta(ctx, m, res)?.totals(),
            Scorer::Pisa(m) => score_catalog_pisa(ctx, m, res)?,
            Scorer::ActrRepeat => return score_actr_repeat(ctx, res),
            Scorer::ActrBpr(b) => score_actr_bpr(ctx, b, res)?,
        };
        if let Some(v) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                node: v,
                op: "track score",
            });
        }
        Ok(dense_candidates(&scores))
    }

    pub fn recommend(&self, ctx: &UserContext, res: &Resources, k: usize) -> Result<ScoredList> {
        let heard: HashSet<TrackIndex> = ctx.sessions.iter().flat_map(|s| s.tracks.iter().copied()).collect();
        let candidates = self.candidates(ctx, res)?;
        Ok(top_k(&candidates, k, |t| heard.contains(&t)))
    }
}
