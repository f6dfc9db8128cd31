//! Seeded synthetic listening corpora for desk-scale experiments.
//!
//! Every track belongs to a genre and has a Zipf popularity weight. Every
//! user has a sparse genre mixture. Each slot of a session is, with
//! probability `p_repeat`, a track drawn from the user's own history
//! (favouring recently and frequently heard tracks), and otherwise a track
//! the user has not heard yet, drawn by genre and popularity. Audio
//! embeddings are a genre centroid plus Gaussian noise, unit-normalised.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{sessionize, Corpus, ListeningEvent};
use crate::embeddings::{save_embeddings, EmbeddingKind, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const EPOCH_START: i64 = 1_672_531_200;
const SECONDS_BETWEEN_TRACKS: i64 = 200;
const AUDIO_NOISE: f64 = 0.5;
const GENRE_CONCENTRATION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_tracks: usize,
    pub sessions_per_user: usize,
    pub k: usize,
    pub p_repeat: f64,
    pub zipf_s: f64,
    pub n_genres: usize,
    pub d_audio: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 20,
            n_tracks: 200,
            sessions_per_user: 12,
            k: 10,
            p_repeat: 0.84,
            zipf_s: 1.0,
            n_genres: 5,
            d_audio: 16,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_tracks", self.n_tracks),
            ("sessions_per_user", self.sessions_per_user),
            ("k", self.k),
            ("n_genres", self.n_genres),
            ("d_audio", self.d_audio),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be ≥ 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_repeat) {
            return Err(Error::InvalidArgument(format!(
                "p_repeat must lie in [0, 1], got {}",
                self.p_repeat
            )));
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "zipf_s must be a finite non-negative number, got {}",
                self.zipf_s
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub events: Vec<ListeningEvent>,
    pub track_ids: Vec<String>,
    pub track_genres: Vec<usize>,
    pub audio: EmbeddingMatrix,
}

impl SyntheticCorpus {
    /// Sessionises the events over a catalog of every generated track, so
    /// catalog indices coincide with the rows of `audio`.
    pub fn sessionize(&self, session_gap: i64, k: usize) -> Result<Corpus> {
        let corpus = sessionize(self.events.clone(), session_gap, k, &self.track_ids)?;
        debug_assert_eq!(corpus.catalog.ids(), &self.track_ids[..]);
        Ok(corpus)
    }

    pub fn write(&self, events_path: &Path, audio_path: &Path, config: &SyntheticConfig) -> Result<()> {
        let header = format!(
            "synthetic corpus: {}",
            serde_json::to_string(config).expect("config serialises")
        );
        write_events(events_path, &self.events, Some(&header))?;
        save_embeddings(audio_path, &self.audio, &self.track_ids)
    }
}

pub fn write_events(path: &Path, events: &[ListeningEvent], comment: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if let Some(c) = comment {
        writeln!(w, "# {c}").map_err(io)?;
    }
    for e in events {
        writeln!(w, "{}\t{}\t{}", e.user_id, e.track_id, e.timestamp).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn pick_weighted<R: Rng>(candidates: &[usize], weights: &[f64], rng: &mut R) -> Option<usize> {
    let positive: Vec<(usize, f64)> = candidates
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&c, &w)| (c, w))
        .collect();
    if positive.is_empty() {
        return None;
    }
    let dist = WeightedIndex::new(positive.iter().map(|(_, w)| *w)).ok()?;
    Some(positive[dist.sample(rng)].0)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = (config.n_tracks.max(2) - 1).to_string().len();
    let track_ids: Vec<String> = (0..config.n_tracks)
        .map(|i| format!("t{i:0width$}"))
        .collect();
    let user_width = (config.n_users.max(2) - 1).to_string().len();

    let genres: Vec<usize> = (0..config.n_tracks).map(|i| i % config.n_genres).collect();
    let mut ranks: Vec<usize> = (0..config.n_tracks).collect();
    ranks.shuffle(&mut rng);
    let zipf: Vec<f64> = ranks
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(config.zipf_s))
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, AUDIO_NOISE).expect("valid normal");
    let centroids: Vec<Vec<f64>> = (0..config.n_genres)
        .map(|_| (0..config.d_audio).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut audio = Tensor::zeros(config.n_tracks, config.d_audio);
    for t in 0..config.n_tracks {
        for c in 0..config.d_audio {
            audio.set(t, c, centroids[genres[t]][c] + noise.sample(&mut rng));
        }
    }
    let audio = EmbeddingMatrix::new(EmbeddingKind::Audio, audio);

    let gamma = Gamma::new(GENRE_CONCENTRATION, 1.0).expect("valid gamma");
    let mut events = Vec::new();
    for u in 0..config.n_users {
        let user_id = format!("u{u:0user_width$}");
        let mixture: Vec<f64> = (0..config.n_genres)
            .map(|_| gamma.sample(&mut rng) + 1e-6)
            .collect();
        let genre_dist = WeightedIndex::new(&mixture).expect("positive mixture");
        // sessions each track appeared in
        let mut history: Vec<Vec<usize>> = vec![Vec::new(); config.n_tracks];
        let mut heard: Vec<usize> = Vec::new();
        let mut time = EPOCH_START + rng.random_range(0..86_400);

        for l in 0..config.sessions_per_user {
            let mut session: Vec<usize> = Vec::with_capacity(config.k);
            for _ in 0..config.k {
                let repeat = !heard.is_empty() && rng.random_bool(config.p_repeat);
                let mut chosen = None;
                if repeat {
                    let candidates: Vec<usize> =
                        heard.iter().copied().filter(|t| !session.contains(t)).collect();
                    let weights: Vec<f64> = candidates
                        .iter()
                        .map(|&t| {
                            history[t]
                                .iter()
                                .map(|&past| ((l - past) as f64).powf(-0.5))
                                .sum()
                        })
                        .collect();
                    chosen = pick_weighted(&candidates, &weights, &mut rng);
                }
                if chosen.is_none() {
                    let genre = genre_dist.sample(&mut rng);
                    let fresh = |t: &usize| history[*t].is_empty() && !session.contains(t);
                    let mut candidates: Vec<usize> =
                        (0..config.n_tracks).filter(|t| genres[*t] == genre && fresh(t)).collect();
                    if candidates.is_empty() {
                        candidates = (0..config.n_tracks).filter(|t| fresh(t)).collect();
                    }
                    let weights: Vec<f64> = candidates.iter().map(|&t| zipf[t]).collect();
                    chosen = pick_weighted(&candidates, &weights, &mut rng);
                }
                if chosen.is_none() {
                    // catalog exhausted: fall back to any heard track
                    let candidates: Vec<usize> =
                        heard.iter().copied().filter(|t| !session.contains(t)).collect();
                    let weights = vec![1.0; candidates.len()];
                    chosen = pick_weighted(&candidates, &weights, &mut rng);
                }
                match chosen {
                    Some(t) => session.push(t),
                    None => break,
                }
            }
            for (j, &t) in session.iter().enumerate() {
                events.push(ListeningEvent {
                    user_id: user_id.clone(),
                    track_id: track_ids[t].clone(),
                    timestamp: time + j as i64 * SECONDS_BETWEEN_TRACKS,
                });
                if history[t].is_empty() {
                    heard.push(t);
                }
                history[t].push(l);
            }
            // 2 h to 2 days between session starts
            time += rng.random_range(2..48) * 3600;
        }
    }
    Ok(SyntheticCorpus {
        events,
        track_ids,
        track_genres: genres,
        audio,
    })
}
