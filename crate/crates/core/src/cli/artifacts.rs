//! The built artifacts of one corpus and their on-disk layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actr::{
    build_activation_table, build_correlation, write_activation_table, ActivationTable, CorrelationMatrix,
};
use crate::corpus::{make_split, CorpusSplit, Manifest, Session, SessionSequence, TrackCatalog};
use crate::embeddings::{build_svd_embeddings, load_embeddings, save_embeddings, EmbeddingKind, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::EvalData;
use crate::model::{ModelConfig, ModelFamily};
use crate::scoring::Resources;
use crate::training::TrainingData;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const SVD_FILE: &str = "svd.emb";
pub const AUDIO_FILE: &str = "audio.emb";
pub const CORRELATION_FILE: &str = "correlation.tsv";
pub const ACTIVATIONS_FILE: &str = "activations.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub window: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub d: usize,
    pub decay: f64,
    pub seed: u64,
}

/// Everything derived from a sessionised corpus that models consume.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub sequences: Vec<SessionSequence>,
    /// Split plus catalog with training-only popularity.
    pub split: CorpusSplit,
    pub collaborative: EmbeddingMatrix,
    pub audio: EmbeddingMatrix,
    pub correlation: CorrelationMatrix,
    pub table: ActivationTable,
    pub decay: f64,
}

/// Rounds through `f32`, the precision of embedding files, so in-memory
/// and reloaded artifacts agree exactly.
fn file_precision(m: &EmbeddingMatrix) -> EmbeddingMatrix {
    EmbeddingMatrix::new(m.kind(), m.matrix().map(|x| x as f32 as f64))
}

fn training_portions<'a>(sequences: &'a [SessionSequence], split: &CorpusSplit) -> Vec<&'a [Session]> {
    sequences
        .iter()
        .zip(&split.train_horizon)
        .map(|(s, &h)| &s.sessions[..h])
        .collect()
}

impl Artifacts {
    /// Splits the corpus, then derives collaborative embeddings and the
    /// correlation matrix from training portions only.
    pub fn build(
        sequences: Vec<SessionSequence>,
        catalog: &TrackCatalog,
        audio: &EmbeddingMatrix,
        params: &BuildParams,
    ) -> Result<Self> {
        if audio.len() != catalog.len() {
            return Err(Error::Dimension {
                expected: catalog.len(),
                found: audio.len(),
            });
        }
        let split = make_split(&sequences, catalog, params.window, params.n_val, params.n_test, params.seed)?;
        let portions = training_portions(&sequences, &split);
        let flat: Vec<&Session> = portions.iter().flat_map(|p| p.iter()).collect();
        let collaborative = file_precision(&build_svd_embeddings(&flat, catalog.len(), params.d, params.seed)?);
        Self::assemble(sequences, split, collaborative, file_precision(audio), params.decay)
    }

    fn assemble(
        sequences: Vec<SessionSequence>,
        split: CorpusSplit,
        collaborative: EmbeddingMatrix,
        audio: EmbeddingMatrix,
        decay: f64,
    ) -> Result<Self> {
        let n = split.catalog.len();
        let correlation = build_correlation(&training_portions(&sequences, &split), n);
        let table = build_activation_table(&sequences, &collaborative, &correlation, decay)?;
        Ok(Artifacts {
            sequences,
            split,
            collaborative,
            audio,
            correlation,
            table,
            decay,
        })
    }

    pub fn catalog(&self) -> &TrackCatalog {
        &self.split.catalog
    }

    pub fn window(&self) -> usize {
        self.split.window
    }

    pub fn resources(&self) -> Resources<'_> {
        Resources {
            collaborative: &self.collaborative,
            audio: Some(&self.audio),
            correlation: &self.correlation,
            decay: self.decay,
        }
    }

    pub fn training_data(&self) -> TrainingData<'_> {
        TrainingData {
            sequences: &self.sequences,
            table: &self.table,
            catalog: &self.split.catalog,
            resources: self.resources(),
        }
    }

    pub fn eval_data(&self, k: usize) -> EvalData<'_> {
        EvalData {
            sequences: &self.sequences,
            table: &self.table,
            resources: self.resources(),
            popularity: self.split.catalog.popularity(),
            window: self.split.window,
            k,
        }
    }

    pub fn model_config(&self, family: ModelFamily, blocks: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            family,
            d: self.collaborative.dim(),
            d_audio: self.audio.dim(),
            window: self.split.window,
            blocks,
            heads,
            n_users: self.sequences.len(),
        }
    }

    /// Per-user training portion, the interactions of the BPR baseline.
    pub fn training_interactions(&self) -> Vec<Vec<usize>> {
        training_portions(&self.sequences, &self.split)
            .iter()
            .map(|p| {
                let mut v: Vec<usize> = p.iter().flat_map(|s| s.tracks.iter().copied()).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect()
    }

    /// Writes sessions, embeddings and the inspection exports into `dir`.
    /// The manifest is written separately since it carries provenance.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let ids = self.catalog().ids();
        write_sessions(&dir.join(SESSIONS_FILE), &self.sequences, self.catalog())?;
        save_embeddings(&dir.join(SVD_FILE), &self.collaborative, ids)?;
        save_embeddings(&dir.join(AUDIO_FILE), &self.audio, ids)?;
        write_correlation(&dir.join(CORRELATION_FILE), &self.correlation, self.catalog())?;
        write_activation_table(&dir.join(ACTIVATIONS_FILE), &self.table, &self.sequences, self.catalog())
    }

    /// Reloads a built directory; the correlation matrix and activation
    /// table are recomputed from the stored sessions.
    pub fn load(dir: &Path, decay: f64) -> Result<(Self, Manifest)> {
        let manifest_path = require(dir, MANIFEST_FILE)?;
        let manifest = Manifest::load(&manifest_path)?;
        let split = manifest.corpus_split()?;
        let sequences = read_sessions(&require(dir, SESSIONS_FILE)?, &split.catalog)?;
        if sequences.len() != manifest.users.len() {
            return Err(Error::format(
                dir.join(SESSIONS_FILE),
                format!("{} users, manifest lists {}", sequences.len(), manifest.users.len()),
            ));
        }
        let svd_path = require(dir, SVD_FILE)?;
        let svd_dim = crate::embeddings::read_embedding_file(&svd_path)?.0.dim;
        let collaborative = load_embeddings(&svd_path, EmbeddingKind::Svd, svd_dim, &split.catalog)?;
        let audio_path = require(dir, AUDIO_FILE)?;
        let audio_dim = crate::embeddings::read_embedding_file(&audio_path)?.0.dim;
        let audio = load_embeddings(&audio_path, EmbeddingKind::Audio, audio_dim, &split.catalog)?;
        Ok((Self::assemble(sequences, split, collaborative, audio, decay)?, manifest))
    }
}

/// `dir/name`, or an error naming the expected path.
pub fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Missing {
            what: "artifact",
            ids: vec![path.display().to_string()],
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    start: i64,
    tracks: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    user: String,
    sessions: Vec<SessionRecord>,
}

pub fn write_sessions(path: &Path, sequences: &[SessionSequence], catalog: &TrackCatalog) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in sequences {
        let rec = UserRecord {
            user: seq.user_id.clone(),
            sessions: seq
                .sessions
                .iter()
                .map(|s| SessionRecord {
                    start: s.start_time,
                    tracks: s.tracks.iter().map(|&t| catalog.id(t).to_string()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sessions(path: &Path, catalog: &TrackCatalog) -> Result<Vec<SessionSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: UserRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let sessions = rec
            .sessions
            .into_iter()
            .map(|s| {
                let tracks = s
                    .tracks
                    .iter()
                    .map(|id| catalog.index_of(id).ok_or_else(|| parse(format!("unknown track {id}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Session::new(s.start, tracks))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SessionSequence {
            user_index: out.len(),
            user_id: rec.user,
            sessions,
        });
    }
    Ok(out)
}

/// Nonzero entries as `row_id<TAB>col_id<TAB>F<TAB>C`.
pub fn write_correlation(path: &Path, c: &CorrelationMatrix, catalog: &TrackCatalog) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# row\tcol\tcount\tcorrelation").map_err(io)?;
    for (i, j, f) in c.counts().triplets() {
        writeln!(w, "{}\t{}\t{}\t{}", catalog.id(i), catalog.id(j), f, c.get(i, j)).map_err(io)?;
    }
    w.flush().map_err(io)
}
