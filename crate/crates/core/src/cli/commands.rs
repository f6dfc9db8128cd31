use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::artifacts::{require, Artifacts, MANIFEST_FILE};
use super::config::{Resolved, RESOLVED_CONFIG_FILE};
use crate::corpus::{generate_synthetic, ingest_events_with_catalog, IngestionParams, Manifest, SplitParams};
use crate::embeddings::{load_embeddings, read_embedding_file, EmbeddingKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, rep_ratio_gt, EvalReport, ModelReport, RunMetrics};
use crate::model::Model;
use crate::scoring::{train_bpr, BprModel, ModelKind, Scorer, UserContext};
use crate::training::{train, write_history};

pub const EVENTS_FILE: &str = "events.tsv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const BPR_FILE: &str = "bpr.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn require_file(path: &Path, what: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Missing {
            what,
            ids: vec![path.display().to_string()],
        })
    }
}

pub fn cmd_gen_data(resolved: &Resolved, out_dir: &Path) -> Result<()> {
    resolved.validate_generation()?;
    let config = resolved.config.synthetic();
    let corpus = generate_synthetic(&config)?;
    create_dir(out_dir)?;
    corpus.write(&out_dir.join(EVENTS_FILE), &out_dir.join(super::AUDIO_FILE), &config)?;
    resolved.write_snapshot(out_dir, "gen-data", json!({}))?;
    log::info!("wrote {} events to {}", corpus.events.len(), out_dir.display());
    Ok(())
}

pub fn cmd_build(resolved: &Resolved, events: &Path, audio: &Path, out_dir: &Path) -> Result<()> {
    require_file(events, "events file")?;
    require_file(audio, "audio embedding file")?;
    let c = &resolved.config;
    let (header, _) = read_embedding_file(audio)?;
    // tracks with audio but no listens still join the catalog
    let corpus = ingest_events_with_catalog(events, c.session_gap, c.k, &header.track_ids)?;
    if corpus.dropped_users > 0 {
        log::warn!("dropped {} users with fewer than two sessions", corpus.dropped_users);
    }
    let audio_matrix = load_embeddings(audio, EmbeddingKind::Audio, header.dim, &corpus.catalog)?;
    let params = resolved.config.build_params();
    let users: Vec<String> = corpus.sequences.iter().map(|s| s.user_id.clone()).collect();
    let artifacts = Artifacts::build(corpus.sequences, &corpus.catalog, &audio_matrix, &params)?;
    create_dir(out_dir)?;
    artifacts.save(out_dir)?;
    let manifest = Manifest::new(
        &artifacts.split,
        users,
        SplitParams {
            window: params.window,
            n_val: params.n_val,
            n_test: params.n_test,
            seed: params.seed,
        },
        IngestionParams {
            events_path: events.to_path_buf(),
            session_gap: c.session_gap,
            k: c.k,
            sessionization: format!("inactivity gap > {} s, first {} distinct tracks", c.session_gap, c.k),
        },
        Some(json!({ "build": params, "svd_dim": artifacts.collaborative.dim() })),
    );
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    resolved.write_snapshot(
        out_dir,
        "build",
        json!({ "events": file_hash(events)?, "audio": file_hash(audio)? }),
    )?;
    log::info!(
        "{} users, {} tracks, {} train / {} validation / {} test instances",
        artifacts.sequences.len(),
        artifacts.catalog().len(),
        artifacts.split.train.len(),
        artifacts.split.validation.len(),
        artifacts.split.test.len()
    );
    Ok(())
}

/// `<runs>/<model>/<first 16 hex digits of the config hash>`.
pub fn run_dir(runs: &Path, model: ModelKind, resolved: &Resolved) -> PathBuf {
    runs.join(model.name()).join(&resolved.config.hash()[..16])
}

fn load_data(resolved: &Resolved, data: &Path) -> Result<(Artifacts, String)> {
    let (artifacts, _) = Artifacts::load(data, resolved.config.decay)?;
    let data_hash = file_hash(&data.join(MANIFEST_FILE))?;
    Ok((artifacts, data_hash))
}

pub fn cmd_train(resolved: &Resolved, data: &Path, model: ModelKind, out_dir: &Path) -> Result<PathBuf> {
    let (artifacts, data_hash) = load_data(resolved, data)?;
    let c = &resolved.config;
    let dir = run_dir(out_dir, model, resolved);
    create_dir(&dir)?;
    match model.neural() {
        Some((family, sampler)) => {
            let config = artifacts.model_config(family, c.blocks, c.heads);
            let init = Model::new(config, c.seed)?;
            let outcome = train(
                init,
                &artifacts.training_data(),
                &artifacts.split.train,
                &artifacts.split.validation,
                &resolved.config.training(sampler),
            )?;
            outcome.model.save(
                &dir.join(MODEL_FILE),
                json!({ "best_epoch": outcome.best_epoch, "stopped_early": outcome.stopped_early }),
            )?;
            write_history(&dir.join(HISTORY_FILE), &outcome.history)?;
        }
        None if model == ModelKind::ActrBpr => {
            let bpr = train_bpr(
                &artifacts.training_interactions(),
                artifacts.catalog().len(),
                &resolved.config.bpr(),
            )?;
            bpr.save(&dir.join(BPR_FILE))?;
        }
        None => {
            return Err(Error::InvalidArgument(format!("{model} has no trainable parameters")));
        }
    }
    resolved.write_snapshot(&dir, "train", json!({ "model": model.name(), "data": data_hash }))?;
    Ok(dir)
}

enum Loaded {
    Neural(Model),
    Bpr(BprModel),
    None,
}

impl Loaded {
    fn scorer(&self, kind: ModelKind) -> Scorer<'_> {
        match (self, kind) {
            (Loaded::Neural(m), ModelKind::ReactaU | ModelKind::ReactaP) => Scorer::Reacta(m),
            (Loaded::Neural(m), _) => Scorer::Pisa(m),
            (Loaded::Bpr(b), _) => Scorer::ActrBpr(b),
            (Loaded::None, _) => Scorer::ActrRepeat,
        }
    }
}

/// Loads a run directory and checks it was trained on `data_hash`.
fn load_run(dir: &Path, kind: ModelKind, data_hash: &str, data: &Path) -> Result<Loaded> {
    if kind == ModelKind::ActrRepeat {
        return Ok(Loaded::None);
    }
    let snapshot_path = require(dir, RESOLVED_CONFIG_FILE)?;
    let text = fs::read_to_string(&snapshot_path).map_err(|e| Error::io(&snapshot_path, e))?;
    let snapshot: Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&snapshot_path, e.to_string()))?;
    if snapshot["inputs"]["data"].as_str() != Some(data_hash) {
        return Err(Error::Config(format!(
            "run {} was trained on different data than {} (manifest hash in {} differs)",
            dir.display(),
            data.display(),
            snapshot_path.display()
        )));
    }
    match kind.neural() {
        Some((family, _)) => {
            let (model, _) = Model::load(&require(dir, MODEL_FILE)?)?;
            if model.config().family != family {
                return Err(Error::Config(format!(
                    "checkpoint in {} holds a {} model, expected {}",
                    dir.display(),
                    model.config().family,
                    family
                )));
            }
            Ok(Loaded::Neural(model))
        }
        None => Ok(Loaded::Bpr(BprModel::load(&require(dir, BPR_FILE)?)?)),
    }
}

/// Run directories of one model, sorted by name.
fn list_runs(runs: &Path, kind: ModelKind) -> Result<Vec<PathBuf>> {
    let dir = runs.join(kind.name());
    let entries = fs::read_dir(&dir).map_err(|_| Error::Missing {
        what: "run directory",
        ids: vec![dir.display().to_string()],
    })?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(&dir, e))?.path();
        if path.join(RESOLVED_CONFIG_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Missing {
            what: "trained run",
            ids: vec![dir.join("<hash>").join(RESOLVED_CONFIG_FILE).display().to_string()],
        });
    }
    Ok(out)
}

pub fn cmd_evaluate(
    resolved: &Resolved,
    data: &Path,
    runs: &Path,
    models: &[ModelKind],
    out_dir: &Path,
) -> Result<EvalReport> {
    let (artifacts, data_hash) = load_data(resolved, data)?;
    let k = resolved.config.top_k;
    let eval_data = artifacts.eval_data(k);
    let test = &artifacts.split.test;
    let mut reports = Vec::new();
    let mut used_runs = Vec::new();
    for &kind in models {
        let dirs = if kind == ModelKind::ActrRepeat {
            vec![PathBuf::new()]
        } else {
            list_runs(runs, kind)?
        };
        let mut metrics: Vec<RunMetrics> = Vec::new();
        for dir in &dirs {
            let loaded = load_run(dir, kind, &data_hash, data)?;
            metrics.push(evaluate_run(&loaded.scorer(kind), &eval_data, test)?);
            if kind != ModelKind::ActrRepeat {
                used_runs.push(json!({ "model": kind.name(), "run": dir.file_name().map(|n| n.to_string_lossy().to_string()) }));
            }
        }
        reports.push(ModelReport::from_runs(kind.name(), &metrics, &artifacts.sequences)?);
    }
    let report = EvalReport {
        k,
        n_instances: test.len(),
        rep_ratio_gt: rep_ratio_gt(&artifacts.sequences, test, artifacts.window()),
        models: reports,
    };
    create_dir(out_dir)?;
    let json_path = out_dir.join(REPORT_FILE);
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    let table_path = out_dir.join(REPORT_TABLE_FILE);
    fs::write(&table_path, report.to_table()).map_err(|e| Error::io(&table_path, e))?;
    resolved.write_snapshot(out_dir, "evaluate", json!({ "data": data_hash, "runs": used_runs }))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendedTrack {
    pub track: String,
    pub score: f64,
    pub repeated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user: String,
    /// Time the recommended session is assumed to start.
    pub at: i64,
    pub tracks: Vec<RecommendedTrack>,
}

/// A loaded data directory plus one model, ready to recommend.
pub struct Recommender {
    artifacts: Artifacts,
    loaded: Loaded,
    kind: ModelKind,
    session_gap: i64,
    data_hash: String,
}

impl Recommender {
    /// `run` may be omitted only for ACT-R-Repeat.
    pub fn open(data: &Path, run: Option<&Path>, kind: ModelKind, decay: f64, session_gap: i64) -> Result<Self> {
        let (artifacts, _) = Artifacts::load(data, decay)?;
        let data_hash = file_hash(&data.join(MANIFEST_FILE))?;
        let loaded = match (kind, run) {
            (ModelKind::ActrRepeat, _) => Loaded::None,
            (_, Some(dir)) => load_run(dir, kind, &data_hash, data)?,
            (_, None) => return Err(Error::InvalidArgument(format!("--run is required for {kind}"))),
        };
        Ok(Recommender {
            artifacts,
            loaded,
            kind,
            session_gap,
            data_hash,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.artifacts
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.artifacts.sequences.iter().map(|s| s.user_id.as_str())
    }

    /// Next session for `user` from their last `L` sessions, timed one
    /// session gap after the last session start.
    pub fn recommend(&self, user: &str, k: usize) -> Result<Recommendation> {
        let seq = self
            .artifacts
            .sequences
            .iter()
            .find(|s| s.user_id == user)
            .ok_or_else(|| Error::Missing {
                what: "user",
                ids: vec![user.to_string()],
            })?;
        let at = seq.sessions.last().expect("users have sessions").start_time + self.session_gap;
        let ctx = UserContext::latest(seq, &self.artifacts.table, self.artifacts.window(), at)?;
        let list = self.loaded.scorer(self.kind).recommend(&ctx, &self.artifacts.resources(), k)?;
        Ok(Recommendation {
            user: seq.user_id.clone(),
            at,
            tracks: list
                .items
                .iter()
                .map(|t| RecommendedTrack {
                    track: self.artifacts.catalog().id(t.track).to_string(),
                    score: t.score,
                    repeated: t.repeated,
                })
                .collect(),
        })
    }
}

/// Recommends the next session of each listed user, one JSON line each.
pub fn cmd_recommend(
    resolved: &Resolved,
    data: &Path,
    run: Option<&Path>,
    model: ModelKind,
    users: &[String],
    out_dir: Option<&Path>,
) -> Result<()> {
    let c = &resolved.config;
    let rec = Recommender::open(data, run, model, c.decay, c.session_gap)?;
    let missing: Vec<String> = users.iter().filter(|u| !rec.users().any(|x| x == *u)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::Missing { what: "user", ids: missing });
    }
    let selected: Vec<String> = if users.is_empty() {
        rec.users().map(String::from).collect()
    } else {
        users.to_vec()
    };
    let mut out = String::new();
    for u in &selected {
        out.push_str(&serde_json::to_string(&rec.recommend(u, c.top_k)?)?);
        out.push('\n');
    }
    let data_hash = &rec.data_hash;
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(RECOMMENDATIONS_FILE);
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            resolved.write_snapshot(
                dir,
                "recommend",
                json!({ "data": data_hash, "model": model.name(), "run": run.map(|r| r.display().to_string()) }),
            )
        }
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
