//! Run configuration: a flat JSON document resolved from a preset, an
//! optional config file and flag overrides, in that order.

use std::collections::BTreeMap;
use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::corpus::SyntheticConfig;
use crate::error::{Error, Result};
use crate::scoring::BprConfig;
use crate::training::{SamplerKind, TrainingConfig};

use super::artifacts::BuildParams;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size hyperparameters (d = 128, L = 30, B = 2, H = 2, batch 512).
    Paper,
    /// Desk-scale corpus and model (d = 16, L = 8).
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::Paper => RunConfig::default(),
            Preset::Desk => RunConfig {
                n_users: 20,
                n_tracks: 200,
                sessions_per_user: 20,
                d_audio: 16,
                window: 8,
                n_val: 2,
                n_test: 2,
                d: 16,
                batch_size: 64,
                learning_rate: 0.005,
                epochs: 30,
                patience: 5,
                bpr_dim: 16,
                ..RunConfig::default()
            },
        }
    }
}

/// Every tunable of the pipeline. Paths are not part of it, so the config
/// hash only changes with parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    // synthetic generator
    pub n_users: usize,
    pub n_tracks: usize,
    pub sessions_per_user: usize,
    pub k: usize,
    pub p_repeat: f64,
    pub zipf_s: f64,
    pub n_genres: usize,
    pub d_audio: usize,
    // build
    pub session_gap: i64,
    pub window: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub d: usize,
    pub decay: f64,
    // model
    pub blocks: usize,
    pub heads: usize,
    // training
    pub learning_rate: f64,
    pub lambda: f64,
    pub beta_enc: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub patience: usize,
    // BPR baseline
    pub bpr_dim: usize,
    pub bpr_epochs: usize,
    pub bpr_learning_rate: f64,
    pub bpr_regularization: f64,
    // evaluation
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let b = BprConfig::default();
        RunConfig {
            seed: 0,
            n_users: 200,
            n_tracks: 2000,
            sessions_per_user: 50,
            k: 10,
            p_repeat: 0.84,
            zipf_s: 1.0,
            n_genres: 10,
            d_audio: 128,
            session_gap: crate::corpus::DEFAULT_SESSION_GAP,
            window: 30,
            n_val: 10,
            n_test: 10,
            d: 128,
            decay: t.decay,
            blocks: 2,
            heads: 2,
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            beta_enc: t.beta_enc,
            gamma: t.gamma,
            epochs: t.epochs,
            batch_size: t.batch_size,
            negatives: t.negatives,
            patience: t.patience,
            bpr_dim: b.dim,
            bpr_epochs: b.epochs,
            bpr_learning_rate: b.learning_rate,
            bpr_regularization: b.regularization,
            top_k: 10,
        }
    }
}

impl RunConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.n_users,
            n_tracks: self.n_tracks,
            sessions_per_user: self.sessions_per_user,
            k: self.k,
            p_repeat: self.p_repeat,
            zipf_s: self.zipf_s,
            n_genres: self.n_genres,
            d_audio: self.d_audio,
            seed: self.seed,
        }
    }

    pub fn build_params(&self) -> BuildParams {
        BuildParams {
            window: self.window,
            n_val: self.n_val,
            n_test: self.n_test,
            d: self.d,
            decay: self.decay,
            seed: self.seed,
        }
    }

    pub fn training(&self, sampler: SamplerKind) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            beta_enc: self.beta_enc,
            gamma: self.gamma,
            epochs: self.epochs,
            batch_size: self.batch_size,
            sampler,
            negatives: self.negatives,
            patience: self.patience,
            eval_k: self.top_k,
            decay: self.decay,
            seed: self.seed,
        }
    }

    pub fn bpr(&self) -> BprConfig {
        BprConfig {
            dim: self.bpr_dim,
            epochs: self.bpr_epochs,
            learning_rate: self.bpr_learning_rate,
            regularization: self.bpr_regularization,
            seed: self.seed,
            ..BprConfig::default()
        }
    }

    /// Hex SHA-256 of the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let text = serde_json::to_string(&value).expect("value serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Flags shared by every command. Each override flag mirrors one config
/// field; its default comes from the preset.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigFlags {
    /// Flat JSON config file; its fields override the preset.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Hyperparameter preset [default: paper]
    #[arg(long, value_enum, global = true)]
    pub preset: Option<Preset>,
    /// Run seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct Overrides {
    /// Synthetic users [default: 200; desk: 20]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
    /// Synthetic catalog size [default: 2000; desk: 200]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_tracks: Option<usize>,
    /// Synthetic sessions per user [default: 50; desk: 20]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sessions_per_user: Option<usize>,
    /// Tracks per session K [default: 10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Synthetic repeat probability [default: 0.84]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_repeat: Option<f64>,
    /// Zipf exponent of synthetic track popularity [default: 1.0]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zipf_s: Option<f64>,
    /// Synthetic genres [default: 10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_genres: Option<usize>,
    /// Audio embedding width d' [default: 128; desk: 16]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_audio: Option<usize>,
    /// Inactivity gap closing a session, seconds [default: 1800]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_gap: Option<i64>,
    /// Observed sessions L [default: 30; desk: 8]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Validation targets per user [default: 10; desk: 2]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    /// Test targets per user [default: 10; desk: 2]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    /// Embedding width d [default: 128; desk: 16]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Base-level decay α [default: 0.5]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    /// Transformer blocks B [default: 2]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    /// Attention heads H [default: 2]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    /// Adam learning rate [default: 0.001; desk: 0.005]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Ranking vs alignment weight λ [default: 0.5]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Encoder loss weight [default: 0.4]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_enc: Option<f64>,
    /// Activation regression weight γ [default: 0.4]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Maximum epochs [default: 100; desk: 30]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 512; desk: 64]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Negatives per training instance [default: 10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives: Option<usize>,
    /// Early-stopping patience in epochs [default: 10; desk: 5]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    /// BPR factor width [default: 16]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpr_dim: Option<usize>,
    /// BPR epochs [default: 50]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpr_epochs: Option<usize>,
    /// BPR SGD learning rate [default: 0.05]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpr_learning_rate: Option<f64>,
    /// BPR L2 regularisation [default: 0.0001]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpr_regularization: Option<f64>,
    /// Recommendation list length K [default: 10]
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

/// A resolved config plus where each field's value came from.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub preset: Preset,
    pub config: RunConfig,
    pub sources: BTreeMap<String, String>,
}

impl Resolved {
    fn source(&self, key: &str) -> &str {
        self.sources.get(key).map_or("default", String::as_str)
    }

    /// Snapshot written next to a command's outputs.
    pub fn snapshot(&self, command: &str, extra: Value) -> Value {
        serde_json::json!({
            "command": command,
            "preset": self.preset.name(),
            "config_hash": self.config.hash(),
            "config": self.config,
            "sources": self.sources,
            "inputs": extra,
        })
    }

    pub fn write_snapshot(&self, dir: &Path, command: &str, extra: Value) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let text = serde_json::to_string_pretty(&self.snapshot(command, extra))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn conflict(&self, a: &str, b: &str, detail: String) -> Error {
        Error::Config(format!(
            "{detail} ({a} from {}, {b} from {})",
            self.source(a),
            self.source(b)
        ))
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.heads == 0 || c.d % c.heads != 0 {
            return Err(self.conflict("d", "heads", format!("d = {} is not divisible by heads = {}", c.d, c.heads)));
        }
        if c.top_k == 0 {
            return Err(Error::Config(format!("top_k must be ≥ 1 (from {})", self.source("top_k"))));
        }
        Ok(())
    }

    /// Checks only meaningful when the corpus comes from the generator.
    pub fn validate_generation(&self) -> Result<()> {
        let c = &self.config;
        if c.d > c.n_tracks {
            return Err(self.conflict("d", "n_tracks", format!("d = {} exceeds n_tracks = {}", c.d, c.n_tracks)));
        }
        if c.sessions_per_user <= c.window {
            return Err(self.conflict(
                "window",
                "sessions_per_user",
                format!("window = {} leaves no target in {} sessions", c.window, c.sessions_per_user),
            ));
        }
        Ok(())
    }
}

fn merge(target: &mut Map<String, Value>, layer: Map<String, Value>, source: &str, sources: &mut BTreeMap<String, String>) -> Result<()> {
    for (key, value) in layer {
        if !target.contains_key(&key) {
            return Err(Error::Config(format!("unknown field {key:?} in {source}")));
        }
        target.insert(key.clone(), value);
        sources.insert(key, source.to_string());
    }
    Ok(())
}

/// Resolves preset → config file → flags.
pub fn resolve(flags: &ConfigFlags) -> Result<Resolved> {
    let mut file_layer = Map::new();
    let mut file_preset = None;
    let file_source = flags.config.as_ref().map(|p| format!("config file {}", p.display()));
    if let Some(path) = &flags.config {
        if !path.exists() {
            return Err(Error::Missing {
                what: "config file",
                ids: vec![path.display().to_string()],
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(Error::format(path, "expected one flat JSON object"));
        };
        if let Some(p) = map.remove("preset") {
            let p: Preset = serde_json::from_value(p).map_err(|e| Error::format(path, format!("preset: {e}")))?;
            file_preset = Some(p);
        }
        file_layer = map;
    }
    let preset = match (file_preset, flags.preset) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!(
                "preset {} from {} conflicts with preset {} from flag --preset",
                a.name(),
                file_source.as_deref().unwrap_or("config file"),
                b.name()
            )));
        }
        (a, b) => b.or(a).unwrap_or(Preset::Paper),
    };

    let mut sources = BTreeMap::new();
    let Value::Object(mut merged) = serde_json::to_value(preset.config())? else {
        unreachable!("config serialises to an object")
    };
    for key in merged.keys() {
        sources.insert(key.clone(), format!("preset {}", preset.name()));
    }
    if let Some(source) = &file_source {
        merge(&mut merged, file_layer, source, &mut sources)?;
    }
    let Value::Object(mut flag_layer) = serde_json::to_value(&flags.overrides)? else {
        unreachable!("overrides serialise to an object")
    };
    if let Some(seed) = flags.seed {
        flag_layer.insert("seed".into(), seed.into());
    }
    let flag_keys: Vec<String> = flag_layer.keys().cloned().collect();
    for key in flag_keys {
        let value = flag_layer.remove(&key).expect("key listed above");
        let mut one = Map::new();
        one.insert(key.clone(), value);
        merge(&mut merged, one, &format!("flag --{}", key.replace('_', "-")), &mut sources)?;
    }
    let config: RunConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| {
        Error::Config(format!(
            "{e} (while reading {})",
            file_source.as_deref().unwrap_or("flags")
        ))
    })?;
    let resolved = Resolved {
        preset,
        config,
        sources,
    };
    resolved.validate()?;
    Ok(resolved)
}
