//! Session/user embedding network with ACT-R attention, plus the audio
//! encoder `f` and the activation predictor `g` used for unheard tracks.
//!
//! Forward passes are written against [`Graph`] so that training and
//! inference share one definition. [`Model`] owns the parameters; a
//! [`Bound`] view attaches them to a particular graph.

mod forward;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{load_checkpoint, save_checkpoint, Graph, ParamId, ParamStore, Tensor, Var};

pub use forward::{
    attention_weights, components, encode_audio, observed_user_embedding, predict_activation,
    session_embedding, session_from_rows, stack_rows, user_embedding, UserEmbedding,
    ATTENTION_FLOOR,
};

/// Whether a model carries a trained audio path. Both families share one
/// parameter layout; for `Pisa` the encoder and predictor stay at init.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Pisa,
    Reacta,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::Pisa => f.write_str("pisa"),
            ModelFamily::Reacta => f.write_str("reacta"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Collaborative embedding width.
    pub d: usize,
    /// Audio embedding width.
    pub d_audio: usize,
    /// Observation window `L`; also the number of positional rows.
    pub window: usize,
    pub blocks: usize,
    pub heads: usize,
    pub n_users: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("d_audio", self.d_audio),
            ("window", self.window),
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("n_users", self.n_users),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "d = {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(String, [usize; 2], Init)> {
        let d = self.d;
        let mut out = vec![
            ("mix.w".to_string(), [1, 3], Init::Zeros),
            ("pos".to_string(), [self.window, d], Init::Glorot),
            ("user.long".to_string(), [self.n_users, d], Init::Glorot),
        ];
        for b in 0..self.blocks {
            let p = |s: &str| format!("block{b}.{s}");
            out.extend([
                (p("wq"), [d, d], Init::Glorot),
                (p("wk"), [d, d], Init::Glorot),
                (p("wv"), [d, d], Init::Glorot),
                (p("wo"), [d, d], Init::Glorot),
                (p("ln1.g"), [1, d], Init::Ones),
                (p("ln1.b"), [1, d], Init::Zeros),
                (p("ffn.w1"), [d, 4 * d], Init::Glorot),
                (p("ffn.b1"), [1, 4 * d], Init::Zeros),
                (p("ffn.w2"), [4 * d, d], Init::Glorot),
                (p("ffn.b2"), [1, d], Init::Zeros),
                (p("ln2.g"), [1, d], Init::Ones),
                (p("ln2.b"), [1, d], Init::Zeros),
            ]);
        }
        out.extend([
            ("beta.w".to_string(), [2 * d, 1], Init::Glorot),
            ("beta.b".to_string(), [1, 1], Init::Zeros),
            ("enc.w1".to_string(), [self.d_audio, d], Init::Glorot),
            ("enc.b1".to_string(), [1, d], Init::Zeros),
            ("enc.w2".to_string(), [d, d], Init::Glorot),
            ("enc.b2".to_string(), [1, d], Init::Zeros),
            ("pred.w1".to_string(), [2 * d, d], Init::Glorot),
            ("pred.b1".to_string(), [1, d], Init::Zeros),
            ("pred.w2".to_string(), [d, 2], Init::Glorot),
            ("pred.b2".to_string(), [1, 2], Init::Zeros),
        ]);
        out
    }
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Glorot,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub mix_w: ParamId,
    pub pos: ParamId,
    pub user_long: ParamId,
    pub blocks: Vec<BlockIds>,
    pub beta_w: ParamId,
    pub beta_b: ParamId,
    pub enc: [ParamId; 4],
    pub pred: [ParamId; 4],
}

impl ParamIds {
    fn resolve(config: &ModelConfig, params: &ParamStore) -> Result<Self> {
        for (name, shape, _) in config.shapes() {
            match params.by_name(&name) {
                Some(t) if t.shape() == shape => {}
                Some(t) => {
                    return Err(Error::Shape {
                        op: "model parameter",
                        detail: format!("{name}: expected {shape:?}, found {:?}", t.shape()),
                    })
                }
                None => {
                    return Err(Error::Missing {
                        what: "model parameter".into(),
                        ids: vec![name],
                    })
                }
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let blocks = (0..config.blocks)
            .map(|b| {
                let p = |s: &str| id(&format!("block{b}.{s}"));
                BlockIds {
                    wq: p("wq"),
                    wk: p("wk"),
                    wv: p("wv"),
                    wo: p("wo"),
                    ln1_g: p("ln1.g"),
                    ln1_b: p("ln1.b"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                    ln2_g: p("ln2.g"),
                    ln2_b: p("ln2.b"),
                }
            })
            .collect();
        Ok(ParamIds {
            mix_w: id("mix.w"),
            pos: id("pos"),
            user_long: id("user.long"),
            blocks,
            beta_w: id("beta.w"),
            beta_b: id("beta.b"),
            enc: ["enc.w1", "enc.b1", "enc.w2", "enc.b2"].map(id),
            pred: ["pred.w1", "pred.b1", "pred.w2", "pred.b2"].map(id),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

impl Model {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains, and
    /// mixture logits at zero (equal component weights).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, [r, c], init) in config.shapes() {
            let t = match init {
                Init::Zeros => Tensor::zeros(r, c),
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Glorot => Tensor::glorot(r, c, &mut rng),
            };
            params.add(name, t);
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Model { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.by_name(name)
    }

    /// Overwrites a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.params.id(name).ok_or_else(|| Error::Missing {
            what: "model parameter".into(),
            ids: vec![name.to_string()],
        })?;
        let slot = self.params.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::Dimension {
                expected: slot.len(),
                found: value.len(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Effective, nonnegative mixture weights `(w_BL, w_SPR, w_P)`.
    pub fn mixture_weights(&self) -> [f64; 3] {
        let raw = self.params.get(self.ids.mix_w).data();
        [0, 1, 2].map(|i| crate::numerics::softplus(raw[i]))
    }

    pub fn bind<'m>(&'m self, graph: &mut Graph) -> Bound<'m> {
        Bound::new(self, graph)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        save_checkpoint(path, &self.params, meta)
    }

    /// Loads a checkpoint and validates every tensor against the stored
    /// hyperparameters.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (header, params) = load_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(header.meta["model"].clone())
            .map_err(|e| Error::format(path, format!("missing model hyperparameters: {e}")))?;
        let extra = header.meta.get("extra").cloned().unwrap_or_default();
        Ok((Self::from_params(config, params)?, extra))
    }
}

/// Model parameters attached to one graph. Shared weights become graph
/// nodes once; user rows are gathered on demand.
pub struct Bound<'m> {
    pub(crate) model: &'m Model,
    pub(crate) mix_w: Var,
    pub(crate) blocks: Vec<BoundBlock>,
    pub(crate) beta_w: Var,
    pub(crate) beta_b: Var,
    enc: Option<[Var; 4]>,
    pred: Option<[Var; 4]>,
}

pub(crate) struct BoundBlock {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

impl<'m> Bound<'m> {
    fn new(model: &'m Model, g: &mut Graph) -> Self {
        let p = &model.params;
        let ids = &model.ids;
        let blocks = ids
            .blocks
            .iter()
            .map(|b| BoundBlock {
                wq: g.param(p, b.wq),
                wk: g.param(p, b.wk),
                wv: g.param(p, b.wv),
                wo: g.param(p, b.wo),
                ln1_g: g.param(p, b.ln1_g),
                ln1_b: g.param(p, b.ln1_b),
                w1: g.param(p, b.w1),
                b1: g.param(p, b.b1),
                w2: g.param(p, b.w2),
                b2: g.param(p, b.b2),
                ln2_g: g.param(p, b.ln2_g),
                ln2_b: g.param(p, b.ln2_b),
            })
            .collect();
        Bound {
            model,
            mix_w: g.param(p, ids.mix_w),
            blocks,
            beta_w: g.param(p, ids.beta_w),
            beta_b: g.param(p, ids.beta_b),
            enc: None,
            pred: None,
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub(crate) fn encoder(&mut self, g: &mut Graph) -> [Var; 4] {
        let (p, ids) = (&self.model.params, &self.model.ids);
        *self.enc.get_or_insert_with(|| ids.enc.map(|id| g.param(p, id)))
    }

    pub(crate) fn predictor(&mut self, g: &mut Graph) -> [Var; 4] {
        let (p, ids) = (&self.model.params, &self.model.ids);
        *self.pred.get_or_insert_with(|| ids.pred.map(|id| g.param(p, id)))
    }
}
