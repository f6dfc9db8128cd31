//! Multi-task training: ranking loss on the user embedding, audio-encoder
//! alignment, and activation regression for the predictor, optimised with
//! Adam over shuffled mini-batches of sub-sequence instances.

mod loss;
mod negatives;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actr::{ActivationTable, DEFAULT_DECAY};
use crate::corpus::{Instance, SessionSequence, TrackCatalog, TrackIndex};
use crate::error::{Error, Result};
use crate::eval::{ndcg_recall, Subset};
use crate::model::{encode_audio, observed_user_embedding, predict_activation, session_from_rows, Model, ModelConfig, ModelFamily};
use crate::numerics::{AdamState, Gradients, Graph, ParamStore, Tensor, Var};
use crate::scoring::{Resources, Scorer, UserContext};

pub use loss::{loss_actr, loss_enc, loss_pisa};
pub use negatives::{NegativeSampler, SamplerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Weight of the ranking term against the alignment term.
    pub lambda: f64,
    /// Weight of the encoder loss.
    pub beta_enc: f64,
    /// Weight of the activation regression loss.
    pub gamma: f64,
    /// Upper bound on epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub sampler: SamplerKind,
    /// Negatives per instance.
    pub negatives: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Cut-off of the validation NDCG.
    pub eval_k: usize,
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.001,
            lambda: 0.5,
            beta_enc: 0.4,
            gamma: 0.4,
            epochs: 100,
            batch_size: 512,
            sampler: SamplerKind::Uniform,
            negatives: 10,
            patience: 10,
            eval_k: 10,
            decay: DEFAULT_DECAY,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        for (name, v) in [("beta_enc", self.beta_enc), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("eval_k", self.eval_k),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if !(self.decay > 0.0) {
            return Err(Error::Config(format!("decay must be positive, got {}", self.decay)));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            beta_enc: self.beta_enc,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta_enc: f64,
    pub gamma: f64,
}

impl LossWeights {
    fn needs_encoder(&self) -> bool {
        self.beta_enc > 0.0 || self.gamma > 0.0
    }
}

/// Everything the loss reads besides the parameters.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub sequences: &'a [SessionSequence],
    pub table: &'a ActivationTable,
    pub catalog: &'a TrackCatalog,
    pub resources: Resources<'a>,
}

/// A target session with its sampled negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedInstance {
    pub instance: Instance,
    pub negatives: Vec<TrackIndex>,
}

impl PreparedInstance {
    pub fn new(data: &TrainingData, instance: Instance, negatives: Vec<TrackIndex>) -> Result<Self> {
        let target = &data.sequences[instance.user].sessions[instance.target];
        if let Some(v) = negatives.iter().find(|v| target.contains(**v)) {
            return Err(Error::InvalidArgument(format!(
                "negative {v} belongs to target session {} of user {}",
                instance.target, instance.user
            )));
        }
        Ok(PreparedInstance { instance, negatives })
    }
}

/// Loss nodes of one instance; absent terms have zero weight.
pub struct LossParts {
    pub total: Var,
    pub pisa: Var,
    pub enc: Option<Var>,
    pub actr: Option<Var>,
}

/// Builds the weighted multi-task loss of one instance.
pub fn instance_loss(
    g: &mut Graph,
    model: &Model,
    data: &TrainingData,
    prepared: &PreparedInstance,
    weights: &LossWeights,
) -> Result<LossParts> {
    let inst = prepared.instance;
    let window = model.config().window;
    let m = data.resources.collaborative;
    let mut b = model.bind(g);
    let observed: Vec<_> = inst
        .observed(window)
        .map(|l| data.table.session(inst.user, l))
        .collect();
    let user = observed_user_embedding(g, &b, m, &observed, inst.user)?;

    let target_rows = data.table.session(inst.user, inst.target);
    let positives: Vec<TrackIndex> = target_rows.iter().map(|r| r.track).collect();
    let target_session = session_from_rows(g, &b, m, target_rows)?;
    let pos = g.constant(m.matrix().select_rows(&positives));
    let neg = g.constant(m.matrix().select_rows(&prepared.negatives));
    let pisa = loss_pisa(g, user.vector, pos, neg, target_session, weights.lambda);
    let mut total = pisa;
    let (mut enc, mut actr) = (None, None);
    if weights.needs_encoder() {
        let audio = data
            .resources
            .audio
            .ok_or_else(|| Error::Config("encoder and predictor losses need audio embeddings".into()))?;
        let a = g.constant(audio.matrix().select_rows(&positives));
        let encoded = encode_audio(g, &mut b, a)?;
        if weights.beta_enc > 0.0 {
            let l = loss_enc(g, encoded, pos, neg);
            let w = g.scale(l, weights.beta_enc);
            total = g.add(total, w);
            enc = Some(l);
        }
        if weights.gamma > 0.0 {
            let predicted = predict_activation(g, &mut b, encoded, user.vector)?;
            let mut t = Tensor::zeros(positives.len(), 2);
            for (i, r) in target_rows.iter().enumerate() {
                t.set(i, 0, r.base_level);
                t.set(i, 1, r.spreading);
            }
            let t = g.constant(t);
            let l = loss_actr(g, predicted, t);
            let w = g.scale(l, weights.gamma);
            total = g.add(total, w);
            actr = Some(l);
        }
    }
    Ok(LossParts { total, pisa, enc, actr })
}

/// Sum of the instance losses under parameters `params`; the shape used
/// by gradient checking.
pub fn batch_loss(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ParamStore,
    data: &TrainingData,
    batch: &[PreparedInstance],
    weights: &LossWeights,
) -> Result<Var> {
    let model = Model::from_params(config.clone(), params.clone())?;
    let mut acc: Option<Var> = None;
    for p in batch {
        let parts = instance_loss(g, &model, data, p, weights)?;
        acc = Some(match acc {
            Some(a) => g.add(a, parts.total),
            None => parts.total,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty batch".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance weighted loss.
    pub total: f64,
    pub pisa: f64,
    pub enc: f64,
    pub actr: f64,
    pub val_ndcg: Option<f64>,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// Equality of everything except wall time.
    pub fn same_result(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.total.to_bits() == other.total.to_bits()
            && self.pisa.to_bits() == other.pisa.to_bits()
            && self.enc.to_bits() == other.enc.to_bits()
            && self.actr.to_bits() == other.actr.to_bits()
            && self.val_ndcg.map(f64::to_bits) == other.val_ndcg.map(f64::to_bits)
    }
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch, or of the last epoch
    /// without validation instances.
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Mean NDCG@k of the model's own scoring rule over `instances`.
pub fn validation_ndcg(model: &Model, data: &TrainingData, instances: &[Instance], k: usize) -> Result<f64> {
    let scorer = match model.config().family {
        ModelFamily::Reacta => Scorer::Reacta(model),
        ModelFamily::Pisa => Scorer::Pisa(model),
    };
    let window = model.config().window;
    let values = instances
        .par_iter()
        .map(|&inst| {
            let seq = &data.sequences[inst.user];
            let ctx = UserContext::for_instance(seq, data.table, inst, window)?;
            let list = scorer.recommend(&ctx, &data.resources, k)?;
            let heard = ctx.history();
            let gt = &seq.sessions[inst.target].tracks;
            Ok(ndcg_recall(&list, gt, Subset::All, k, |t| heard.has_heard(t))?
                .map_or(0.0, |m| m.ndcg))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}

struct InstanceResult {
    grads: Gradients,
    total: f64,
    pisa: f64,
    enc: f64,
    actr: f64,
}

fn run_instance(model: &Model, data: &TrainingData, p: &PreparedInstance, weights: &LossWeights) -> Result<InstanceResult> {
    let mut g = Graph::new();
    let parts = instance_loss(&mut g, model, data, p, weights)?;
    let grads = g.backward(parts.total, model.params().len())?;
    let value = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
    Ok(InstanceResult {
        grads,
        total: g.scalar(parts.total),
        pisa: g.scalar(parts.pisa),
        enc: value(parts.enc),
        actr: value(parts.actr),
    })
}

/// Draws fresh negatives for every instance, in the given order.
pub fn prepare_instances(
    data: &TrainingData,
    instances: &[Instance],
    sampler: &NegativeSampler,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PreparedInstance>> {
    instances
        .iter()
        .map(|&inst| {
            let target = &data.sequences[inst.user].sessions[inst.target].tracks;
            let negatives = sampler.sample(target, k, rng)?;
            PreparedInstance::new(data, inst, negatives)
        })
        .collect()
}

/// Trains `model` on `train` instances, validating on `validation` after
/// every epoch.
///
/// Each epoch shuffles the instances, resamples negatives, and takes one
/// Adam step per batch on the batch-mean loss. Per-instance gradients are
/// computed in parallel and summed in instance order, so a run is fully
/// determined by the seed. The final batch of an epoch may be short.
pub fn train(
    mut model: Model,
    data: &TrainingData,
    train: &[Instance],
    validation: &[Instance],
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("no training instances".into()));
    }
    let weights = config.weights();
    let sampler = NegativeSampler::new(config.sampler, data.catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut order = train.to_vec();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let prepared = prepare_instances(data, &order, &sampler, config.negatives, &mut rng)?;
        let mut sums = [0.0; 4];
        for (bi, batch) in prepared.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch: bi,
                detail,
            };
            let results = batch
                .par_iter()
                .map(|p| run_instance(&model, data, p, &weights))
                .collect::<Vec<Result<InstanceResult>>>();
            let mut grads = Gradients::empty(model.params().len());
            for r in results {
                let r = r.map_err(|e| match e {
                    Error::NonFinite { .. } => diverged(e.to_string()),
                    other => other,
                })?;
                if !r.total.is_finite() {
                    return Err(diverged(format!("loss {}", r.total)));
                }
                grads.accumulate(&r.grads);
                for (s, v) in sums.iter_mut().zip([r.total, r.pisa, r.enc, r.actr]) {
                    *s += v;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(diverged("non-finite gradient".into()));
            }
            adam.step(model.params_mut(), &grads)?;
        }
        let n = prepared.len() as f64;
        let val_ndcg = if validation.is_empty() {
            None
        } else {
            Some(validation_ndcg(&model, data, validation, config.eval_k)?)
        };
        let record = EpochRecord {
            epoch,
            total: sums[0] / n,
            pisa: sums[1] / n,
            enc: sums[2] / n,
            actr: sums[3] / n,
            val_ndcg,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (pisa {:.5}, enc {:.5}, actr {:.5}) val ndcg {:?}",
            record.total,
            record.pisa,
            record.enc,
            record.actr,
            record.val_ndcg
        );
        history.push(record);
        if let Some(score) = val_ndcg {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let last_epoch = history.len();
    let (model, best_epoch) = match best {
        Some((_, epoch, params)) => (Model::from_params(model.config().clone(), params)?, epoch),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
        stopped_early,
    })
}
