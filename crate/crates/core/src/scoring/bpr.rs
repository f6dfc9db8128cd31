//! Matrix-factorisation baseline trained with the pairwise BPR objective.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{TrackIndex, UserIndex};
use crate::error::{Error, Result};
use crate::numerics::{dot, load_checkpoint, save_checkpoint, sigmoid, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            dim: 16,
            epochs: 50,
            learning_rate: 0.05,
            regularization: 1e-4,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BprModel {
    users: Tensor,
    items: Tensor,
}

impl BprModel {
    pub fn from_factors(users: Tensor, items: Tensor) -> Result<Self> {
        if users.cols() != items.cols() {
            return Err(Error::Dimension {
                expected: users.cols(),
                found: items.cols(),
            });
        }
        Ok(BprModel { users, items })
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn user_factors(&self, user: UserIndex) -> &[f64] {
        self.users.row_slice(user)
    }

    pub fn item_factors(&self, item: TrackIndex) -> &[f64] {
        self.items.row_slice(item)
    }

    pub fn score(&self, user: UserIndex, item: TrackIndex) -> f64 {
        dot(self.users.row_slice(user), self.items.row_slice(item))
    }

    /// Scores of every item for `user`.
    pub fn scores(&self, user: UserIndex) -> Vec<f64> {
        (0..self.n_items()).map(|v| self.score(user, v)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut p = ParamStore::new();
        p.add("bpr.users", self.users.clone());
        p.add("bpr.items", self.items.clone());
        save_checkpoint(path, &p, serde_json::json!({ "model": "bpr" }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (_, p) = load_checkpoint(path)?;
        let get = |name: &str| {
            p.by_name(name).cloned().ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
        };
        Self::from_factors(get("bpr.users")?, get("bpr.items")?)
    }
}

/// SGD on `−ln σ(x_ui − x_uj)` over every observed `(u, i)` per epoch, with
/// one uniformly drawn unobserved `j` each.
pub fn train_bpr(interactions: &[Vec<TrackIndex>], n_items: usize, config: &BprConfig) -> Result<BprModel> {
    if config.dim == 0 {
        return Err(Error::Config("BPR dimension must be ≥ 1".into()));
    }
    let sets: Vec<HashSet<TrackIndex>> = interactions.iter().map(|v| v.iter().copied().collect()).collect();
    let mut pairs: Vec<(UserIndex, TrackIndex)> = Vec::new();
    for (u, items) in interactions.iter().enumerate() {
        let mut seen = HashSet::new();
        for &i in items {
            if i >= n_items {
                return Err(Error::InvalidArgument(format!("item {i} outside catalog of {n_items}")));
            }
            if seen.insert(i) {
                pairs.push((u, i));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut init = |rows: usize| {
        let data = (0..rows * config.dim).map(|_| normal.sample(&mut rng)).collect();
        Tensor::from_vec(rows, config.dim, data).expect("sized")
    };
    let mut users = init(interactions.len());
    let mut items = init(n_items);
    let (lr, reg) = (config.learning_rate, config.regularization);

    for _ in 0..config.epochs {
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            if sets[u].len() >= n_items {
                continue;
            }
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !sets[u].contains(&j) {
                    break j;
                }
            };
            let pu = users.row_slice(u).to_vec();
            let qi = items.row_slice(i).to_vec();
            let qj = items.row_slice(j).to_vec();
            let x = dot(&pu, &qi) - dot(&pu, &qj);
            let g = sigmoid(-x);
            for f in 0..config.dim {
                users.set(u, f, pu[f] + lr * (g * (qi[f] - qj[f]) - reg * pu[f]));
                items.set(i, f, qi[f] + lr * (g * pu[f] - reg * qi[f]));
                items.set(j, f, qj[f] + lr * (-g * pu[f] - reg * qj[f]));
            }
        }
    }
    if !(users.is_finite() && items.is_finite()) {
        return Err(Error::Diverged {
            epoch: config.epochs,
            batch: 0,
            detail: "BPR factors became non-finite".into(),
        });
    }
    BprModel::from_factors(users, items)
}

/// Mean over users of the fraction of (observed, unobserved) item pairs
/// ranked correctly; users with no observed or no unobserved items skip.
pub fn pairwise_auc(model: &BprModel, interactions: &[Vec<TrackIndex>]) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for (u, items) in interactions.iter().enumerate() {
        let pos: HashSet<TrackIndex> = items.iter().copied().collect();
        let scores = model.scores(u);
        let (p, n): (Vec<_>, Vec<_>) = (0..model.n_items()).partition(|v| pos.contains(v));
        if p.is_empty() || n.is_empty() {
            continue;
        }
        let mut correct = 0.0;
        for &i in &p {
            for &j in &n {
                correct += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        total += correct / (p.len() * n.len()) as f64;
        counted += 1;
    }
    if counted == 0 {
        0.5
    } else {
        total / counted as f64
    }
}
