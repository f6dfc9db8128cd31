use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SessionSequence, TrackCatalog, UserIndex};
use crate::error::{Error, Result};

/// A prediction target: session `target` of user `user`, observed through
/// the (at most `window`) sessions before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub user: UserIndex,
    pub target: usize,
}

impl Instance {
    pub fn new(user: UserIndex, target: usize) -> Self {
        Instance { user, target }
    }

    /// First observed session index for a window of `window` sessions.
    pub fn window_start(&self, window: usize) -> usize {
        self.target.saturating_sub(window)
    }

    pub fn observed(&self, window: usize) -> std::ops::Range<usize> {
        self.window_start(window)..self.target
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    /// Observation window `L`.
    pub window: usize,
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    /// Per user, sessions `[0, horizon)` form its training portion.
    pub train_horizon: Vec<usize>,
    /// Popularity counted on training portions only.
    pub catalog: TrackCatalog,
}

impl CorpusSplit {
    /// One `(user, start, end)` session range per user with training data.
    pub fn training_sequences(&self) -> Vec<(UserIndex, usize, usize)> {
        self.train_horizon
            .iter()
            .enumerate()
            .filter(|(_, &h)| h >= 2)
            .map(|(u, &h)| (u, 0, h))
            .collect()
    }
}

/// Splits users' sessions into training instances and held-out targets.
///
/// Per user, the most recent `n_val + n_test` sessions that have at least
/// `window` predecessors become evaluation targets, shuffled with `seed`
/// and dealt to validation then test. Earlier sessions form the training
/// portion; every session in it except the first is a training target.
pub fn make_split(
    sequences: &[SessionSequence],
    catalog: &TrackCatalog,
    window: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<CorpusSplit> {
    if window == 0 {
        return Err(Error::InvalidArgument("window L must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_eval = n_val + n_test;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut horizons = Vec::with_capacity(sequences.len());
    let mut popularity = vec![0u64; catalog.len()];

    for seq in sequences {
        let n = seq.sessions.len();
        let mut eval_targets: Vec<usize> = if n_eval > 0 && n > window {
            let take = n_eval.min(n - window);
            (n - take..n).collect()
        } else {
            Vec::new()
        };
        let horizon = eval_targets.first().copied().unwrap_or(n);
        eval_targets.shuffle(&mut rng);
        let n_user_val = eval_targets.len() * n_val / n_eval.max(1);
        for (i, &t) in eval_targets.iter().enumerate() {
            let inst = Instance::new(seq.user_index, t);
            if i < n_user_val {
                validation.push(inst);
            } else {
                test.push(inst);
            }
        }
        for t in 1..horizon {
            train.push(Instance::new(seq.user_index, t));
        }
        for session in &seq.sessions[..horizon] {
            for &track in &session.tracks {
                popularity[track] += 1;
            }
        }
        horizons.push(horizon);
    }
    validation.sort_unstable();
    test.sort_unstable();

    if train.is_empty() && validation.is_empty() && test.is_empty() {
        return Err(Error::EmptySplit("no user yields any instance".into()));
    }
    if n_eval > 0 && validation.is_empty() && test.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no user has more than L = {window} sessions"
        )));
    }
    let mut catalog = catalog.clone();
    catalog.set_popularity(popularity);
    Ok(CorpusSplit {
        window,
        train,
        validation,
        test,
        train_horizon: horizons,
        catalog,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Session;

    fn seq(user: usize, n: usize) -> SessionSequence {
        SessionSequence {
            user_index: user,
            user_id: format!("u{user}"),
            sessions: (0..n)
                .map(|l| Session::new(10_000 * l as i64, vec![l % 5, (l + 1) % 5]))
                .collect(),
        }
    }

    #[test]
    fn full_window_user_without_eval_is_one_training_sequence() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        let split = make_split(&[seq(0, 31)], &catalog, 30, 0, 0, 1).unwrap();
        assert_eq!(split.training_sequences(), vec![(0, 0, 31)]);
        assert_eq!(split.train.len(), 30);
        assert!(split.validation.is_empty() && split.test.is_empty());
    }

    #[test]
    fn last_twenty_split_evenly() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        let split = make_split(&[seq(0, 60)], &catalog, 30, 10, 10, 7).unwrap();
        assert_eq!(split.validation.len(), 10);
        assert_eq!(split.test.len(), 10);
        let mut all: Vec<usize> = split
            .validation
            .iter()
            .chain(&split.test)
            .map(|i| i.target)
            .collect();
        all.sort();
        assert_eq!(all, (40..60).collect::<Vec<_>>());
        for inst in split.validation.iter().chain(&split.test) {
            assert_eq!(inst.observed(30).len(), 30);
        }
        assert_eq!(split.train_horizon, vec![40]);
        assert!(split.train.iter().all(|i| i.target < 40));
    }

    #[test]
    fn deterministic_for_seed() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        let seqs: Vec<_> = (0..4).map(|u| seq(u, 12)).collect();
        let a = make_split(&seqs, &catalog, 5, 2, 2, 3).unwrap();
        let b = make_split(&seqs, &catalog, 5, 2, 2, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_users_train_only() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        let split = make_split(&[seq(0, 4), seq(1, 12)], &catalog, 5, 1, 1, 3).unwrap();
        assert!(split.validation.iter().chain(&split.test).all(|i| i.user == 1));
        assert!(split.train.iter().any(|i| i.user == 0));
    }

    #[test]
    fn no_eligible_user_is_an_error() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        assert!(matches!(
            make_split(&[seq(0, 3)], &catalog, 5, 1, 1, 3),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn popularity_ignores_held_out_sessions() {
        let catalog = TrackCatalog::from_ids((0..5).map(|i| format!("t{i}")));
        let split = make_split(&[seq(0, 8)], &catalog, 3, 1, 1, 0).unwrap();
        let total: u64 = split.catalog.popularity().iter().sum();
        assert_eq!(total, 2 * 6);
    }
}
