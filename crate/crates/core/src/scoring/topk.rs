use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::TrackIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrack {
    pub track: TrackIndex,
    pub score: f64,
    /// Heard in the observed history.
    pub repeated: bool,
}

/// Ranked recommendations, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub items: Vec<ScoredTrack>,
}

impl ScoredList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tracks(&self) -> Vec<TrackIndex> {
        self.items.iter().map(|s| s.track).collect()
    }
}

/// Higher score first, then lower track index.
fn rank_order(a: &(TrackIndex, f64), b: &(TrackIndex, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best candidates; ties go to the smaller track index.
pub fn top_k(
    candidates: &[(TrackIndex, f64)],
    k: usize,
    is_repeated: impl Fn(TrackIndex) -> bool,
) -> ScoredList {
    let mut pool = candidates.to_vec();
    if k == 0 {
        return ScoredList::default();
    }
    if pool.len() > k {
        pool.select_nth_unstable_by(k - 1, rank_order);
        pool.truncate(k);
    }
    pool.sort_unstable_by(rank_order);
    ScoredList {
        items: pool
            .into_iter()
            .map(|(track, score)| ScoredTrack {
                track,
                score,
                repeated: is_repeated(track),
            })
            .collect(),
    }
}

/// Candidates `(v, scores[v])` for a dense per-track score vector.
pub fn dense_candidates(scores: &[f64]) -> Vec<(TrackIndex, f64)> {
    scores.iter().copied().enumerate().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_give_first_indices() {
        let c = dense_candidates(&[0.5; 20]);
        assert_eq!(top_k(&c, 10, |_| false).tracks(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn k_one_is_argmax_with_low_index_tie() {
        let c = dense_candidates(&[0.1, 0.9, 0.3, 0.9]);
        let l = top_k(&c, 1, |t| t == 1);
        assert_eq!(l.tracks(), vec![1]);
        assert!(l.items[0].repeated);
    }

    #[test]
    fn short_candidate_lists_are_not_padded() {
        let c = vec![(7, 1.0), (3, 2.0), (5, 1.0)];
        assert_eq!(top_k(&c, 10, |_| true).tracks(), vec![3, 5, 7]);
        assert!(top_k(&c, 0, |_| true).is_empty());
    }
}
