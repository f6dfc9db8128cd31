use serde::{Deserialize, Serialize};

use crate::corpus::TrackIndex;
use crate::error::{Error, Result};
use crate::scoring::ScoredList;

/// Ground-truth restriction of a ranking metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    /// Tracks heard in the observed sessions.
    Repeated,
    /// Tracks not heard in the observed sessions.
    New,
}

impl Subset {
    fn keeps(self, heard: bool) -> bool {
        match self {
            Subset::All => true,
            Subset::Repeated => heard,
            Subset::New => !heard,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub ndcg: f64,
    pub recall: f64,
    pub hits: usize,
    /// Size of the ground-truth subset.
    pub relevant: usize,
}

/// NDCG@k and Recall@k against the `subset` of `ground_truth`.
///
/// Relevance is binary, the discount `1/log2(rank + 1)`, and recall is
/// normalised by `min(k, |subset|)`. `None` when the subset is empty.
pub fn ndcg_recall(
    list: &ScoredList,
    ground_truth: &[TrackIndex],
    subset: Subset,
    k: usize,
    is_heard: impl Fn(TrackIndex) -> bool,
) -> Result<Option<RankMetrics>> {
    if ground_truth.is_empty() {
        return Err(Error::InvalidArgument("empty ground-truth session".into()));
    }
    let relevant: Vec<TrackIndex> = ground_truth
        .iter()
        .copied()
        .filter(|&t| subset.keeps(is_heard(t)))
        .collect();
    if relevant.is_empty() || k == 0 {
        return Ok(None);
    }
    let mut dcg = 0.0;
    let mut hits = 0;
    for (i, item) in list.items.iter().take(k).enumerate() {
        if relevant.contains(&item.track) {
            dcg += 1.0 / ((i + 2) as f64).log2();
            hits += 1;
        }
    }
    let ideal = k.min(relevant.len());
    let idcg: f64 = (0..ideal).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(Some(RankMetrics {
        ndcg: dcg / idcg,
        recall: hits as f64 / ideal as f64,
        hits,
        relevant: relevant.len(),
    }))
}

/// Share of repeated tracks in `list` minus share in `ground_truth`, in
/// percent. An empty list counts as repeating nothing.
pub fn rep_bias_instance(list: &ScoredList, ground_truth: &[TrackIndex], is_heard: impl Fn(TrackIndex) -> bool) -> f64 {
    let rec = if list.is_empty() {
        0.0
    } else {
        list.items.iter().filter(|s| s.repeated).count() as f64 / list.len() as f64
    };
    let gt = if ground_truth.is_empty() {
        0.0
    } else {
        ground_truth.iter().filter(|&&t| is_heard(t)).count() as f64 / ground_truth.len() as f64
    };
    100.0 * (rec - gt)
}

/// Mean of the per-instance repetition biases.
pub fn rep_bias<'a>(
    instances: impl IntoIterator<Item = (&'a ScoredList, &'a [TrackIndex], &'a dyn Fn(TrackIndex) -> bool)>,
) -> f64 {
    let values: Vec<f64> = instances
        .into_iter()
        .map(|(l, gt, heard)| rep_bias_instance(l, gt, heard))
        .collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Popularity percentile of every track: 0 for the most listened track,
/// 100 for the least, ties broken by track index.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityRanks {
    percentile: Vec<f64>,
}

impl PopularityRanks {
    pub fn new(popularity: &[u64]) -> Self {
        let n = popularity.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
        let mut percentile = vec![0.0; n];
        if n > 1 {
            for (rank, &t) in order.iter().enumerate() {
                percentile[t] = 100.0 * rank as f64 / (n - 1) as f64;
            }
        }
        PopularityRanks { percentile }
    }

    pub fn percentile(&self, track: TrackIndex) -> f64 {
        self.percentile[track]
    }

    /// Median percentile of a list; `None` when it is empty.
    pub fn median(&self, list: &ScoredList) -> Option<f64> {
        let mut p: Vec<f64> = list.items.iter().map(|s| self.percentile[s.track]).collect();
        if p.is_empty() {
            return None;
        }
        p.sort_by(f64::total_cmp);
        let m = p.len() / 2;
        Some(if p.len() % 2 == 1 { p[m] } else { 0.5 * (p[m - 1] + p[m]) })
    }
}

/// Mean over non-empty lists of their median popularity percentile.
pub fn pop_bias<'a>(lists: impl IntoIterator<Item = &'a ScoredList>, popularity: &[u64]) -> f64 {
    let ranks = PopularityRanks::new(popularity);
    let medians: Vec<f64> = lists.into_iter().filter_map(|l| ranks.median(l)).collect();
    if medians.is_empty() {
        0.0
    } else {
        medians.iter().sum::<f64>() / medians.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoredTrack;

    fn list(tracks: &[TrackIndex], heard: &[TrackIndex]) -> ScoredList {
        ScoredList {
            items: tracks
                .iter()
                .enumerate()
                .map(|(i, &t)| ScoredTrack {
                    track: t,
                    score: -(i as f64),
                    repeated: heard.contains(&t),
                })
                .collect(),
        }
    }

    #[test]
    fn hand_ndcg_example() {
        let l = list(&[0, 5, 1, 6, 7], &[]);
        let m = ndcg_recall(&l, &[0, 1], Subset::All, 10, |_| false).unwrap().unwrap();
        assert!((m.ndcg - 1.5 / (1.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((m.ndcg - 0.9198).abs() < 1e-4);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn perfect_ranking_and_half_recall() {
        let gt: Vec<usize> = (0..10).collect();
        let l = list(&(0..10).collect::<Vec<_>>(), &[]);
        let m = ndcg_recall(&l, &gt, Subset::All, 10, |_| false).unwrap().unwrap();
        assert!((m.ndcg - 1.0).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        let l = list(&[20, 0, 21, 1, 22, 2, 23, 3, 24, 4], &[]);
        let m = ndcg_recall(&l, &gt, Subset::All, 10, |_| false).unwrap().unwrap();
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn empty_subsets_are_skipped_and_empty_truth_is_an_error() {
        let l = list(&[1, 2], &[]);
        assert!(ndcg_recall(&l, &[1, 2], Subset::Repeated, 10, |_| false).unwrap().is_none());
        assert!(ndcg_recall(&l, &[], Subset::All, 10, |_| false).is_err());
    }

    #[test]
    fn rep_bias_of_exact_copy_is_zero() {
        let heard = [1, 2];
        let l = list(&[1, 2, 3], &heard);
        assert_eq!(rep_bias_instance(&l, &[3, 1, 2], |t| heard.contains(&t)), 0.0);
        let all_rep = list(&[1, 2], &heard);
        let b = rep_bias_instance(&all_rep, &[1, 3, 4, 5], |t| heard.contains(&t));
        assert_eq!(b, 75.0);
    }

    #[test]
    fn popularity_percentiles() {
        let pop: Vec<u64> = (0..1000).map(|i| 1000 - i as u64).collect();
        let l = list(&(0..10).collect::<Vec<_>>(), &[]);
        let b = pop_bias([&l], &pop);
        assert!((b - 100.0 * 4.5 / 999.0).abs() < 1e-12);
        assert!(b < 1.0);
        assert_eq!(PopularityRanks::new(&[7]).percentile(0), 0.0);
        // ties fall back to index order
        let r = PopularityRanks::new(&[3, 3, 9]);
        assert_eq!((r.percentile(2), r.percentile(0), r.percentile(1)), (0.0, 50.0, 100.0));
    }
}
