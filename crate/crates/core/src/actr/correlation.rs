use std::collections::BTreeMap;

use crate::corpus::{Session, TrackIndex};
use crate::numerics::SparseMatrix;

/// Directional co-occurrence `F` and its symmetric normalisation
/// `C = D^(-1/2) F D^(-1/2)`, `D_ii = Σ_j F_ij`.
///
/// `F[i][j]` counts how often track `j` was in the session right before a
/// session containing `i`. Entries touching a zero-degree row are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    counts: SparseMatrix,
    degree: Vec<f64>,
    normalized: SparseMatrix,
}

impl CorrelationMatrix {
    pub fn from_counts(counts: SparseMatrix) -> Self {
        assert_eq!(counts.n_rows(), counts.n_cols(), "F must be square");
        let degree: Vec<f64> = (0..counts.n_rows()).map(|i| counts.row_sum(i)).collect();
        let rows = (0..counts.n_rows())
            .map(|i| {
                if degree[i] <= 0.0 {
                    return Vec::new();
                }
                counts
                    .row(i)
                    .iter()
                    .filter(|&&(j, _)| degree[j] > 0.0)
                    .map(|&(j, f)| (j, f / (degree[i] * degree[j]).sqrt()))
                    .collect()
            })
            .collect();
        let normalized = SparseMatrix::from_rows(counts.n_cols(), rows);
        CorrelationMatrix {
            counts,
            degree,
            normalized,
        }
    }

    pub fn n_tracks(&self) -> usize {
        self.counts.n_rows()
    }

    /// `C[i][j]`.
    pub fn get(&self, i: TrackIndex, j: TrackIndex) -> f64 {
        self.normalized.get(i, j)
    }

    pub fn counts(&self) -> &SparseMatrix {
        &self.counts
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn normalized(&self) -> &SparseMatrix {
        &self.normalized
    }

    /// Spreading activation of every catalog track from `previous`.
    pub fn spread_all(&self, previous: &[TrackIndex]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_tracks()];
        for &source in previous {
            for &(target, c) in self.normalized.row(source) {
                out[target] += c;
            }
        }
        out
    }
}

/// Accumulates `F` over consecutive session pairs of each user.
pub fn build_correlation(user_sessions: &[&[Session]], n_tracks: usize) -> CorrelationMatrix {
    let mut rows: Vec<BTreeMap<TrackIndex, f64>> = vec![BTreeMap::new(); n_tracks];
    for sessions in user_sessions {
        for pair in sessions.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            for &i in &next.tracks {
                for &j in &prev.tracks {
                    *rows[i].entry(j).or_default() += 1.0;
                }
            }
        }
    }
    let rows = rows.into_iter().map(|r| r.into_iter().collect()).collect();
    CorrelationMatrix::from_counts(SparseMatrix::from_rows(n_tracks, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_transition_is_directional() {
        let sessions = vec![Session::new(0, vec![0]), Session::new(9000, vec![1])];
        let c = build_correlation(&[&sessions], 2);
        assert_eq!(c.counts().get(1, 0), 1.0);
        assert_eq!(c.counts().get(0, 1), 0.0);
    }

    #[test]
    fn symmetric_counts_normalise_to_permutation() {
        let f = SparseMatrix::from_rows(2, vec![vec![(1, 2.0)], vec![(0, 2.0)]]);
        let c = CorrelationMatrix::from_counts(f);
        assert_eq!(c.degree(), &[2.0, 2.0]);
        assert_eq!(c.normalized().to_dense().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn diagonal_counts_normalise_to_identity() {
        let f = SparseMatrix::from_rows(2, vec![vec![(0, 4.0)], vec![(1, 1.0)]]);
        let c = CorrelationMatrix::from_counts(f);
        assert_eq!(c.normalized().to_dense().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_degree_rows_are_zero() {
        let f = SparseMatrix::from_rows(3, vec![vec![(1, 3.0)], vec![], vec![(0, 1.0)]]);
        let c = CorrelationMatrix::from_counts(f);
        for j in 0..3 {
            assert_eq!(c.get(1, j), 0.0);
        }
        // column 1 has zero degree, so C[0][1] carries no mass either
        assert_eq!(c.get(0, 1), 0.0);
        assert!(c.normalized().triplets().all(|(_, _, v)| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn spread_all_matches_pointwise() {
        let seqs = vec![
            Session::new(0, vec![0, 1]),
            Session::new(9000, vec![2, 3]),
            Session::new(20000, vec![0, 3]),
            Session::new(40000, vec![1, 2]),
        ];
        let c = build_correlation(&[&seqs], 4);
        let prev = [0, 3];
        let dense = c.spread_all(&prev);
        for v in 0..4 {
            let direct: f64 = prev.iter().map(|&p| c.get(p, v)).sum();
            assert!((dense[v] - direct).abs() < 1e-15);
        }
    }
}
