//! Collaborative track embeddings from session co-occurrence.
//!
//! Within-session co-occurrence counts are reweighted by positive PMI and
//! factorised with a seeded randomized truncated SVD (range finder with
//! power iterations, then an exact SVD of the small projected matrix).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EmbeddingKind, EmbeddingMatrix};
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::numerics::{SparseMatrix, Tensor};

pub const OVERSAMPLING: usize = 10;
pub const POWER_ITERATIONS: usize = 4;

/// Relative singular-value threshold below which a direction counts as
/// numerically absent.
const RANK_TOLERANCE: f64 = 1e-10;

fn mul_dense(a: &SparseMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.n_rows(), x.ncols());
    for r in 0..a.n_rows() {
        for &(c, v) in a.row(r) {
            for k in 0..x.ncols() {
                out[(r, k)] += v * x[(c, k)];
            }
        }
    }
    out
}

fn transpose_mul_dense(a: &SparseMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.n_cols(), x.ncols());
    for r in 0..a.n_rows() {
        for &(c, v) in a.row(r) {
            for k in 0..x.ncols() {
                out[(c, k)] += v * x[(r, k)];
            }
        }
    }
    out
}

/// Symmetric positive-PMI matrix of within-session co-occurrence.
///
/// A track co-occurs with itself once per session, so the counts are the
/// Gram matrix of the session incidence matrix. Without the diagonal, a
/// pair that only ever appears together factorises into orthogonal rows.
pub fn cooccurrence_ppmi(sessions: &[&Session], n_tracks: usize) -> SparseMatrix {
    let mut counts: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n_tracks];
    for s in sessions {
        for (i, &a) in s.tracks.iter().enumerate() {
            *counts[a].entry(a).or_default() += 1.0;
            for &b in &s.tracks[i + 1..] {
                *counts[a].entry(b).or_default() += 1.0;
                *counts[b].entry(a).or_default() += 1.0;
            }
        }
    }
    let marginals: Vec<f64> = counts.iter().map(|row| row.values().sum()).collect();
    let total: f64 = marginals.iter().sum();
    let rows = counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .filter_map(|(j, x)| {
                    let pmi = (x * total / (marginals[i] * marginals[j])).ln();
                    (pmi > 0.0).then_some((j, pmi))
                })
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(n_tracks, rows)
}

/// `A ≈ U diag(S) Vᵀ` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub vt: Tensor,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> Tensor {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.singular_values.iter().enumerate() {
                us.set(r, c, us.get(r, c) * s);
            }
        }
        us.matmul(&self.vt).expect("factor shapes agree")
    }
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let mut t = Tensor::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            t.set(r, c, m[(r, c)]);
        }
    }
    t
}

/// Seeded randomized truncated SVD. The returned rank is `rank` capped by
/// the numerical rank of `a`.
pub fn randomized_svd(a: &SparseMatrix, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    let (m, n) = (a.n_rows(), a.n_cols());
    if rank == 0 || m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot factorise a {m}×{n} matrix at rank {rank}"
        )));
    }
    let sketch = (rank + OVERSAMPLING).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, sketch, |_, _| StandardNormal.sample(&mut rng));
    let mut q = mul_dense(a, &omega).qr().q();
    for _ in 0..POWER_ITERATIONS {
        let z = transpose_mul_dense(a, &q).qr().q();
        q = mul_dense(a, &z).qr().q();
    }
    // B = Qᵀ A, computed as (Aᵀ Q)ᵀ
    let b = transpose_mul_dense(a, &q).transpose();
    let svd = b.svd(true, true);
    let (ub, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let attainable = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE))
        .count();
    let kept = rank.min(attainable);
    if kept < rank {
        log::warn!("requested rank {rank} exceeds attainable rank {attainable}; using {kept}");
    }
    if kept == 0 {
        return Err(Error::InvalidArgument("matrix is numerically zero".into()));
    }
    let u_full = &q * ub;
    let u = DMatrix::from_fn(m, kept, |r, c| u_full[(r, order[c])]);
    let vt = DMatrix::from_fn(kept, n, |r, c| vt[(order[r], c)]);
    Ok(TruncatedSvd {
        u: to_tensor(&u),
        singular_values: order[..kept]
            .iter()
            .map(|&i| svd.singular_values[i])
            .collect(),
        vt: to_tensor(&vt),
    })
}

/// `m_v = U_v Σ^{1/2}`, rescaled so non-zero rows have mean L2 norm 1.
pub fn build_svd_embeddings(
    sessions: &[&Session],
    n_tracks: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if dim == 0 || dim > n_tracks {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {dim} must lie in [1, {n_tracks}]"
        )));
    }
    let ppmi = cooccurrence_ppmi(sessions, n_tracks);
    let svd = randomized_svd(&ppmi, dim, seed)?;
    let mut values = svd.u.clone();
    for r in 0..values.rows() {
        for (c, s) in svd.singular_values.iter().enumerate() {
            values.set(r, c, values.get(r, c) * s.sqrt());
        }
    }
    let norms: Vec<f64> = (0..values.rows())
        .map(|r| values.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt())
        .filter(|&n| n > 0.0)
        .collect();
    if !norms.is_empty() {
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        values.scale_assign(1.0 / mean);
    }
    Ok(EmbeddingMatrix::new(EmbeddingKind::Svd, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::cosine;

    fn toy_sessions() -> Vec<Session> {
        // tracks 0 and 1 always together, 2 never with 0
        let mut out = Vec::new();
        for i in 0..20 {
            let tracks = match i % 4 {
                0 => vec![0, 1, 3],
                1 => vec![0, 1, 4],
                2 => vec![2, 3, 5],
                _ => vec![2, 4, 5],
            };
            out.push(Session::new(i, tracks));
        }
        out
    }

    #[test]
    fn cooccurring_pair_is_closer() {
        let sessions = toy_sessions();
        let refs: Vec<&Session> = sessions.iter().collect();
        let m = build_svd_embeddings(&refs, 6, 3, 5).unwrap();
        let ab = cosine(m.row(0), m.row(1));
        let ac = cosine(m.row(0), m.row(2));
        assert!(ab > ac, "cos(a,b)={ab} cos(a,c)={ac}");
        let ab_dot = crate::numerics::dot(m.row(0), m.row(1));
        let ac_dot = crate::numerics::dot(m.row(0), m.row(2));
        assert!(ab_dot > ac_dot);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let rows = vec![
            vec![(0, 2.0), (1, 1.0)],
            vec![(0, 1.0), (2, 3.0)],
            vec![(1, 0.5), (3, 1.0), (4, 2.0)],
            vec![(2, 1.0), (3, 4.0)],
            vec![(0, 1.0), (4, 1.0)],
        ];
        let a = SparseMatrix::from_rows(5, rows);
        let dense = a.to_dense();
        let svd = randomized_svd(&a, 5, 1).unwrap();
        let rec = svd.reconstruct();
        let mut diff = rec.clone();
        for (d, x) in diff.data_mut().iter_mut().zip(dense.data()) {
            *d -= x;
        }
        assert!(diff.frobenius_norm() / dense.frobenius_norm() < 1e-6);
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_is_capped_by_matrix_rank() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)], vec![]];
        let a = SparseMatrix::from_rows(3, rows);
        let svd = randomized_svd(&a, 3, 0).unwrap();
        assert_eq!(svd.singular_values.len(), 1);
    }

    #[test]
    fn seed_deterministic_and_mean_norm_one() {
        let sessions = toy_sessions();
        let refs: Vec<&Session> = sessions.iter().collect();
        let a = build_svd_embeddings(&refs, 6, 3, 9).unwrap();
        let b = build_svd_embeddings(&refs, 6, 3, 9).unwrap();
        assert_eq!(a, b);
        let mean: f64 = (0..6)
            .map(|r| a.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / 6.0;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ppmi_is_symmetric_and_nonnegative() {
        let sessions = toy_sessions();
        let refs: Vec<&Session> = sessions.iter().collect();
        let p = cooccurrence_ppmi(&refs, 6).to_dense();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(p.get(i, j), p.get(j, i));
                assert!(p.get(i, j) >= 0.0);
            }
        }
    }
}
