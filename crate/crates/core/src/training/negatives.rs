use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TrackCatalog, TrackIndex};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Popularity,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerKind::Uniform => f.write_str("uniform"),
            SamplerKind::Popularity => f.write_str("popularity"),
        }
    }
}

/// Draws `k` distinct tracks outside a target session.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    kind: SamplerKind,
    weights: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(kind: SamplerKind, catalog: &TrackCatalog) -> Self {
        NegativeSampler {
            kind,
            weights: catalog.popularity().iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn n_tracks(&self) -> usize {
        self.weights.len()
    }

    /// Uniform: without replacement from the complement of `target`.
    /// Popularity: successive draws proportional to training popularity,
    /// renormalised after each exclusion; once the tracks with nonzero
    /// popularity are used up, the rest is filled uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, target: &[TrackIndex], k: usize, rng: &mut R) -> Result<Vec<TrackIndex>> {
        let n = self.weights.len();
        let mut excluded = vec![false; n];
        for &t in target {
            if t >= n {
                return Err(Error::InvalidArgument(format!("target track {t} outside catalog of {n}")));
            }
            excluded[t] = true;
        }
        let complement: Vec<TrackIndex> = (0..n).filter(|&v| !excluded[v]).collect();
        if complement.len() < k {
            return Err(Error::InvalidArgument(format!(
                "catalog of {n} tracks cannot supply {k} negatives outside a {}-track target",
                n - complement.len()
            )));
        }
        match self.kind {
            SamplerKind::Uniform => Ok(sample(rng, complement.len(), k)
                .into_iter()
                .map(|i| complement[i])
                .collect()),
            SamplerKind::Popularity => {
                // Exponential race: the k smallest Exp(1)/w_v are distributed
                // like k sequential weighted draws without replacement.
                let mut keyed: Vec<(f64, TrackIndex)> = Vec::new();
                let mut zero: Vec<TrackIndex> = Vec::new();
                for &v in &complement {
                    let w = self.weights[v];
                    if w > 0.0 {
                        let u: f64 = rng.random::<f64>();
                        keyed.push((-(1.0 - u).ln() / w, v));
                    } else {
                        zero.push(v);
                    }
                }
                keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut out: Vec<TrackIndex> = keyed.iter().take(k).map(|&(_, v)| v).collect();
                if out.len() < k {
                    let extra = k - out.len();
                    out.extend(sample(rng, zero.len(), extra).into_iter().map(|i| zero[i]));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn catalog(pop: Vec<u64>) -> TrackCatalog {
        let ids = (0..pop.len()).map(|i| format!("t{i:02}")).collect();
        TrackCatalog::from_ordered(ids, pop).unwrap()
    }

    #[test]
    fn forced_when_complement_has_exactly_k() {
        let cat = catalog(vec![5, 1, 0, 3, 2, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [SamplerKind::Uniform, SamplerKind::Popularity] {
            let s = NegativeSampler::new(kind, &cat);
            let mut neg = s.sample(&[0, 2, 4], 3, &mut rng).unwrap();
            neg.sort();
            assert_eq!(neg, vec![1, 3, 5]);
        }
    }

    #[test]
    fn too_small_catalog_is_an_error() {
        let cat = catalog(vec![1; 5]);
        let s = NegativeSampler::new(SamplerKind::Uniform, &cat);
        assert!(s.sample(&[0, 1], 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn negatives_are_distinct_and_outside_target() {
        let cat = catalog((0..40).map(|i| i % 7).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [SamplerKind::Uniform, SamplerKind::Popularity] {
            let s = NegativeSampler::new(kind, &cat);
            for _ in 0..50 {
                let neg = s.sample(&[1, 2, 3], 10, &mut rng).unwrap();
                let set: std::collections::HashSet<_> = neg.iter().collect();
                assert_eq!(set.len(), 10);
                assert!(neg.iter().all(|t| ![1, 2, 3].contains(t)));
            }
        }
    }
}
