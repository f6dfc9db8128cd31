use proptest::prelude::*;

use reacta::actr::{
    base_level, base_level_raw, build_activation_table, build_correlation, spreading, ListenHistory,
};
use reacta::corpus::{Session, SessionSequence};
use reacta::embeddings::{EmbeddingKind, EmbeddingMatrix};
use reacta::numerics::Tensor;

const N_TRACKS: usize = 9;

fn arb_sequences() -> impl Strategy<Value = Vec<SessionSequence>> {
    let session = (prop::collection::btree_set(0..N_TRACKS, 1..5), 60..50_000i64);
    let user = prop::collection::vec(session, 2..7);
    prop::collection::vec(user, 1..4).prop_map(|users| {
        users
            .into_iter()
            .enumerate()
            .map(|(u, sessions)| {
                let mut t = 0;
                let sessions = sessions
                    .into_iter()
                    .map(|(tracks, gap)| {
                        t += gap;
                        Session::new(t, tracks.into_iter().collect())
                    })
                    .collect();
                SessionSequence {
                    user_index: u,
                    user_id: format!("u{u}"),
                    sessions,
                }
            })
            .collect()
    })
}

fn arb_embeddings() -> impl Strategy<Value = EmbeddingMatrix> {
    prop::collection::vec(-1.0..1.0f64, N_TRACKS * 3).prop_map(|v| {
        EmbeddingMatrix::new(EmbeddingKind::Svd, Tensor::from_vec(N_TRACKS, 3, v).unwrap())
    })
}

/// Dense `F`, `D` and `C` from the definition.
fn dense_correlation(sequences: &[SessionSequence]) -> Vec<Vec<f64>> {
    let mut f = vec![vec![0.0; N_TRACKS]; N_TRACKS];
    for seq in sequences {
        for w in seq.sessions.windows(2) {
            for &i in &w[1].tracks {
                for &j in &w[0].tracks {
                    f[i][j] += 1.0;
                }
            }
        }
    }
    let d: Vec<f64> = f.iter().map(|r| r.iter().sum()).collect();
    (0..N_TRACKS)
        .map(|i| {
            (0..N_TRACKS)
                .map(|j| if d[i] > 0.0 && d[j] > 0.0 { f[i][j] / (d[i] * d[j]).sqrt() } else { 0.0 })
                .collect()
        })
        .collect()
}

fn with_sessions(seq: &SessionSequence, sessions: Vec<Session>) -> SessionSequence {
    SessionSequence {
        user_index: seq.user_index,
        user_id: seq.user_id.clone(),
        sessions,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn table_matches_dense_definition(sequences in arb_sequences(), m in arb_embeddings(), decay in 0.2..1.5f64) {
        let refs: Vec<&[Session]> = sequences.iter().map(|s| s.sessions.as_slice()).collect();
        let c = build_correlation(&refs, N_TRACKS);
        let table = build_activation_table(&sequences, &m, &c, decay).unwrap();
        let dense = dense_correlation(&sequences);
        for seq in &sequences {
            for (l, session) in seq.sessions.iter().enumerate() {
                let raw: Vec<f64> = session
                    .tracks
                    .iter()
                    .map(|&v| {
                        seq.sessions[..l]
                            .iter()
                            .filter(|s| s.contains(v))
                            .map(|s| ((session.start_time - s.start_time) as f64).powf(-decay))
                            .sum()
                    })
                    .collect();
                let z: f64 = raw.iter().map(|x| x.exp()).sum();
                let rows = table.session(seq.user_index, l);
                prop_assert_eq!(rows.len(), session.len());
                for (i, row) in rows.iter().enumerate() {
                    let v = session.tracks[i];
                    prop_assert_eq!(row.track, v);
                    prop_assert!((row.base_level - raw[i].exp() / z).abs() < 1e-12);
                    let (spr, p) = if l == 0 {
                        (0.0, 0.0)
                    } else {
                        let prev = &seq.sessions[l - 1].tracks;
                        (
                            prev.iter().map(|&o| dense[o][v]).sum::<f64>(),
                            prev.iter()
                                .map(|&o| (0..3).map(|k| m.row(v)[k] * m.row(o)[k]).sum::<f64>())
                                .sum::<f64>(),
                        )
                    };
                    prop_assert!((row.spreading - spr).abs() < 1e-12);
                    prop_assert!((row.partial_matching - p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn later_sessions_do_not_change_earlier_rows(
        sequences in arb_sequences(),
        m in arb_embeddings(),
        cut in 1..6usize,
        replacement in prop::collection::btree_set(0..N_TRACKS, 1..4),
    ) {
        let refs: Vec<&[Session]> = sequences.iter().map(|s| s.sessions.as_slice()).collect();
        let c = build_correlation(&refs, N_TRACKS);
        let before = build_activation_table(&sequences, &m, &c, 0.5).unwrap();
        let seq = &sequences[0];
        let cut = cut.min(seq.sessions.len() - 1);
        let mut sessions = seq.sessions[..=cut].to_vec();
        let last = sessions.last().unwrap().start_time;
        sessions.push(Session::new(last + 7, replacement.into_iter().collect()));
        let mut altered = sequences.clone();
        altered[0] = with_sessions(seq, sessions);
        let after = build_activation_table(&altered, &m, &c, 0.5).unwrap();
        for l in 0..=cut {
            prop_assert_eq!(before.session(0, l), after.session(0, l));
        }
    }

    #[test]
    fn extra_or_more_recent_listen_raises_base_level(
        times in prop::collection::btree_set(1..10_000i64, 1..6),
        extra in 1..10_000i64,
        decay in 0.1..2.0f64,
    ) {
        let at = 10_001;
        let mut h = ListenHistory::new();
        for &t in &times {
            h.record(0, t);
        }
        let base = base_level_raw(&h, 0, at, decay).unwrap();
        if !times.contains(&extra) {
            let mut more = h.clone();
            more.record(0, extra);
            prop_assert!(base_level_raw(&more, 0, at, decay).unwrap() > base);
        }
        // moving the oldest listen later never lowers the activation
        let oldest = *times.iter().next().unwrap();
        let newest = *times.iter().last().unwrap();
        if oldest < newest {
            let mut shifted = ListenHistory::new();
            for &t in times.iter().skip(1) {
                shifted.record(0, t);
            }
            shifted.record(0, (oldest + newest) / 2 + 1);
            if !times.contains(&((oldest + newest) / 2 + 1)) {
                prop_assert!(base_level_raw(&shifted, 0, at, decay).unwrap() > base);
            }
        }
    }

    #[test]
    fn base_level_is_a_distribution_ranked_by_raw_activation(
        listens in prop::collection::vec((0..6usize, 1..1_000i64), 0..20),
    ) {
        let mut h = ListenHistory::new();
        for &(v, t) in &listens {
            h.record(v, t);
        }
        let tracks: Vec<usize> = (0..6).collect();
        let bl = base_level(&h, &tracks, 1_000, 0.5).unwrap();
        prop_assert!((bl.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let raw: Vec<f64> = tracks.iter().map(|&v| base_level_raw(&h, v, 1_000, 0.5).unwrap()).collect();
        for a in 0..6 {
            for b in 0..6 {
                if raw[a] > raw[b] {
                    prop_assert!(bl[a] > bl[b]);
                }
            }
        }
    }

    #[test]
    fn spreading_is_additive_over_disjoint_sources(
        sequences in arb_sequences(),
        split in prop::collection::vec(any::<bool>(), N_TRACKS),
        target in 0..N_TRACKS,
    ) {
        let refs: Vec<&[Session]> = sequences.iter().map(|s| s.sessions.as_slice()).collect();
        let c = build_correlation(&refs, N_TRACKS);
        let a: Vec<usize> = (0..N_TRACKS).filter(|&v| split[v]).collect();
        let b: Vec<usize> = (0..N_TRACKS).filter(|&v| !split[v]).collect();
        let all = Session::new(0, (0..N_TRACKS).collect());
        let sa = Session::new(0, a);
        let sb = Session::new(0, b);
        let sum = spreading(&c, Some(&sa), target) + spreading(&c, Some(&sb), target);
        prop_assert!((spreading(&c, Some(&all), target) - sum).abs() < 1e-12);
        let spread = c.spread_all(&all.tracks);
        prop_assert!((spread[target] - spreading(&c, Some(&all), target)).abs() < 1e-12);
    }
}
