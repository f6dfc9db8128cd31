use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reacta::numerics::{
    check_gradients, forward_backward, load_checkpoint, save_checkpoint, softmax, AdamState, Graph, ParamStore,
    Tensor,
};
use reacta::Result;

const D: usize = 5;

fn random_params(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    p.add("x", Tensor::glorot(3, D, &mut rng));
    for name in ["w1", "w2", "w3"] {
        p.add(name, Tensor::glorot(D, D, &mut rng));
    }
    p.add("gain", Tensor::glorot(1, D, &mut rng));
    p.add("bias", Tensor::glorot(1, D, &mut rng));
    p
}

/// Three dense layers with tanh, sigmoid and softplus activations.
fn three_layer_loss(g: &mut Graph, p: &ParamStore) -> Result<reacta::numerics::Var> {
    let mut h = g.param(p, p.id("x").unwrap());
    for (name, act) in [("w1", 0), ("w2", 1), ("w3", 2)] {
        let w = g.param(p, p.id(name).unwrap());
        h = g.matmul(h, w);
        h = match act {
            0 => g.tanh(h),
            1 => g.sigmoid(h),
            _ => g.softplus(h),
        };
    }
    let target = g.constant(Tensor::filled(3, D, 0.3));
    Ok(g.squared_error(h, target))
}

/// tanh → layer norm → causal self-attention → softplus, then a squared
/// error against a fixed target.
fn attention_block_loss(g: &mut Graph, p: &ParamStore) -> Result<reacta::numerics::Var> {
    let id = |n: &str| p.id(n).unwrap();
    let x = g.param(p, id("x"));
    let w1 = g.param(p, id("w1"));
    let w2 = g.param(p, id("w2"));
    let w3 = g.param(p, id("w3"));
    let gain = g.param(p, id("gain"));
    let bias = g.param(p, id("bias"));
    let h = g.matmul(x, w1);
    let h = g.tanh(h);
    let h = g.layer_norm_rows(h, gain, bias);
    let q = g.matmul(h, w2);
    let ht = g.transpose(h);
    let scores = g.matmul(q, ht);
    let attn = g.softmax_rows(scores, true);
    let h = g.matmul(attn, h);
    let h = g.matmul(h, w3);
    let h = g.softplus(h);
    let target = g.constant(Tensor::filled(3, D, 0.3));
    Ok(g.squared_error(h, target))
}

#[test]
fn three_layer_composition_matches_finite_differences() {
    for seed in 0..10 {
        let params = random_params(seed);
        let report = check_gradients(&params, three_layer_loss, 1e-3, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.per_param);
    }
}

#[test]
fn attention_block_matches_finite_differences() {
    // layer norm has enough curvature that h = 1e-3 truncation dominates
    for seed in 0..10 {
        let params = random_params(seed);
        let report = check_gradients(&params, attention_block_loss, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.per_param);
    }
}

#[test]
fn gradient_check_catches_a_wrong_gradient() {
    let params = random_params(3);
    let (_, mut grads) = forward_backward(&params, attention_block_loss).unwrap();
    let w2 = params.id("w2").unwrap();
    let g = grads.get_mut(w2).unwrap();
    g.data_mut()[0] = g.data()[0] * 1.5 + 1e-2;
    let report = reacta::numerics::compare_gradients(&params, &grads, attention_block_loss, 1e-5, 1e-4).unwrap();
    assert!(!report.passed());
}

#[test]
fn adam_on_square_shrinks_monotonically() {
    let mut params = ParamStore::new();
    let w = params.add("w", Tensor::scalar(1.0));
    let mut adam = AdamState::new(&params, 0.1);
    let mut trace = vec![1.0f64];
    for _ in 0..10 {
        let (_, grads) = forward_backward(&params, |g, p| {
            let w = g.param(p, w);
            let sq = g.mul(w, w);
            Ok(g.sum(sq))
        })
        .unwrap();
        adam.step(&mut params, &grads).unwrap();
        trace.push(params.get(w).item());
    }
    assert_eq!(adam.step_count(), 10);
    for t in 2..trace.len() {
        assert!(trace[t].abs() < trace[t - 1].abs(), "step {t}: {trace:?}");
    }
}

#[test]
fn checkpoint_round_trip_keeps_names_and_values() {
    let params = random_params(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&path, &params, serde_json::json!({"note": "x"})).unwrap();
    let (header, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(header.tensors.len(), params.len());
    for (id, name, value) in params.iter() {
        assert_eq!(loaded.name(id), name);
        assert_eq!(loaded.by_name(name).unwrap(), value);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        v in prop::collection::vec(-50.0..50.0f64, 1..12),
        shift in -100.0..100.0f64,
    ) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), n in 1..5usize, m in 1..5usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::glorot(n, m, &mut rng);
        let b = Tensor::glorot(m, n, &mut rng);
        let c = Tensor::glorot(n, m, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_attention_rows_ignore_the_future(seed in any::<u64>(), n in 2..6usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Tensor::glorot(n, n, &mut rng);
        let mut g = Graph::new();
        let s = g.constant(scores);
        let a = g.softmax_rows(s, true);
        let a = g.value(a);
        for r in 0..n {
            prop_assert!((a.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.row_slice(r)[r + 1..].iter().all(|&x| x == 0.0));
        }
    }
}
