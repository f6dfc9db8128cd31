use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reacta::model::{
    attention_weights, encode_audio, predict_activation, session_embedding, stack_rows, user_embedding, Model,
    ModelConfig, ModelFamily,
};
use reacta::numerics::{check_gradients, forward_backward, AdamState, Graph, ParamStore, Tensor, Var};
use reacta::Result;

fn config(d: usize, blocks: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        family: ModelFamily::Reacta,
        d,
        d_audio: 6,
        window: 4,
        blocks,
        heads,
        n_users: 3,
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::glorot(rows, cols, rng)
}

/// Nonnegative `[BL, SPR, P]` rows with BL summing to one, like real
/// activation rows.
fn components(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(n, 3, rng).map(f64::abs);
    let z: f64 = (0..n).map(|r| t.get(r, 0)).sum();
    for r in 0..n {
        t.set(r, 0, t.get(r, 0) / z);
    }
    t
}

/// Random-init model with every zero-initialised tensor perturbed, so no
/// gradient path is trivially dead.
fn perturbed_model(cfg: ModelConfig, seed: u64) -> Model {
    let mut model = Model::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let names: Vec<String> = model.params().iter().map(|(_, n, _)| n.to_string()).collect();
    for name in names {
        let t = model.param(&name).unwrap().clone();
        let noise = random(t.rows(), t.cols(), &mut rng);
        let mut v = t.clone();
        for (x, e) in v.data_mut().iter_mut().zip(noise.data()) {
            *x += 0.3 * e;
        }
        model.set_param(&name, v).unwrap();
    }
    model
}

struct Fixture {
    sessions: Vec<(Tensor, Tensor)>,
    audio: Tensor,
    target: Tensor,
}

fn fixture(d: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions = [3, 2, 4]
        .into_iter()
        .map(|n| (components(n, &mut rng), random(n, d, &mut rng)))
        .collect();
    Fixture {
        sessions,
        audio: random(3, 6, &mut rng),
        target: random(3, 2, &mut rng).map(f64::abs),
    }
}

/// Session attention → transformer → β mix → encoder → predictor, ending
/// in a squared error; touches every parameter group.
fn pipeline_loss(cfg: &ModelConfig, fx: &Fixture, g: &mut Graph, params: &ParamStore) -> Result<Var> {
    let model = Model::from_params(cfg.clone(), params.clone())?;
    let mut b = model.bind(g);
    let rows = fx
        .sessions
        .iter()
        .map(|(c, m)| session_embedding(g, &b, c, m))
        .collect::<Result<Vec<_>>>()?;
    let stacked = stack_rows(g, &rows);
    let user = user_embedding(g, &b, stacked, 1)?;
    let a = g.constant(fx.audio.clone());
    let encoded = encode_audio(g, &mut b, a)?;
    let predicted = predict_activation(g, &mut b, encoded, user.vector)?;
    let t = g.constant(fx.target.clone());
    let err = g.squared_error(predicted, t);
    let long = g.mul(user.long, user.long);
    let long = g.sum(long);
    Ok(g.add(err, long))
}

#[test]
fn full_forward_pass_gradients_match_finite_differences() {
    for (seed, (blocks, heads)) in [(1, 1), (1, 2), (2, 2)].into_iter().enumerate() {
        let cfg = config(8, blocks, heads);
        let model = perturbed_model(cfg.clone(), seed as u64);
        let fx = fixture(8, seed as u64);
        let report = check_gradients(model.params(), |g, p| pipeline_loss(&cfg, &fx, g, p), 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "B{blocks} H{heads}: {:?}", report.per_param);
    }
}

#[test]
fn predictor_overfits_five_pairs() {
    let cfg = config(8, 1, 1);
    let mut model = Model::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let encoded = random(5, 8, &mut rng);
    let users = random(5, 8, &mut rng);
    let targets = Tensor::from_rows(&[
        vec![0.2, 0.5],
        vec![0.7, 0.1],
        vec![0.5, 1.2],
        vec![0.9, 0.3],
        vec![0.1, 0.8],
    ])
    .unwrap();
    let loss = |g: &mut Graph, p: &ParamStore| -> Result<Var> {
        let model = Model::from_params(cfg.clone(), p.clone())?;
        let mut b = model.bind(g);
        let mut total: Option<Var> = None;
        for i in 0..5 {
            let f = g.constant(encoded.select_rows(&[i]));
            let u = g.constant(users.select_rows(&[i]));
            let out = predict_activation(g, &mut b, f, u)?;
            let t = g.constant(targets.select_rows(&[i]));
            let e = g.squared_error(out, t);
            total = Some(match total {
                Some(acc) => g.add(acc, e),
                None => e,
            });
        }
        Ok(total.unwrap())
    };
    let mut params = model.params().clone();
    let mut adam = AdamState::new(&params, 0.01);
    let mut sse = f64::INFINITY;
    for _ in 0..3000 {
        let (value, grads) = forward_backward(&params, loss).unwrap();
        sse = value;
        if sse / 10.0 < 1e-4 {
            break;
        }
        adam.step(&mut params, &grads).unwrap();
    }
    assert!(sse / 10.0 < 1e-3, "mse {}", sse / 10.0);
    // only predictor parameters moved
    for (id, name, value) in params.iter() {
        if !name.starts_with("pred.") {
            assert_eq!(value, model.params().get(id), "{name} changed");
        }
    }
    *model.params_mut() = params;
    let predicted = model.predict(&encoded.select_rows(&[2]), users.row_slice(2)).unwrap();
    assert!((predicted.get(0, 0) - 0.5).abs() < 0.05);
}

#[test]
fn checkpoint_reload_gives_identical_user_vectors() {
    let cfg = config(8, 2, 2);
    let model = perturbed_model(cfg.clone(), 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path, serde_json::json!({"best_epoch": 3})).unwrap();
    let (loaded, extra) = Model::load(&path).unwrap();
    assert_eq!(extra["best_epoch"], 3);
    assert_eq!(loaded.config(), model.config());
    let fx = fixture(8, 9);
    let embed = |m: &Model| {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let rows: Vec<Var> = fx
            .sessions
            .iter()
            .map(|(c, e)| session_embedding(&mut g, &b, c, e).unwrap())
            .collect();
        let s = stack_rows(&mut g, &rows);
        let u = user_embedding(&mut g, &b, s, 2).unwrap();
        g.value(u.vector).data().to_vec()
    };
    assert_eq!(embed(&model), embed(&loaded));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_a_distribution(
        w in prop::collection::vec(-5.0..5.0f64, 3),
        raw in prop::collection::vec(-2.0..2.0f64, 3..30),
    ) {
        let n = raw.len() / 3;
        let comps = Tensor::from_vec(n, 3, raw[..3 * n].to_vec()).unwrap();
        let mut model = Model::new(config(4, 1, 1), 0).unwrap();
        model.set_param("mix.w", Tensor::row(&w)).unwrap();
        let a = attention_weights(&model, &comps).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|&x| x >= 0.0 && x.is_finite()));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_stays_inside_the_unit_interval(seed in any::<u64>(), l in 1..5usize, user in 0..3usize) {
        let cfg = config(8, 2, 2);
        let model = perturbed_model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let rows: Vec<Var> = (0..l)
            .map(|_| {
                let n = 2;
                session_embedding(&mut g, &b, &components(n, &mut rng), &random(n, 8, &mut rng)).unwrap()
            })
            .collect();
        let s = stack_rows(&mut g, &rows);
        let u = user_embedding(&mut g, &b, s, user).unwrap();
        let beta = g.scalar(u.beta);
        prop_assert!(beta > 0.0 && beta < 1.0);
        // the mixture lies on the segment between its two parts
        let (v, short, long) = (g.value(u.vector), g.value(u.short), g.value(u.long));
        for k in 0..8 {
            let expect = beta * short.get(0, k) + (1.0 - beta) * long.get(0, k);
            prop_assert!((v.get(0, k) - expect).abs() < 1e-12);
        }
    }
}
