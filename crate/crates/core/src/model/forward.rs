use super::{Bound, Model};
use crate::actr::ActivationRow;
use crate::corpus::UserIndex;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Below this total raw attention mass, a session falls back to uniform
/// weights.
pub const ATTENTION_FLOOR: f64 = 1e-12;

/// `n × 3` component matrix `[BL, SPR, P]` of a session.
pub fn components(rows: &[ActivationRow]) -> Tensor {
    let mut t = Tensor::zeros(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        t.set(i, 0, r.base_level);
        t.set(i, 1, r.spreading);
        t.set(i, 2, r.partial_matching);
    }
    t
}

fn attention(g: &mut Graph, b: &Bound, components: &Tensor) -> Result<Var> {
    let n = components.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty session".into()));
    }
    if components.cols() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            found: components.cols(),
        });
    }
    let c = g.constant(components.clone());
    let w = g.softplus(b.mix_w);
    let wt = g.transpose(w);
    let raw = g.matmul(c, wt);
    let raw = g.relu(raw);
    let total = g.sum(raw);
    if g.scalar(total) <= ATTENTION_FLOOR {
        return Ok(g.constant(Tensor::filled(n, 1, 1.0 / n as f64)));
    }
    Ok(g.div(raw, total))
}

/// Attention-weighted mean of the session's collaborative rows, `1 × d`.
/// Weights are the clamped mixture `w·[BL, SPR, P]`, normalised to sum to 1.
pub fn session_embedding(g: &mut Graph, b: &Bound, components: &Tensor, m_rows: &Tensor) -> Result<Var> {
    if m_rows.rows() != components.rows() {
        return Err(Error::Shape {
            op: "session_embedding",
            detail: format!("{} component rows, {} embedding rows", components.rows(), m_rows.rows()),
        });
    }
    let weights = attention(g, b, components)?;
    let wt = g.transpose(weights);
    let m = g.constant(m_rows.clone());
    Ok(g.matmul(wt, m))
}

/// Session embedding straight from activation rows.
pub fn session_from_rows(
    g: &mut Graph,
    b: &Bound,
    m: &EmbeddingMatrix,
    rows: &[ActivationRow],
) -> Result<Var> {
    let tracks: Vec<usize> = rows.iter().map(|r| r.track).collect();
    session_embedding(g, b, &components(rows), &m.matrix().select_rows(&tracks))
}

/// Attention weights of one session under `model`'s mixture.
pub fn attention_weights(model: &Model, components: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let w = attention(&mut g, &b, components)?;
    Ok(g.value(w).data().to_vec())
}

/// Stacks `1 × c` rows into an `n × c` node.
pub fn stack_rows(g: &mut Graph, rows: &[Var]) -> Var {
    let cols: Vec<Var> = rows.iter().map(|&r| g.transpose(r)).collect();
    let t = g.concat_cols(&cols);
    g.transpose(t)
}

pub struct UserEmbedding {
    /// `β·m_short + (1 − β)·m_long`, `1 × d`.
    pub vector: Var,
    pub short: Var,
    pub long: Var,
    /// Mixing coefficient, `1 × 1`.
    pub beta: Var,
}

/// User embedding from the `l × d` sequence of observed session embeddings
/// (oldest first). The short-term part is the causal transformer's output
/// at the last position.
pub fn user_embedding(g: &mut Graph, b: &Bound, sessions: Var, user: UserIndex) -> Result<UserEmbedding> {
    let config = b.model.config();
    let [l, d] = g.shape(sessions);
    if l == 0 || l > config.window {
        return Err(Error::InvalidArgument(format!(
            "need 1..={} observed sessions, got {l}",
            config.window
        )));
    }
    if d != config.d {
        return Err(Error::Dimension {
            expected: config.d,
            found: d,
        });
    }
    if user >= config.n_users {
        return Err(Error::InvalidArgument(format!(
            "user index {user} outside 0..{}",
            config.n_users
        )));
    }
    let params = b.model.params();
    let ids = b.model.ids();
    let positions: Vec<usize> = (0..l).collect();
    let pos = g.param_rows(params, ids.pos, &positions);
    let mut x = g.add(sessions, pos);

    let heads = config.heads;
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for blk in &b.blocks {
        let q = g.matmul(x, blk.wq);
        let k = g.matmul(x, blk.wk);
        let v = g.matmul(x, blk.wv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, s, e);
            let kh = g.slice_cols(k, s, e);
            let vh = g.slice_cols(v, s, e);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, inv_sqrt);
            let a = g.softmax_rows(scores, true);
            outs.push(g.matmul(a, vh));
        }
        let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        let attn = g.matmul(o, blk.wo);
        let res = g.add(x, attn);
        x = g.layer_norm_rows(res, blk.ln1_g, blk.ln1_b);

        let h1 = g.matmul(x, blk.w1);
        let h1 = g.add(h1, blk.b1);
        let h1 = g.relu(h1);
        let f = g.matmul(h1, blk.w2);
        let f = g.add(f, blk.b2);
        let res = g.add(x, f);
        x = g.layer_norm_rows(res, blk.ln2_g, blk.ln2_b);
    }

    let short = g.slice_rows(x, l - 1, l);
    let long = g.param_rows(params, ids.user_long, &[user]);
    let cat = g.concat_cols(&[short, long]);
    let logit = g.matmul(cat, b.beta_w);
    let logit = g.add(logit, b.beta_b);
    let beta = g.sigmoid(logit);
    let rest = g.affine(beta, -1.0, 1.0);
    let a = g.mul(short, beta);
    let c = g.mul(long, rest);
    let vector = g.add(a, c);
    Ok(UserEmbedding {
        vector,
        short,
        long,
        beta,
    })
}

/// User embedding from the activation rows of the observed sessions.
pub fn observed_user_embedding(
    g: &mut Graph,
    b: &Bound,
    m: &EmbeddingMatrix,
    sessions: &[&[ActivationRow]],
    user: UserIndex,
) -> Result<UserEmbedding> {
    let rows = sessions
        .iter()
        .map(|rows| session_from_rows(g, b, m, rows))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no observed session".into()));
    }
    let stacked = stack_rows(g, &rows);
    user_embedding(g, b, stacked, user)
}

/// `f(a) = relu(a W1 + b1) W2 + b2`, row-wise over `n × d'`.
pub fn encode_audio(g: &mut Graph, b: &mut Bound, audio: Var) -> Result<Var> {
    let expected = b.model.config().d_audio;
    let found = g.shape(audio)[1];
    if found != expected {
        return Err(Error::Dimension { expected, found });
    }
    let [w1, b1, w2, b2] = b.encoder(g);
    let h = g.matmul(audio, w1);
    let h = g.add(h, b1);
    let h = g.relu(h);
    let o = g.matmul(h, w2);
    Ok(g.add(o, b2))
}

/// `g([f(a_v); m_u])` for each of the `n` rows of `encoded`, giving `n × 2`
/// columns `(sigmoid BL̂, softplus SPR̂)`.
pub fn predict_activation(g: &mut Graph, b: &mut Bound, encoded: Var, user: Var) -> Result<Var> {
    let d = b.model.config().d;
    let [n, fd] = g.shape(encoded);
    if fd != d || g.shape(user) != [1, d] {
        return Err(Error::Shape {
            op: "predict_activation",
            detail: format!("encoded {:?}, user {:?}, d = {d}", g.shape(encoded), g.shape(user)),
        });
    }
    let [w1, b1, w2, b2] = b.predictor(g);
    let u = g.repeat_rows(user, n);
    let x = g.concat_cols(&[encoded, u]);
    let h = g.matmul(x, w1);
    let h = g.add(h, b1);
    let h = g.relu(h);
    let o = g.matmul(h, w2);
    let o = g.add(o, b2);
    let bl = g.slice_cols(o, 0, 1);
    let bl = g.sigmoid(bl);
    let spr = g.slice_cols(o, 1, 2);
    let spr = g.softplus(spr);
    Ok(g.concat_cols(&[bl, spr]))
}

impl Model {
    /// Encoded audio rows, `n × d`.
    pub fn encode(&self, audio: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = self.bind(&mut g);
        let a = g.constant(audio.clone());
        let out = encode_audio(&mut g, &mut b, a)?;
        g.check_finite()?;
        Ok(g.value(out).clone())
    }

    /// Predicted `(BL̂, SPR̂)` rows for encoded tracks under user vector `m_u`.
    pub fn predict(&self, encoded: &Tensor, user: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = self.bind(&mut g);
        let f = g.constant(encoded.clone());
        let u = g.constant(Tensor::row(user));
        let out = predict_activation(&mut g, &mut b, f, u)?;
        g.check_finite()?;
        Ok(g.value(out).clone())
    }

    /// `m_u` from the observed sessions' activation rows, plus `β`.
    pub fn user_vector(
        &self,
        m: &EmbeddingMatrix,
        sessions: &[&[ActivationRow]],
        user: UserIndex,
    ) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let ue = observed_user_embedding(&mut g, &b, m, sessions, user)?;
        g.check_finite()?;
        Ok((g.value(ue.vector).data().to_vec(), g.scalar(ue.beta)))
    }
}
