use crate::numerics::{Graph, Var};

/// `λ·Σ_{v,v'} softplus(−(m_u·m_v − m_u·m_v')) + (1 − λ)·(1 − m_u·m_s)`,
/// pairing every positive row with every negative row.
pub fn loss_pisa(g: &mut Graph, user: Var, positives: Var, negatives: Var, target_session: Var, lambda: f64) -> Var {
    let mut terms = Vec::with_capacity(2);
    if lambda > 0.0 {
        let ut = g.transpose(user);
        let sp = g.matmul(positives, ut);
        let sn = g.matmul(negatives, ut);
        let snt = g.transpose(sn);
        let diff = g.sub(sp, snt);
        let margin = g.neg(diff);
        let sp = g.softplus(margin);
        let rank = g.sum(sp);
        terms.push(g.scale(rank, lambda));
    }
    if lambda < 1.0 {
        let prod = g.mul(user, target_session);
        let align = g.sum(prod);
        // (1 − λ)(1 − x) = −(1 − λ)x + (1 − λ)
        terms.push(g.affine(align, -(1.0 - lambda), 1.0 - lambda));
    }
    match terms.as_slice() {
        [one] => *one,
        [a, b] => g.add(*a, *b),
        _ => unreachable!("λ lies in [0, 1]"),
    }
}

/// `Σ_{v,v'} softplus(−(f(a_v)·m_v − f(a_v)·m_v'))` over encoded positives
/// `n × d`, their collaborative rows `n × d` and negative rows `k × d`.
pub fn loss_enc(g: &mut Graph, encoded: Var, positives: Var, negatives: Var) -> Var {
    let prod = g.mul(encoded, positives);
    let sp = g.row_sum(prod);
    let nt = g.transpose(negatives);
    let sn = g.matmul(encoded, nt);
    let diff = g.sub(sp, sn);
    let margin = g.neg(diff);
    let s = g.softplus(margin);
    g.sum(s)
}

/// `Σ ‖ĝ_v − [BL_v; SPR_v]‖²` over target tracks.
pub fn loss_actr(g: &mut Graph, predicted: Var, target: Var) -> Var {
    g.squared_error(predicted, target)
}
