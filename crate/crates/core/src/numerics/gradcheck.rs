use serde::Serialize;

use super::graph::{Gradients, Graph, ParamStore, Var};
use crate::error::Result;

/// Floor on the denominator of the relative error, so that entries whose
/// true gradient is zero are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Evaluates a scalar loss and its reverse-mode gradients.
pub fn forward_backward<F>(params: &ParamStore, loss_fn: F) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = loss_fn(&mut graph, params)?;
    let grads = graph.backward(loss, params.len())?;
    Ok((graph.scalar(loss), grads))
}

fn evaluate<F>(params: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = loss_fn(&mut graph, params)?;
    graph.check_finite()?;
    Ok(graph.scalar(loss))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Reverse-mode gradients against central differences with step `h`.
pub fn check_gradients<F>(
    params: &ParamStore,
    loss_fn: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let (_, grads) = forward_backward(params, &loss_fn)?;
    compare_gradients(params, &grads, loss_fn, h, tolerance)
}

/// Compares caller-supplied gradients against central differences.
pub fn compare_gradients<F>(
    params: &ParamStore,
    analytic: &Gradients,
    loss_fn: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (id, name, tensor) in params.iter() {
        let mut worst = 0.0f64;
        let mut worst_index = 0;
        for i in 0..tensor.len() {
            let original = tensor.data()[i];
            probe.get_mut(id).data_mut()[i] = original + h;
            let plus = evaluate(&probe, &loss_fn)?;
            probe.get_mut(id).data_mut()[i] = original - h;
            let minus = evaluate(&probe, &loss_fn)?;
            probe.get_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            if err > worst {
                worst = err;
                worst_index = i;
            }
        }
        overall = overall.max(worst);
        per_param.push(ParamCheck {
            name: name.to_string(),
            max_relative_error: worst,
            worst_index,
        });
    }
    Ok(GradCheckReport {
        per_param,
        max_relative_error: overall,
        tolerance,
    })
}
