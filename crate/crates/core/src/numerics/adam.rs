use super::graph::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moment buffers mirror the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient entry are treated as
    /// having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "{} parameters vs {} moment buffers",
                    params.len(),
                    self.first.len()
                ),
            });
        }
        for id in 0..params.len() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        detail: format!(
                            "gradient {:?} for parameter {} of shape {:?}",
                            g.shape(),
                            params.name(id),
                            params.get(id).shape()
                        ),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in 0..params.len() {
            let m = self.first[id].data_mut();
            let v = self.second[id].data_mut();
            let p = params.get_mut(id).data_mut();
            let g = grads.get(id).map(Tensor::data);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
