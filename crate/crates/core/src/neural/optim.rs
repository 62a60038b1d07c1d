use serde::{Deserialize, Serialize};

use super::model::SequenceModel;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &SequenceModel) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.1.len()).collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update with decoupled weight decay. Decay applies to weight
/// matrices and vectors only, never to biases.
pub fn adam_step(
    model: &mut SequenceModel,
    grads: &SequenceModel,
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let grad_tensors = grads.tensors();
    for (k, (_, p, decay)) in model.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[k].1;
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            if decay {
                p[i] -= learning_rate * weight_decay * p[i];
            }
            p[i] -= learning_rate * update;
        }
    }
}
