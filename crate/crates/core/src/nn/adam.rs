use super::mlp::{MlpModel, ParamGrads};
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state for one model.
///
/// First and second moment buffers mirror the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over the model parameters.
///
/// Aborts with a training fault on non-finite gradients so a diverged run
/// fails loudly instead of silently corrupting the parameters.
pub fn adam_step(
    model: &mut MlpModel,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let flat_grads = grads.flatten();
    if flat_grads.len() != state.m.len() {
        return Err(Error::usage(format!(
            "gradient length {} does not match optimizer state {}",
            flat_grads.len(),
            state.m.len()
        )));
    }
    if let Some(idx) = flat_grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::fault(format!(
            "non-finite gradient at flat parameter index {idx}"
        )));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let mut params = model.flatten_params();
    for i in 0..params.len() {
        let g = flat_grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    model.unflatten_params(&params)
}
