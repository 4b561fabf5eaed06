use crate::error::{Error, Result};
use crate::nn::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    labels: Vec<String>,
}

impl AdamState {
    /// Fresh state for tensors of the given lengths. `labels` name each tensor in errors.
    pub fn new(config: AdamConfig, sizes: &[usize], labels: Vec<String>) -> Self {
        debug_assert!(labels.is_empty() || labels.len() == sizes.len());
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            labels,
        }
    }

    fn label(&self, i: usize) -> String {
        self.labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("tensor {i}"))
    }
}

/// One bias-corrected Adam update using the gradients stored on each tensor.
///
/// All gradients are checked before any parameter moves, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step(params: &mut [&mut Tensor4], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.len() != state.m[i].len() {
            return Err(Error::shape(format!(
                "{}: parameter has {} values, optimizer state has {}",
                state.label(i),
                p.len(),
                state.m[i].len()
            )));
        }
        if let Some(g) = p.grad() {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at element {j}",
                    state.label(i)
                )));
            }
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let (values, grad) = p.data_and_grad_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((x, &g), m), v) in values.iter_mut().zip(grad).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
