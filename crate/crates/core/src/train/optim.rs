use std::collections::HashMap;

use indexmap::IndexMap;

use crate::nn::Parameters;
use crate::tensor::Tensor;
use crate::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moments keyed by parameter name, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub m: IndexMap<String, Vec<f32>>,
    pub v: IndexMap<String, Vec<f32>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(grads: &HashMap<String, Tensor>) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    names
        .into_iter()
        .flat_map(|n| grads[n].data().iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut HashMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One bias-corrected Adam update of every parameter of `model`:
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    model: &mut impl Parameters,
    grads: &HashMap<String, Tensor>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<(), TrainError> {
    // validate before mutating anything
    let mut missing = None;
    model.visit("", &mut |name, t| {
        if missing.is_some() {
            return;
        }
        match grads.get(&name) {
            Some(g) if g.shape() == t.shape() => {}
            _ => missing = Some(name),
        }
    });
    if let Some(name) = missing {
        return Err(TrainError::MissingGradient(name));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let OptimizerState { m, v, .. } = state;
    model.visit_mut("", &mut |name, p| {
        let g = grads[&name].data();
        let m = m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = v.entry(name).or_insert_with(|| vec![0.0; g.len()]);
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g as f64;
            let mi = b1 * *m as f64 + (1.0 - b1) * g;
            let vi = b2 * *v as f64 + (1.0 - b2) * g * g;
            *m = mi as f32;
            *v = vi as f32;
            let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            *p = (*p as f64 - step) as f32;
        }
    });
    Ok(())
}
