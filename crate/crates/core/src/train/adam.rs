//! Adam with bias correction, one moment pair per registered parameter.

use crate::model::ModelParams;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let entries = params.entries();
        AdamState {
            names: entries.iter().map(|(n, _)| n.clone()).collect(),
            m: entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One bias-corrected update over every parameter, reading the
    /// accumulated gradients. A missing gradient counts as zero (the
    /// moments still decay). Non-finite gradients abort with the
    /// parameter's name.
    pub fn step(&mut self, params: &mut ModelParams, lr: f64) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for (idx, (name, tensor)) in params.entries_mut().into_iter().enumerate() {
            debug_assert_eq!(name, self.names[idx]);
            let zero;
            let grad: &[f64] = match tensor.grad.as_deref() {
                Some(g) => g,
                None => {
                    zero = vec![0.0; tensor.numel()];
                    &zero
                }
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad(name));
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..grad.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            if !tensor.is_finite() {
                return Err(Error::contract(format!("parameter '{name}' became non-finite")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FastModel, ModelConfig};

    fn tiny_model() -> FastModel {
        let cfg = ModelConfig {
            nodes: 3,
            input_steps: 4,
            horizon: 2,
            dim: 4,
            experts: 2,
            agents: 2,
            layers: 1,
            steps_per_day: 8,
            days_per_week: 7,
            ha_router: true,
        };
        FastModel::init(cfg, 5).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model = tiny_model();
        let before: Vec<f64> = model.params.spatial_embed.data.clone();
        let mut adam = AdamState::new(&model.params);
        model.params.zero_grads();
        adam.step(&mut model.params, 0.01).unwrap();
        assert_eq!(model.params.spatial_embed.data, before);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut model = tiny_model();
        let mut adam = AdamState::new(&model.params);
        let before = model.params.head.b2.data.clone();
        for (_, t) in model.params.entries_mut() {
            t.accumulate_grad(&vec![1.0; t.numel()]);
        }
        let lr = 0.002;
        adam.step(&mut model.params, lr).unwrap();
        // bias corrections cancel at t=1, so the move is lr/(1+eps)
        let expect = lr / (1.0 + ADAM_EPS);
        for (a, b) in model.params.head.b2.data.iter().zip(&before) {
            assert!((b - a - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut model = tiny_model();
        let mut adam = AdamState::new(&model.params);
        model.params.zero_grads();
        let t = model.params.get_mut("head.w1").unwrap();
        let mut g = vec![0.0; t.numel()];
        g[3] = f64::NAN;
        t.accumulate_grad(&g);
        let err = adam.step(&mut model.params, 0.01).unwrap_err();
        assert!(err.to_string().contains("head.w1"), "{err}");
    }

    #[test]
    fn quadratic_bowl_descends() {
        // f(w) = w² starting from w = 2: the loss shrinks every step
        let mut w = 2.0f64;
        let mut m = 0.0;
        let mut v = 0.0;
        let lr = 0.01;
        let mut last = w * w;
        for t in 1..=100 {
            let g = 2.0 * w;
            m = BETA1 * m + (1.0 - BETA1) * g;
            v = BETA2 * v + (1.0 - BETA2) * g * g;
            let m_hat = m / (1.0 - BETA1.powi(t));
            let v_hat = v / (1.0 - BETA2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            let loss = w * w;
            assert!(loss < last, "step {t}: {loss} !< {last}");
            last = loss;
        }
        assert!(last < 4.0 * 0.5);
    }
}
