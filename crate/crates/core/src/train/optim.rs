use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, Network};
use crate::tensor::{Float, Result, Tensor, TensorError};

fn same_shape<T: Float>(param: &Tensor<T>, other: &Tensor<T>, what: &str) -> Result<()> {
    if param.shape() != other.shape() {
        return Err(TensorError::Dimension(format!(
            "{what} shape {:?} does not match parameter shape {:?}",
            other.shape(),
            param.shape()
        )));
    }
    Ok(())
}

/// `w <- w - lr * g`.
pub fn sgd_step<T: Float>(param: &mut Tensor<T>, grad: &Tensor<T>, learning_rate: f64) -> Result<()> {
    same_shape(param, grad, "gradient")?;
    let lr = T::from_f64(learning_rate);
    for (w, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *w -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Float = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Float> AdamState<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// Bias-corrected Adam update at step `t` (1-based). Arithmetic runs in
/// `f64` and is rounded once into `T`.
pub fn adam_step<T: Float>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    t: u64,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    same_shape(param, grad, "gradient")?;
    same_shape(param, &state.m, "first moment")?;
    same_shape(param, &state.v, "second moment")?;
    if t == 0 {
        return Err(TensorError::Degenerate("adam step counter starts at 1".into()));
    }
    let AdamConfig { beta1, beta2, eps } = *config;
    let c1 = 1.0 - beta1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - beta2.powi(t.min(i32::MAX as u64) as i32);
    let ms = state.m.data_mut();
    let vs = state.v.data_mut();
    for (((w, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(ms).zip(vs) {
        let g = g.as_f64();
        let m1 = beta1 * m.as_f64() + (1.0 - beta1) * g;
        let v1 = beta2 * v.as_f64() + (1.0 - beta2) * g * g;
        *m = T::from_f64(m1);
        *v = T::from_f64(v1);
        let step = learning_rate * (m1 / c1) / ((v1 / c2).sqrt() + eps);
        *w = T::from_f64(w.as_f64() - step);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Applies one update rule to every trainable parameter of a network.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Float = f32> {
    kind: OptimizerKind,
    learning_rate: f64,
    adam: AdamConfig,
    step: u64,
    states: BTreeMap<String, AdamState<T>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            adam: AdamConfig::default(),
            step: 0,
            states: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Frozen parameters and parameters without a gradient are skipped.
    pub fn step(&mut self, network: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let mut first_err = None;
        network.for_each_param_mut(|p| {
            if p.frozen || first_err.is_some() {
                return;
            }
            let Some(g) = grads.get(&p.name) else { return };
            let outcome = match self.kind {
                OptimizerKind::Sgd => sgd_step(&mut p.value, g, self.learning_rate),
                OptimizerKind::Adam => {
                    let state = self
                        .states
                        .entry(p.name.clone())
                        .or_insert_with(|| AdamState::zeros(p.value.shape()));
                    adam_step(&mut p.value, g, state, t, self.learning_rate, &self.adam)
                }
            };
            if let Err(e) = outcome {
                first_err = Some(e);
            }
        });
        first_err.map_or(Ok(()), Err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_hand_value() {
        let mut w = Tensor::<f64>::full(&[1], 1.0);
        sgd_step(&mut w, &Tensor::full(&[1], 0.5), 0.1).unwrap();
        assert_eq!(w.data(), &[0.95]);
        sgd_step(&mut w, &Tensor::zeros(&[1]), 0.1).unwrap();
        assert_eq!(w.data(), &[0.95]);
        assert!(sgd_step(&mut w, &Tensor::zeros(&[2]), 0.1).is_err());
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut w = Tensor::<f64>::new(&[3], vec![0.0, 1.0, -2.0]).unwrap();
        let g = Tensor::new(&[3], vec![0.3, -7.0, 1e-3]).unwrap();
        let mut s = AdamState::zeros(&[3]);
        adam_step(&mut w, &g, &mut s, 1, 0.01, &AdamConfig::default()).unwrap();
        let expect = [-0.01, 1.01, -2.01];
        for (a, b) in w.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut w = Tensor::<f32>::full(&[4], 0.25);
        let mut s = AdamState::zeros(&[4]);
        adam_step(&mut w, &Tensor::zeros(&[4]), &mut s, 1, 0.1, &AdamConfig::default()).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.25));
        assert!(adam_step(&mut w, &Tensor::zeros(&[4]), &mut s, 0, 0.1, &AdamConfig::default()).is_err());
    }
}
