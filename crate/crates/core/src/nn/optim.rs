use serde::{Deserialize, Serialize};

use super::model::{Gradients, Regressor};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state: first/second moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Regressor<T>, config: AdamConfig) -> Self {
        let zeros = model.zero_gradients();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, model: &mut Regressor<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.m.len()],
                found: vec![grads.len()],
            });
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One optimizer update on a batch. Returns the loss measured before the update.
pub fn train_step<T: Scalar>(
    model: &mut Regressor<T>,
    opt: &mut Adam<T>,
    batch: &Tensor<T>,
    labels: &Tensor<T>,
    loss_base: f64,
) -> Result<T> {
    let (loss, grads) = model.loss_and_gradients(batch, labels, loss_base)?;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss is {loss:?}")));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    opt.apply(model, &grads)?;
    Ok(loss)
}
