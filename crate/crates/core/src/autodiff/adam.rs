use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step: u64,
}

/// A trainable array with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Array2<f64>,
    pub requires_grad: bool,
    pub grad: Option<Array2<f64>>,
    pub adam: AdamState,
}

impl Parameter {
    pub fn new(value: Array2<f64>) -> Self {
        let dim = value.dim();
        Self {
            value,
            requires_grad: true,
            grad: None,
            adam: AdamState {
                m: Array2::zeros(dim),
                v: Array2::zeros(dim),
                step: 0,
            },
        }
    }

    pub fn accumulate_grad(&mut self, g: &Array2<f64>) -> Result<()> {
        if g.dim() != self.value.dim() {
            return Err(Error::shape(
                "Parameter::accumulate_grad",
                format!("{:?}", self.value.dim()),
                format!("{:?}", g.dim()),
            ));
        }
        match &mut self.grad {
            Some(existing) => *existing += g,
            slot @ None => *slot = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step. The gradient buffer is left in place; the
/// caller clears it.
pub fn adam_step(p: &mut Parameter, cfg: &AdamConfig) -> Result<()> {
    let grad = p
        .grad
        .as_ref()
        .ok_or_else(|| Error::State("adam_step on a parameter without a gradient".into()))?;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = *cfg;
    p.adam.step += 1;
    let t = p.adam.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    Zip::from(&mut p.value)
        .and(&mut p.adam.m)
        .and(&mut p.adam.v)
        .and(grad)
        .for_each(|x, m, v, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    Ok(())
}
