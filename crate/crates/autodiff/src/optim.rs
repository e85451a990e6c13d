use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// A named trainable tensor together with its pending gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// Every parameter must carry a gradient of its own shape; nothing is
    /// updated otherwise.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Parameter>,
    {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        for p in &params {
            let grad = p
                .grad
                .as_ref()
                .ok_or_else(|| AutodiffError::MissingGradient(p.name.clone()))?;
            if grad.shape() != p.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    lhs: p.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            if let Some((m, _)) = self.moments.get(&p.name) {
                if m.len() != p.value.numel() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "adam",
                        lhs: p.value.shape().to_vec(),
                        rhs: vec![m.len()],
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for p in params {
            let grad = p.grad.take().expect("checked above");
            let n = p.value.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
