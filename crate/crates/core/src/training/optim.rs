use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Adam with decoupled weight decay.
///
/// Per step `t` and parameter `p` with gradient `g`:
///
/// ```text
/// p ← p − lr·λ·p
/// m ← β₁·m + (1−β₁)·g          v ← β₂·v + (1−β₂)·g²
/// p ← p − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// ```
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            betas,
            eps,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every tensor in `params` from the gradient stored under
    /// the same name. Tensors not listed are left alone.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, p) in &params {
            match grads.get(name) {
                None => {
                    return Err(Error::contract(format!(
                        "no gradient for trainable tensor {name}"
                    )))
                }
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::dim(format!(
                        "gradient for {name} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let t = self.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, p) in params {
            let g = grads[&name].data();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                *w -= self.lr * self.weight_decay * *w;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
