use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay. Decay applies to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Checks every gradient before touching any parameter, so a failed
    /// step leaves the store and moments untouched.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter `{name}`")));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gd[i];
                let mh = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gd[i] * gd[i];
                let vh = *vi / bc2;
                pd[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8, 0.0)
    }
}

/// Linear warmup to `base` then cosine decay to `floor · base`.
pub fn warmup_cosine(step: usize, total: usize, warmup: usize, base: f64, floor: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let u = ((step - warmup) as f64 / span as f64).min(1.0);
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos()))
}
