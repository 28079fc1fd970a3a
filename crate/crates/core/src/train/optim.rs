//! Adam with bias correction and the polynomial learning-rate decay.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{GradStore, ParameterStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per learnable tensor, kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &ParameterStore<T>, config: AdamConfig) -> Self {
        let zeros: IndexMap<String, Vec<f64>> = params
            .iter()
            .filter(|(_, p)| p.kind.is_learnable())
            .map(|(name, p)| (name.to_string(), vec![0.0; p.data.len()]))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Non-finite gradients abort before any
    /// parameter or moment is touched.
    pub fn step<T: Real>(
        &mut self,
        params: &mut ParameterStore<T>,
        grads: &GradStore<T>,
        lr: f64,
    ) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let (Some(m), Some(v)) = (self.first.get_mut(name), self.second.get_mut(name)) else {
                return Err(Error::InvalidArgument(format!(
                    "no optimizer state for {name}"
                )));
            };
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name}")))?;
            if p.data.len() != g.len() {
                return Err(Error::shape(
                    "adam",
                    format!("{name}: {} vs {}", p.data.len(), g.len()),
                ));
            }
            for (((x, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *x = T::lit(x.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// `eta0 * (1 - t / total)^0.9` for `0 <= t <= total`.
pub fn poly_lr(t: usize, total: usize, eta0: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::InvalidArgument(format!(
            "learning-rate step {t} outside 0..={total}"
        )));
    }
    Ok(eta0 * (1.0 - t as f64 / total as f64).powf(0.9))
}
