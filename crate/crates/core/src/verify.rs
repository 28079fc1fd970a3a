//! End-to-end finite-difference verification of the training gradient.
//!
//! Each learnable scalar is perturbed by `±eps` and `±2 eps`; the derivative
//! of the total loss comes from the fourth-order central stencil
//! `(8 (f(1) - f(-1)) - (f(2) - f(-2))) / (12 eps)`. Coordinates whose
//! perturbation flips a ReLU or max-pool decision are retried with steps
//! `eps / 10` and `eps / 100`, then skipped, since the objective is only
//! piecewise smooth there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{total_loss, LossWeights};
use crate::mask::BinaryMask;
use crate::model::{backward, forward, Mode, ParameterStore, SpnetConfig};
use crate::ops::gradcheck::relative_error;
use crate::pyramid::{build_residual_pyramid, ResidualPyramid};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub eps: f64,
    pub batch: usize,
    pub size: usize,
    /// Checks at most this many evenly spaced coordinates per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: 1e-3,
            batch: 2,
            size: 16,
            max_per_tensor: Some(64),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Flat index, analytic and numeric derivative of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub skipped: usize,
    pub tensors: Vec<TensorReport>,
}

struct Problem {
    image: Tensor<f64>,
    pyramids: Vec<ResidualPyramid>,
    weights: LossWeights,
}

impl Problem {
    fn loss(&self, params: &ParameterStore<f64>) -> Result<(f64, u64)> {
        let pass = forward(params, &self.image, Mode::Train)?;
        let refs: Vec<_> = self.pyramids.iter().collect();
        let l = total_loss(&pass.outputs, &refs, &self.weights)?;
        Ok((l.total, pass.cache.activation_pattern()))
    }
}

fn problem(config: &SpnetConfig, opts: &GradcheckOptions) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let s = Shape::new(opts.batch, config.in_channels, opts.size, opts.size);
    let image = Tensor::from_fn(s, |_, _, _, _| rng.random_range(0.0..1.0));
    let pyramids = (0..opts.batch)
        .map(|_| {
            let gt = BinaryMask::from_fn(opts.size, opts.size, |_, _| rng.random_bool(0.3));
            build_residual_pyramid(&gt, config.pyramid_levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Problem {
        image,
        pyramids,
        weights: LossWeights::pyramid(config.pyramid_levels),
    })
}

/// Compares the analytic gradient of the total loss against central
/// differences for every (or a sample of every) learnable tensor.
pub fn end_to_end_gradcheck(
    config: &SpnetConfig,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let params = ParameterStore::<f64>::init(config, opts.seed)?;
    let prob = problem(config, opts)?;
    let pass = forward(&params, &prob.image, Mode::Train)?;
    let base_pattern = pass.cache.activation_pattern();
    let refs: Vec<_> = prob.pyramids.iter().collect();
    let loss = total_loss(&pass.outputs, &refs, &prob.weights)?;
    let grads = backward(&params, &pass.cache, &loss.grads)?;

    let mut tensors = Vec::new();
    for (name, analytic) in grads.iter() {
        let n = analytic.len();
        let stride = opts.max_per_tensor.map_or(1, |m| n.div_ceil(m.max(1)));
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let results = coords
            .par_iter()
            .map(|&i| -> Result<Option<(usize, f64, f64)>> {
                let mut p = params.clone();
                let x0 = p.get(name).expect("gradient names match parameters").data[i];
                for shrink in [1.0, 0.1, 0.01] {
                    let h = opts.eps * shrink;
                    let mut at = |step: f64| -> Result<Option<f64>> {
                        p.get_mut(name).expect("present").data[i] = x0 + step * h;
                        let (v, pattern) = prob.loss(&p)?;
                        if !v.is_finite() {
                            return Err(Error::NonFinite(format!("loss at {name}[{i}]")));
                        }
                        Ok((pattern == base_pattern).then_some(v))
                    };
                    if let (Some(m2), Some(m1), Some(p1), Some(p2)) =
                        (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?)
                    {
                        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                        return Ok(Some((i, analytic[i], numeric)));
                    }
                }
                Ok(None)
            })
            .collect::<Result<Vec<_>>>()?;
        let checked: Vec<_> = results.iter().flatten().copied().collect();
        let worst = checked
            .iter()
            .copied()
            .max_by(|a, b| relative_error(a.1, a.2).total_cmp(&relative_error(b.1, b.2)));
        tensors.push(TensorReport {
            name: name.to_string(),
            checked: checked.len(),
            skipped: results.len() - checked.len(),
            max_rel_error: worst.map_or(0.0, |(_, a, n)| relative_error(a, n)),
            worst,
        });
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .ok_or_else(|| Error::InvalidArgument("no learnable parameters".into()))?;
    Ok(GradcheckReport {
        max_rel_error: worst.max_rel_error,
        worst: worst.name.clone(),
        checked: tensors.iter().map(|t| t.checked).sum(),
        skipped: tensors.iter().map(|t| t.skipped).sum(),
        tensors,
    })
}
