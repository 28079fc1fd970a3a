//! Global Dice loss, residual-masked cross-entropy and the combined
//! pyramid objective, each with its gradient w.r.t. the predicted maps.
//!
//! Every function takes a batch `(n, 1, h, w)` of probabilities together
//! with one mask per batch item. Per-item losses are averaged over the
//! batch, and scalar reductions accumulate in `f64` regardless of `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::pyramid::ResidualPyramid;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_CLAMP: f64 = 1e-7;

/// Which cross-entropy terms enter the masked local losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeMode {
    /// `-(g ln o + (1 - g) ln(1 - o))`.
    #[default]
    TwoSided,
    /// `-g ln o` only; background pixels inside the mask contribute nothing.
    PositiveOnly,
}

/// Weights and switches of the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// `lambda_k` for every local term `k = 0..=K`.
    pub lambdas: Vec<f64>,
    /// Dice smoothing constant.
    pub eps: f64,
    pub global: bool,
    /// Active flag per local term, same length as `lambdas`.
    pub local: Vec<bool>,
    pub ce_mode: CeMode,
    pub clamp: f64,
}

impl LossWeights {
    /// Halving weights `1, 1/2, 1/4, ...` over `levels + 1` local terms, all
    /// terms active.
    pub fn pyramid(levels: usize) -> Self {
        Self {
            lambdas: (0..=levels).map(|k| 0.5f64.powi(k as i32)).collect(),
            eps: 1.0,
            global: true,
            local: vec![true; levels + 1],
            ce_mode: CeMode::TwoSided,
            clamp: DEFAULT_CLAMP,
        }
    }

    /// Dice term only.
    pub fn global_only(levels: usize) -> Self {
        Self {
            local: vec![false; levels + 1],
            ..Self::pyramid(levels)
        }
    }

    pub fn levels(&self) -> usize {
        self.lambdas.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.len() != self.local.len() {
            return Err(Error::InvalidArgument(format!(
                "{} lambdas for {} local switches",
                self.lambdas.len(),
                self.local.len()
            )));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lambdas must be finite and non-negative: {:?}",
                self.lambdas
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dice smoothing must be positive, got {}",
                self.eps
            )));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "clamp must lie in (0, 0.5), got {}",
                self.clamp
            )));
        }
        Ok(())
    }
}

/// Value and per-output gradients of the combined objective.
#[derive(Clone, Debug)]
pub struct LossBreakdown<T> {
    pub total: f64,
    /// Dice term, or 0 when inactive.
    pub global: f64,
    /// Unweighted local terms; 0 for inactive ones.
    pub local: Vec<f64>,
    /// Gradient w.r.t. each output `O_k`.
    pub grads: Vec<Tensor<T>>,
}

fn check_batch<T: Real>(op: &'static str, output: &Tensor<T>, masks: &[&BinaryMask]) -> Result<()> {
    let s = output.shape();
    if s.c != 1 || masks.len() != s.n {
        return Err(Error::shape(
            op,
            format!("output {s} against {} masks", masks.len()),
        ));
    }
    if let Some(m) = masks.iter().find(|m| m.dims() != (s.h, s.w)) {
        return Err(Error::shape(
            op,
            format!("mask {:?} against output {}x{}", m.dims(), s.h, s.w),
        ));
    }
    Ok(())
}

/// `1 - (2 sum(o g) + eps) / (sum(o^2) + sum(g^2) + eps)` per item.
pub fn dice_loss<T: Real>(
    output: &Tensor<T>,
    labels: &[&BinaryMask],
    eps: f64,
) -> Result<(f64, Tensor<T>)> {
    check_batch("dice_loss", output, labels)?;
    let n = output.shape().n;
    let scale = 1.0 / n as f64;
    let mut grad = Tensor::zeros(output.shape());
    let mut total = 0.0;
    for (b, gt) in labels.iter().enumerate() {
        let o = output.item(b);
        let g = gt.data();
        let (mut inter, mut oo, mut gg) = (0.0, 0.0, 0.0);
        for (&ov, &gv) in o.iter().zip(g) {
            let (ov, gv) = (ov.as_f64(), f64::from(gv));
            inter += ov * gv;
            oo += ov * ov;
            gg += gv;
        }
        let num = 2.0 * inter + eps;
        let den = oo + gg + eps;
        total += 1.0 - num / den;
        let gi = &mut grad.data_mut()[b * o.len()..(b + 1) * o.len()];
        for ((dst, &ov), &gv) in gi.iter_mut().zip(o).zip(g) {
            let d = (2.0 * ov.as_f64() * num - 2.0 * f64::from(gv) * den) / (den * den);
            *dst = T::lit(d * scale);
        }
    }
    Ok((total * scale, grad))
}

/// Cross-entropy averaged over the pixels where `residual` is set, per item.
/// Probabilities are clamped to `[clamp, 1 - clamp]`; clamped pixels and
/// pixels outside the residual receive zero gradient.
pub fn masked_ce_loss<T: Real>(
    output: &Tensor<T>,
    labels: &[&BinaryMask],
    residuals: &[&BinaryMask],
    clamp: f64,
    mode: CeMode,
) -> Result<(f64, Tensor<T>)> {
    check_batch("masked_ce_loss", output, labels)?;
    check_batch("masked_ce_loss", output, residuals)?;
    let n = output.shape().n;
    let scale = 1.0 / n as f64;
    let mut grad = Tensor::zeros(output.shape());
    let mut total = 0.0;
    for b in 0..n {
        let o = output.item(b);
        let g = labels[b].data();
        let r = residuals[b].data();
        let count = residuals[b].count_ones();
        if count == 0 {
            continue;
        }
        let norm = 1.0 / count as f64;
        let gi = &mut grad.data_mut()[b * o.len()..(b + 1) * o.len()];
        let mut sum = 0.0;
        for i in 0..o.len() {
            if r[i] == 0 {
                continue;
            }
            let raw = o[i].as_f64();
            let p = raw.clamp(clamp, 1.0 - clamp);
            let live = p == raw;
            let d = if g[i] == 1 {
                sum -= p.ln();
                -1.0 / p
            } else if mode == CeMode::TwoSided {
                sum -= (1.0 - p).ln();
                1.0 / (1.0 - p)
            } else {
                0.0
            };
            if live {
                gi[i] = T::lit(d * norm * scale);
            }
        }
        total += sum * norm;
    }
    Ok((total * scale, grad))
}

/// `L_g(O_0) + sum_k lambda_k L_k(O_k)` over the active terms, with one
/// pyramid per batch item.
pub fn total_loss<T: Real>(
    outputs: &[Tensor<T>],
    pyramids: &[&ResidualPyramid],
    weights: &LossWeights,
) -> Result<LossBreakdown<T>> {
    weights.validate()?;
    let levels = weights.levels();
    if outputs.len() != levels + 1 {
        return Err(Error::shape(
            "total_loss",
            format!("{} outputs for {} loss levels", outputs.len(), levels + 1),
        ));
    }
    if let Some(p) = pyramids.iter().find(|p| p.depth() != levels) {
        return Err(Error::shape(
            "total_loss",
            format!("pyramid of depth {} for {levels} levels", p.depth()),
        ));
    }
    let mut grads: Vec<Tensor<T>> = outputs.iter().map(|o| Tensor::zeros(o.shape())).collect();
    let mut breakdown_local = vec![0.0; levels + 1];
    let mut global = 0.0;
    if weights.global {
        let labels: Vec<_> = pyramids.iter().map(|p| &p.level(0).label).collect();
        let (v, g) = dice_loss(&outputs[0], &labels, weights.eps)?;
        global = v;
        grads[0].add_assign(&g);
    }
    let mut total = global;
    for k in 0..=levels {
        if !weights.local[k] {
            continue;
        }
        let labels: Vec<_> = pyramids.iter().map(|p| &p.level(k).label).collect();
        let residuals: Vec<_> = pyramids.iter().map(|p| &p.level(k).residual).collect();
        let (v, g) = masked_ce_loss(
            &outputs[k],
            &labels,
            &residuals,
            weights.clamp,
            weights.ce_mode,
        )?;
        breakdown_local[k] = v;
        let lambda = weights.lambdas[k];
        total += lambda * v;
        let lambda = T::lit(lambda);
        for (dst, &src) in grads[k].data_mut().iter_mut().zip(g.data()) {
            *dst += lambda * src;
        }
    }
    Ok(LossBreakdown {
        total,
        global,
        local: breakdown_local,
        grads,
    })
}
