//! Residual pyramid decomposition of a ground-truth mask.
//!
//! The ground truth `G_0` is decimated to `G_k` (scale `1/2^k`) and blown
//! back up to full size as `G_k'`. `A_k` marks the pixels where consecutive
//! coarseness levels disagree and that no finer level has claimed yet; the
//! last level takes every remaining pixel. The `A_k` therefore partition the
//! image. `R_k` is `A_k` decimated to the resolution of level `k`, where it
//! masks the local loss on the `k`-th side output.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    /// Ground truth decimated to this level's resolution.
    pub label: BinaryMask,
    /// Residual mask at this level's resolution.
    pub residual: BinaryMask,
    /// Residual mask at full resolution.
    pub coverage: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPyramid {
    levels: Vec<PyramidLevel>,
}

impl ResidualPyramid {
    /// Number of levels above the base, `K`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &PyramidLevel {
        &self.levels[k]
    }
}

/// Builds `G_k`, `A_k` and `R_k` for `k = 0..=levels`.
pub fn build_residual_pyramid(gt: &BinaryMask, levels: usize) -> Result<ResidualPyramid> {
    let (h, w) = gt.dims();
    let factor = 1usize << levels;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "build_residual_pyramid",
            format!("{h}x{w} is not divisible by 2^{levels}"),
        ));
    }

    let mut labels = vec![gt.clone()];
    for k in 1..=levels {
        labels.push(labels[k - 1].downsample_nearest()?);
    }
    let expanded: Vec<BinaryMask> = labels
        .iter()
        .enumerate()
        .map(|(k, g)| g.upsample_nearest(1 << k))
        .collect();

    let mut coverage = Vec::with_capacity(levels + 1);
    let mut claimed = BinaryMask::zeros(h, w);
    for k in 0..=levels {
        let a = if k == levels {
            claimed.complement()
        } else {
            expanded[k].xor(&expanded[k + 1])?.and_not(&claimed)?
        };
        claimed = claimed.or(&a)?;
        coverage.push(a);
    }

    let levels = labels
        .into_iter()
        .zip(coverage)
        .enumerate()
        .map(|(k, (label, coverage))| {
            Ok(PyramidLevel {
                label,
                residual: coverage.downsample_pow2(k)?,
                coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualPyramid { levels })
}
