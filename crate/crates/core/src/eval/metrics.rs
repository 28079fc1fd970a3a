//! Confusion counts and the ratios derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Ratios that are `None` when their denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub acc: Option<f64>,
}

fn check(a: &BinaryMask, b: &BinaryMask, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    Ok(())
}

/// Counts over the pixels where `roi` is set, or the whole image.
pub fn confusion(
    pred: &BinaryMask,
    gt: &BinaryMask,
    roi: Option<&BinaryMask>,
) -> Result<ConfusionCounts> {
    check(pred, gt, "confusion")?;
    if let Some(r) = roi {
        check(pred, r, "confusion")?;
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if roi.is_some_and(|r| r.data()[i] == 0) {
            continue;
        }
        match (p == 1, g == 1) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn sen_spe_acc(c: &ConfusionCounts) -> PixelMetrics {
    PixelMetrics {
        sen: ratio(c.tp, c.tp + c.fn_),
        spe: ratio(c.tn, c.tn + c.fp),
        acc: ratio(c.tp + c.tn, c.total()),
    }
}

/// `p > threshold`; a probability equal to the threshold is background.
pub fn binarize(probs: &[f32], h: usize, w: usize, threshold: f64) -> Result<BinaryMask> {
    BinaryMask::from_vec(
        h,
        w,
        probs
            .iter()
            .map(|&p| u8::from(f64::from(p) > threshold))
            .collect(),
    )
}
