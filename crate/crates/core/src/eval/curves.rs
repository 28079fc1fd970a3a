//! ROC and precision-recall curves over every distinct score.
//!
//! A pixel is called positive at threshold `t` when its score is `>= t`.
//! Thresholds run from high to low over the distinct scores plus `1` and
//! `0`; the ROC curve additionally starts at the origin with threshold
//! `+inf` when no threshold in range rejects every pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub points: Vec<RocPoint>,
}

/// Cumulative `(threshold, tp, fp)` at each threshold, high to low.
struct Sweep {
    steps: Vec<(f64, u64, u64)>,
    positives: u64,
    negatives: u64,
}

/// Scores and labels inside `roi`, sorted by descending score.
pub fn scored_pixels(
    probs: &[f32],
    gt: &BinaryMask,
    roi: Option<&BinaryMask>,
) -> Result<Vec<(f32, bool)>> {
    if probs.len() != gt.data().len() || roi.is_some_and(|r| r.dims() != gt.dims()) {
        return Err(Error::shape("curves", "scores, labels and roi must agree"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("score {p} outside [0, 1]")));
    }
    let mut v: Vec<(f32, bool)> = probs
        .iter()
        .zip(gt.data())
        .enumerate()
        .filter(|(i, _)| roi.is_none_or(|r| r.data()[*i] == 1))
        .map(|(_, (&p, &g))| (p, g == 1))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(v)
}

fn sweep(sorted: &[(f32, bool)]) -> Sweep {
    let positives = sorted.iter().filter(|s| s.1).count() as u64;
    let negatives = sorted.len() as u64 - positives;
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    if sorted.first().is_none_or(|s| s.0 < 1.0) {
        steps.push((1.0, 0, 0));
    }
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((f64::from(score), tp, fp));
    }
    if steps.last().is_some_and(|s| s.0 > 0.0) {
        steps.push((0.0, tp, fp));
    }
    Sweep {
        steps,
        positives,
        negatives,
    }
}

/// ROC curve and its trapezoidal area from sorted `(score, label)` pairs.
pub fn roc_from_sorted(sorted: &[(f32, bool)]) -> RocCurve {
    let s = sweep(sorted);
    let rate = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let mut points = Vec::with_capacity(s.steps.len() + 1);
    if s.steps.first().is_some_and(|f| f.1 + f.2 > 0) {
        points.push(RocPoint {
            threshold: f64::INFINITY,
            fpr: 0.0,
            tpr: 0.0,
        });
    }
    points.extend(s.steps.iter().map(|&(t, tp, fp)| RocPoint {
        threshold: t,
        fpr: rate(fp, s.negatives),
        tpr: rate(tp, s.positives),
    }));
    let auc = (s.positives > 0 && s.negatives > 0).then(|| {
        // twice the area in units of one positive-negative pair
        let (mut twice, mut prev_tp, mut prev_fp) = (0u128, 0u64, 0u64);
        for &(_, tp, fp) in &s.steps {
            twice += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
            prev_tp = tp;
            prev_fp = fp;
        }
        twice as f64 / (2.0 * s.positives as f64 * s.negatives as f64)
    });
    RocCurve { auc, points }
}

/// Precision-recall points; thresholds at which nothing is called positive
/// have no precision and are omitted.
pub fn pr_from_sorted(sorted: &[(f32, bool)]) -> Vec<PrPoint> {
    let s = sweep(sorted);
    s.steps
        .iter()
        .filter(|&&(_, tp, fp)| tp + fp > 0)
        .map(|&(t, tp, fp)| PrPoint {
            threshold: t,
            recall: if s.positives == 0 {
                0.0
            } else {
                tp as f64 / s.positives as f64
            },
            precision: tp as f64 / (tp + fp) as f64,
        })
        .collect()
}

pub fn roc_auc(probs: &[f32], gt: &BinaryMask, roi: Option<&BinaryMask>) -> Result<RocCurve> {
    Ok(roc_from_sorted(&scored_pixels(probs, gt, roi)?))
}

pub fn pr_curve(probs: &[f32], gt: &BinaryMask, roi: Option<&BinaryMask>) -> Result<Vec<PrPoint>> {
    Ok(pr_from_sorted(&scored_pixels(probs, gt, roi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mann_whitney(scores: &[f32], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    fn mask(labels: &[bool]) -> BinaryMask {
        BinaryMask::from_vec(
            1,
            labels.len(),
            labels.iter().map(|&l| u8::from(l)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn matches_pairwise_statistic_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for case in 0..100 {
            // even cases draw from nine levels, so ties are common
            let scores: Vec<f32> = if case % 2 == 0 {
                (0..64)
                    .map(|_| rng.random_range(0..=8) as f32 / 8.0)
                    .collect()
            } else {
                (0..64).map(|_| rng.random_range(0.0..1.0)).collect()
            };
            let mut labels: Vec<bool> = (0..64).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let auc = roc_auc(&scores, &mask(&labels), None).unwrap().auc.unwrap();
            assert!((auc - mann_whitney(&scores, &labels)).abs() <= 1e-12);
        }
    }

    #[test]
    fn separated_scores_and_exact_labels() {
        let labels = [true, true, false, false, false];
        let scores = [0.9, 0.8, 0.3, 0.1, 0.0];
        assert_eq!(
            roc_auc(&scores, &mask(&labels), None).unwrap().auc,
            Some(1.0)
        );
        let exact: Vec<f32> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let roc = roc_auc(&exact, &mask(&labels), None).unwrap();
        assert_eq!(roc.auc, Some(1.0));
        assert_eq!(roc.points.first().unwrap().threshold, f64::INFINITY);
        assert_eq!((roc.points[0].fpr, roc.points[0].tpr), (0.0, 0.0));
        let last = roc.points.last().unwrap();
        assert_eq!((last.threshold, last.fpr, last.tpr), (0.0, 1.0, 1.0));
    }

    #[test]
    fn single_class_has_no_auc() {
        let roc = roc_auc(&[0.2, 0.7], &mask(&[true, true]), None).unwrap();
        assert_eq!(roc.auc, None);
    }

    #[test]
    fn roi_restricts_the_pixels() {
        let labels = mask(&[true, false, true, false]);
        let roi = mask(&[true, true, false, false]);
        let roc = roc_auc(&[0.9, 0.1, 0.0, 1.0], &labels, Some(&roi)).unwrap();
        assert_eq!(roc.auc, Some(1.0));
    }

    #[test]
    fn pr_points() {
        let labels = mask(&[true, false, true, false]);
        let pr = pr_curve(&[0.9, 0.6, 0.6, 0.1], &labels, None).unwrap();
        let got: Vec<_> = pr
            .iter()
            .map(|p| (p.threshold, p.recall, p.precision))
            .collect();
        assert_eq!(
            got,
            vec![
                (f64::from(0.9f32), 0.5, 1.0),
                (f64::from(0.6f32), 1.0, 2.0 / 3.0),
                (f64::from(0.1f32), 1.0, 0.5),
                (0.0, 1.0, 0.5)
            ]
        );
    }

    #[test]
    fn scores_outside_unit_interval_are_rejected() {
        assert!(roc_auc(&[1.5], &mask(&[true]), None).is_err());
    }
}
