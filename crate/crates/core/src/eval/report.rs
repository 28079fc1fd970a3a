//! Per-image and aggregate evaluation over whole-FOV and vessel-class
//! regions, with JSON and CSV output.
//!
//! A vessel region is scored on its own vessel pixels plus every background
//! pixel inside the ROI, so region reports share their TN and FP counts and
//! their TP and FN counts add up to those of the whole ROI.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cal::{cal_metric, Cal};
use super::cs::extract_cs_mask;
use super::curves::{pr_from_sorted, roc_auc, roc_from_sorted, scored_pixels, PrPoint, RocPoint};
use super::metrics::{binarize, confusion, sen_spe_acc, ConfusionCounts, PixelMetrics};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Cs,
    NonCs,
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "cs" => Ok(Self::Cs),
            "non_cs" | "non-cs" => Ok(Self::NonCs),
            _ => Err(Error::InvalidArgument(format!(
                "unknown region {s:?}; expected all, cs or non_cs"
            ))),
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Cs => "cs",
            Self::NonCs => "non_cs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Roi {
    /// Restricted to the field-of-view mask.
    Fov,
    /// Every pixel of the image.
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: Region,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: PixelMetrics,
    pub auc: Option<f64>,
    /// `None` when the region holds no vessel pixel.
    pub cal: Option<Cal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub id: String,
    pub roi: Roi,
    pub threshold: f64,
    pub regions: Vec<RegionReport>,
}

/// One image to evaluate.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub probs: &'a [f32],
    pub gt: &'a BinaryMask,
    pub fov: Option<&'a BinaryMask>,
}

fn domains(
    gt: &BinaryMask,
    fov: Option<&BinaryMask>,
    regions: &[Region],
) -> Result<Vec<BinaryMask>> {
    let (h, w) = gt.dims();
    let roi = fov.cloned().unwrap_or_else(|| BinaryMask::ones(h, w));
    let cs = if regions.iter().any(|r| *r != Region::All) {
        Some(extract_cs_mask(gt)?)
    } else {
        None
    };
    let background = gt.complement();
    regions
        .iter()
        .map(|r| match r {
            Region::All => Ok(roi.clone()),
            Region::Cs => cs.as_ref().expect("computed").cs.or(&background)?.and(&roi),
            Region::NonCs => cs
                .as_ref()
                .expect("computed")
                .non_cs
                .or(&background)?
                .and(&roi),
        })
        .collect()
}

pub fn evaluate(item: &EvalItem<'_>, threshold: f64, regions: &[Region]) -> Result<ImageReport> {
    let (h, w) = item.gt.dims();
    if item.probs.len() != h * w {
        return Err(Error::shape(
            "evaluate",
            format!(
                "{}: {} scores for a {h}x{w} ground truth",
                item.id,
                item.probs.len()
            ),
        ));
    }
    if let Some(f) = item.fov {
        if f.dims() != (h, w) {
            return Err(Error::shape(
                "evaluate",
                format!("{}: fov {:?}", item.id, f.dims()),
            ));
        }
    }
    let pred = binarize(item.probs, h, w, threshold)?;
    let reports = regions
        .iter()
        .zip(domains(item.gt, item.fov, regions)?)
        .map(|(&region, domain)| {
            let counts = confusion(&pred, item.gt, Some(&domain))?;
            let auc = roc_auc(item.probs, item.gt, Some(&domain))?.auc;
            let gt_in = item.gt.and(&domain)?;
            let cal = if gt_in.is_empty() {
                None
            } else {
                Some(cal_metric(&pred.and(&domain)?, &gt_in)?)
            };
            Ok(RegionReport {
                region,
                counts,
                metrics: sen_spe_acc(&counts),
                auc,
                cal,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImageReport {
        id: item.id.to_string(),
        roi: if item.fov.is_some() {
            Roi::Fov
        } else {
            Roi::Image
        },
        threshold,
        regions: reports,
    })
}

/// Means over the images for which each value is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMean {
    pub region: Region,
    pub images: usize,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub cal: Option<f64>,
    /// Counts summed over all images.
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub images: Vec<ImageReport>,
    pub mean: Vec<RegionMean>,
    /// Area under the ROC curve of all ROI pixels pooled across images.
    pub pooled_auc: Option<f64>,
}

pub struct Curves {
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates every image in parallel; reports keep the input order.
pub fn evaluate_all(
    items: &[EvalItem<'_>],
    threshold: f64,
    regions: &[Region],
) -> Result<(EvalSummary, Curves)> {
    let images: Vec<ImageReport> = items
        .par_iter()
        .map(|it| evaluate(it, threshold, regions))
        .collect::<Result<_>>()?;
    let mean = regions
        .iter()
        .enumerate()
        .map(|(k, &region)| {
            let rs: Vec<&RegionReport> = images.iter().map(|im| &im.regions[k]).collect();
            let mut counts = ConfusionCounts::default();
            for r in &rs {
                counts.add(&r.counts);
            }
            RegionMean {
                region,
                images: rs.len(),
                sen: mean(rs.iter().map(|r| r.metrics.sen)),
                spe: mean(rs.iter().map(|r| r.metrics.spe)),
                acc: mean(rs.iter().map(|r| r.metrics.acc)),
                auc: mean(rs.iter().map(|r| r.auc)),
                cal: mean(rs.iter().map(|r| r.cal.map(|c| c.cal))),
                counts,
            }
        })
        .collect();
    let mut pooled = Vec::new();
    for it in items {
        pooled.extend(scored_pixels(it.probs, it.gt, it.fov)?);
    }
    pooled.par_sort_by(|a, b| b.0.total_cmp(&a.0));
    let roc = roc_from_sorted(&pooled);
    let curves = Curves {
        roc: roc.points,
        pr: pr_from_sorted(&pooled),
    };
    Ok((
        EvalSummary {
            images,
            mean,
            pooled_auc: roc.auc,
        },
        curves,
    ))
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `metrics.json`, `roc.csv` and `pr.csv` into `dir`.
pub fn write_reports(summary: &EvalSummary, curves: &Curves, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("metrics.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    write_csv(&curves.roc, &dir.join("roc.csv"))?;
    write_csv(&curves.pr, &dir.join("pr.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [Region; 3] = [Region::All, Region::Cs, Region::NonCs];

    fn vessels() -> BinaryMask {
        BinaryMask::from_fn(48, 48, |y, x| {
            (10..22).contains(&y) || x == 30 || (y + x == 60 && y > 30)
        })
    }

    fn as_probs(m: &BinaryMask) -> Vec<f32> {
        m.data().iter().map(|&v| f32::from(v)).collect()
    }

    #[test]
    fn exact_prediction_is_perfect_everywhere() {
        let gt = vessels();
        let probs = as_probs(&gt);
        let item = EvalItem {
            id: "a",
            probs: &probs,
            gt: &gt,
            fov: None,
        };
        let r = evaluate(&item, 0.5, &ALL).unwrap();
        for reg in &r.regions {
            assert_eq!(reg.metrics.acc, Some(1.0), "{:?}", reg.region);
            assert_eq!(reg.auc, Some(1.0));
            assert_eq!(reg.cal.unwrap().cal, 1.0);
        }
    }

    #[test]
    fn half_map_predicts_background() {
        let gt = vessels();
        let probs = vec![0.5f32; 48 * 48];
        let item = EvalItem {
            id: "a",
            probs: &probs,
            gt: &gt,
            fov: None,
        };
        let r = evaluate(&item, 0.5, &[Region::All]).unwrap();
        assert_eq!(r.regions[0].metrics.sen, Some(0.0));
        assert_eq!(r.regions[0].metrics.spe, Some(1.0));
    }

    #[test]
    fn vessel_regions_split_the_vessel_counts() {
        let gt = vessels();
        let fov = BinaryMask::from_fn(48, 48, |y, x| {
            (y as isize - 24).pow(2) + (x as isize - 24).pow(2) < 600
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs: Vec<f32> = (0..48 * 48).map(|_| rng.random_range(0.0..1.0)).collect();
        let item = EvalItem {
            id: "a",
            probs: &probs,
            gt: &gt,
            fov: Some(&fov),
        };
        let r = evaluate(&item, 0.5, &ALL).unwrap();
        let [all, cs, non] = [
            &r.regions[0].counts,
            &r.regions[1].counts,
            &r.regions[2].counts,
        ];
        assert_eq!(cs.tp + non.tp, all.tp);
        assert_eq!(cs.fn_ + non.fn_, all.fn_);
        assert_eq!((cs.tn, cs.fp), (all.tn, all.fp));
        assert_eq!((non.tn, non.fp), (all.tn, all.fp));
        assert_eq!(all.total(), fov.count_ones() as u64);
        assert_eq!(r.roi, Roi::Fov);
    }

    #[test]
    fn summary_means_and_files() {
        let gt = vessels();
        let a = as_probs(&gt);
        let b = vec![0.25f32; 48 * 48];
        let items = [
            EvalItem {
                id: "a",
                probs: &a,
                gt: &gt,
                fov: None,
            },
            EvalItem {
                id: "b",
                probs: &b,
                gt: &gt,
                fov: None,
            },
        ];
        let (summary, curves) = evaluate_all(&items, 0.5, &[Region::All]).unwrap();
        assert_eq!(summary.images[1].id, "b");
        let m = &summary.mean[0];
        assert_eq!(
            m.acc,
            Some((1.0 + summary.images[1].regions[0].metrics.acc.unwrap()) / 2.0)
        );
        assert_eq!(m.auc, Some(0.75));
        let dir = tempfile::tempdir().unwrap();
        write_reports(&summary, &curves, dir.path()).unwrap();
        let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
        assert!(roc.starts_with("threshold,fpr,tpr\n"));
        let pr = std::fs::read_to_string(dir.path().join("pr.csv")).unwrap();
        assert!(pr.starts_with("threshold,recall,precision\n"));
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("metrics.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(json["images"][0]["regions"][0]["acc"], 1.0);
        assert_eq!(json["images"][0]["regions"][0]["counts"]["fn"], 0);
    }

    #[test]
    fn region_names_parse() {
        assert_eq!("non_cs".parse::<Region>().unwrap(), Region::NonCs);
        assert!("edge".parse::<Region>().is_err());
    }
}
