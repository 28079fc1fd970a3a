//! Pixel metrics, ROC and PR curves, morphology, vessel-region extraction
//! and the CAL structure metric.

mod cal;
mod components;
mod cs;
mod curves;
mod metrics;
mod morphology;
mod report;
mod skeleton;

pub use cal::{cal_metric, Cal, CAL_RADIUS};
pub use components::{connected_components, remove_small, Components, Connectivity};
pub use cs::{extract_cs_mask, CsMasks, CLOSE_RADIUS, CONTOUR_RADIUS, MIN_BIG_VESSEL, OPEN_RADIUS};
pub use curves::{
    pr_curve, pr_from_sorted, roc_auc, roc_from_sorted, scored_pixels, PrPoint, RocCurve, RocPoint,
};
pub use metrics::{binarize, confusion, sen_spe_acc, ConfusionCounts, PixelMetrics};
pub use morphology::{close, dilate, disk, erode, morphology, open, MorphOp};
pub use report::{
    evaluate, evaluate_all, write_reports, Curves, EvalItem, EvalSummary, ImageReport, Region,
    RegionMean, RegionReport, Roi, DEFAULT_THRESHOLD,
};
pub use skeleton::skeletonize;
