//! Connectivity-area-length agreement between two vessel masks.

use serde::{Deserialize, Serialize};

use super::components::{connected_components, Connectivity};
use super::morphology::dilate;
use super::skeleton::skeletonize;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Dilation radius for the area and length tolerances.
pub const CAL_RADIUS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cal {
    pub connectivity: f64,
    pub area: f64,
    pub length: f64,
    pub cal: f64,
}

fn count(m: &BinaryMask) -> usize {
    m.count_ones()
}

pub fn cal_metric(pred: &BinaryMask, gt: &BinaryMask) -> Result<Cal> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "cal_metric",
            format!("{:?} vs {:?}", pred.dims(), gt.dims()),
        ));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument(
            "CAL is undefined for an empty ground truth".into(),
        ));
    }
    if pred.is_empty() {
        let c = 1.0
            - (connected_components(gt, Connectivity::Eight).count as f64 / count(gt) as f64)
                .min(1.0);
        return Ok(Cal {
            connectivity: c,
            area: 0.0,
            length: 0.0,
            cal: 0.0,
        });
    }
    let cc_gt = connected_components(gt, Connectivity::Eight).count as f64;
    let cc_pred = connected_components(pred, Connectivity::Eight).count as f64;
    let connectivity = 1.0 - ((cc_gt - cc_pred).abs() / count(gt) as f64).min(1.0);

    let pred_d = dilate(pred, CAL_RADIUS);
    let gt_d = dilate(gt, CAL_RADIUS);
    let area_hit = pred_d.and(gt)?.or(&pred.and(&gt_d)?)?;
    let area = count(&area_hit) as f64 / count(&pred.or(gt)?) as f64;

    let pred_s = skeletonize(pred);
    let gt_s = skeletonize(gt);
    let length_hit = pred_s.and(&gt_d)?.or(&pred_d.and(&gt_s)?)?;
    let length = count(&length_hit) as f64 / count(&pred_s.or(&gt_s)?) as f64;

    Ok(Cal {
        connectivity,
        area,
        length,
        cal: connectivity * area * length,
    })
}
