//! Contour and small-vessel ("challenging") regions of a ground truth.
//!
//! Contours are what a radius-1 erosion strips. Big vessels survive a
//! radius-1 opening, a radius-8 closing clipped back to the ground truth and
//! removal of 4-connected pieces under 100 pixels; everything else is small.

use super::components::{remove_small, Connectivity};
use super::morphology::{close, erode, open};
use crate::error::Result;
use crate::mask::BinaryMask;

pub const CONTOUR_RADIUS: usize = 1;
pub const OPEN_RADIUS: usize = 1;
pub const CLOSE_RADIUS: usize = 8;
pub const MIN_BIG_VESSEL: usize = 100;

/// Subsets of the vessel pixels; `cs` and `non_cs` partition the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CsMasks {
    pub contours: BinaryMask,
    pub big: BinaryMask,
    pub small: BinaryMask,
    pub cs: BinaryMask,
    pub non_cs: BinaryMask,
}

pub fn extract_cs_mask(gt: &BinaryMask) -> Result<CsMasks> {
    let contours = gt.and_not(&erode(gt, CONTOUR_RADIUS))?;
    let smoothed = close(&open(gt, OPEN_RADIUS), CLOSE_RADIUS).and(gt)?;
    let big = remove_small(&smoothed, MIN_BIG_VESSEL, Connectivity::Four);
    let small = gt.and_not(&big)?;
    let cs = contours.or(&small)?;
    let non_cs = gt.and_not(&cs)?;
    Ok(CsMasks {
        contours,
        big,
        small,
        cs,
        non_cs,
    })
}
