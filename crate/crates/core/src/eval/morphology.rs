//! Binary morphology with disk structuring elements.
//!
//! Pixels outside the image count as background: dilation never reads them
//! as foreground and erosion clears any pixel whose disk leaves the image.
//! Closing is evaluated on a canvas padded by the radius, which makes it the
//! exact restriction of the unbounded closing and hence extensive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

/// Half-width of the disk `{dx^2 + dy^2 <= r^2}` on each row `dy = -r..=r`.
fn disk_spans(r: usize) -> Vec<(isize, usize)> {
    let r = r as isize;
    (-r..=r)
        .map(|dy| {
            let mut s = 0;
            while (s + 1) * (s + 1) + dy * dy <= r * r {
                s += 1;
            }
            (dy, s as usize)
        })
        .collect()
}

/// Offsets of the disk of radius `r`.
pub fn disk(r: usize) -> Vec<(isize, isize)> {
    disk_spans(r)
        .into_iter()
        .flat_map(|(dy, s)| (-(s as isize)..=s as isize).map(move |dx| (dy, dx)))
        .collect()
}

/// Per-row prefix counts of foreground pixels, `w + 1` entries per row.
fn prefix_counts(m: &BinaryMask) -> Vec<u32> {
    let (h, w) = m.dims();
    let mut p = vec![0u32; h * (w + 1)];
    for y in 0..h {
        let row = m.row(y);
        let base = y * (w + 1);
        for x in 0..w {
            p[base + x + 1] = p[base + x] + u32::from(row[x]);
        }
    }
    p
}

fn sweep(m: &BinaryMask, r: usize, erode: bool) -> BinaryMask {
    let (h, w) = m.dims();
    let prefix = prefix_counts(m);
    let spans = disk_spans(r);
    BinaryMask::from_fn(h, w, |y, x| {
        let mut any = false;
        for &(dy, s) in &spans {
            let yy = y as isize + dy;
            let (lo, hi) = (x as isize - s as isize, x as isize + s as isize);
            let inside = (0..h as isize).contains(&yy);
            if erode {
                if !inside || lo < 0 || hi >= w as isize {
                    return false;
                }
            } else if !inside {
                continue;
            }
            let (lo, hi) = (lo.max(0) as usize, (hi as usize).min(w - 1));
            let base = yy as usize * (w + 1);
            let count = prefix[base + hi + 1] - prefix[base + lo];
            if erode && count as usize != hi - lo + 1 {
                return false;
            }
            any |= count > 0;
        }
        erode || any
    })
}

pub fn erode(m: &BinaryMask, r: usize) -> BinaryMask {
    sweep(m, r, true)
}

pub fn dilate(m: &BinaryMask, r: usize) -> BinaryMask {
    sweep(m, r, false)
}

pub fn open(m: &BinaryMask, r: usize) -> BinaryMask {
    dilate(&erode(m, r), r)
}

pub fn close(m: &BinaryMask, r: usize) -> BinaryMask {
    let (h, w) = m.dims();
    let padded = BinaryMask::from_fn(h + 2 * r, w + 2 * r, |y, x| {
        m.get_or_zero(y as isize - r as isize, x as isize - r as isize)
    });
    let closed = erode(&dilate(&padded, r), r);
    BinaryMask::from_fn(h, w, |y, x| closed.get(y + r, x + r))
}

pub fn morphology(m: &BinaryMask, op: MorphOp, r: usize) -> Result<BinaryMask> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "disk radius must be at least 1".into(),
        ));
    }
    Ok(match op {
        MorphOp::Erode => erode(m, r),
        MorphOp::Dilate => dilate(m, r),
        MorphOp::Open => open(m, r),
        MorphOp::Close => close(m, r),
    })
}
