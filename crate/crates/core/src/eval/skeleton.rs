//! Zhang-Suen thinning.
//!
//! Pixels are deleted in place during a raster scan rather than in parallel
//! at the end of each sub-iteration. The parallel form erases 2x2 blocks
//! and two-pixel-thick diagonals outright; deleting in place re-tests every
//! pixel against the already thinned neighbourhood, so a pixel is removed
//! only while its foreground neighbours stay one cyclic run and no
//! 8-connected component disappears.

use crate::mask::BinaryMask;

/// Neighbours `P2..P9`: clockwise from north.
const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

pub fn skeletonize(m: &BinaryMask) -> BinaryMask {
    let mut s = m.clone();
    let (h, w) = s.dims();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    if !s.get(y, x) {
                        continue;
                    }
                    let p: [bool; 8] =
                        RING.map(|(dy, dx)| s.get_or_zero(y as isize + dy, x as isize + dx));
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let (n, e, so, we) = (p[0], p[2], p[4], p[6]);
                    let guard = if pass == 0 {
                        !(n && e && so) && !(e && so && we)
                    } else {
                        !(n && e && we) && !(n && so && we)
                    };
                    if (2..=6).contains(&b) && a == 1 && guard {
                        s.set(y, x, false);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return s;
        }
    }
}
