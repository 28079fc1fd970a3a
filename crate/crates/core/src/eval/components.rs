//! Connected-component labelling by two-pass union-find.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(Error::InvalidArgument(format!(
                "connectivity must be 4 or 8, got {n}"
            ))),
        }
    }

    /// Already-visited neighbours in raster order.
    fn backward(self) -> &'static [(isize, isize)] {
        match self {
            Self::Four => &[(-1, 0), (0, -1)],
            Self::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    /// `0` for background, `1..=count` in raster order of first pixel.
    pub labels: Vec<u32>,
    pub count: usize,
    /// Pixel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

pub fn connected_components(m: &BinaryMask, conn: Connectivity) -> Components {
    let (h, w) = m.dims();
    let mut provisional = vec![0u32; h * w];
    // slot 0 is background
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) {
                continue;
            }
            let mut label = 0;
            for &(dy, dx) in conn.backward() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let n = provisional[ny as usize * w + nx as usize];
                if n == 0 {
                    continue;
                }
                if label == 0 {
                    label = find(&mut parent, n);
                } else {
                    let (a, b) = (find(&mut parent, label), find(&mut parent, n));
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi as usize] = lo;
                    label = lo;
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[y * w + x] = label;
        }
    }
    let mut dense = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    let mut labels = provisional;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if dense[root] == 0 {
            sizes.push(0);
            dense[root] = sizes.len() as u32;
        }
        *l = dense[root];
        sizes[*l as usize - 1] += 1;
    }
    Components {
        labels,
        count: sizes.len(),
        sizes,
    }
}

/// Deletes components with fewer than `min_size` pixels.
pub fn remove_small(m: &BinaryMask, min_size: usize, conn: Connectivity) -> BinaryMask {
    let cc = connected_components(m, conn);
    let (h, w) = m.dims();
    BinaryMask::from_fn(h, w, |y, x| {
        let l = cc.labels[y * w + x];
        l != 0 && cc.sizes[l as usize - 1] >= min_size
    })
}
