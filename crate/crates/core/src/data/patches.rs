//! Random 48x48 training patches and the block-based train/validation split.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::FundusSample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{Shape, Tensor};

pub const PATCH_SIZE: usize = 48;
/// Offset from a patch's center to its top-left corner.
pub const PATCH_HALF: usize = PATCH_SIZE / 2 - 1;
/// Patches drawn per training image in the full-scale setup.
pub const FULL_SCALE_PATCHES_PER_IMAGE: usize = 9500;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Unsplit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Index into [`PatchSet::sources`].
    pub source: usize,
    /// `(y, x)` in source image coordinates.
    pub center: (usize, usize),
    /// Row-major `PATCH_SIZE x PATCH_SIZE` intensities, zero outside the image.
    pub image: Vec<f32>,
    pub label: BinaryMask,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSource {
    pub id: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub split: Split,
    pub sources: Vec<PatchSource>,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Joins sets drawn from different images into one unsplit set.
    pub fn concat(sets: Vec<PatchSet>) -> PatchSet {
        let mut out = PatchSet {
            split: Split::Unsplit,
            sources: Vec::new(),
            patches: Vec::new(),
        };
        for set in sets {
            let offset = out.sources.len();
            out.sources.extend(set.sources);
            out.patches.extend(set.patches.into_iter().map(|mut p| {
                p.source += offset;
                p
            }));
        }
        out
    }

    /// Stacks the selected patches into a `(n, 1, 48, 48)` batch plus their
    /// labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<&BinaryMask>) {
        let mut data = Vec::with_capacity(indices.len() * PATCH_SIZE * PATCH_SIZE);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.patches[i].image);
            labels.push(&self.patches[i].label);
        }
        let shape = Shape::new(indices.len(), 1, PATCH_SIZE, PATCH_SIZE);
        (
            Tensor::from_vec(shape, data).expect("patch buffers are 48x48"),
            labels,
        )
    }
}

/// The patch centered at `center`; its top-left corner is `center - 23`.
pub fn patch_at(sample: &FundusSample, source: usize, center: (usize, usize)) -> Patch {
    let (h, w) = sample.dims();
    let plane = sample.image.plane(0, 0);
    let mut image = vec![0.0; PATCH_SIZE * PATCH_SIZE];
    let mut label = BinaryMask::zeros(PATCH_SIZE, PATCH_SIZE);
    for py in 0..PATCH_SIZE {
        let y = center.0 as isize - PATCH_HALF as isize + py as isize;
        if y < 0 || y >= h as isize {
            continue;
        }
        for px in 0..PATCH_SIZE {
            let x = center.1 as isize - PATCH_HALF as isize + px as isize;
            if x < 0 || x >= w as isize {
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            image[py * PATCH_SIZE + px] = plane[y * w + x];
            label.set(py, px, sample.gt.get(y, x));
        }
    }
    Patch {
        source,
        center,
        image,
        label,
    }
}

/// `count` patches with centers drawn uniformly over the whole image.
pub fn extract_patches(sample: &FundusSample, count: usize, seed: u64) -> PatchSet {
    let (h, w) = sample.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches = (0..count)
        .map(|_| {
            let center = (rng.random_range(0..h), rng.random_range(0..w));
            patch_at(sample, 0, center)
        })
        .collect();
    PatchSet {
        split: Split::Unsplit,
        sources: vec![PatchSource {
            id: sample.id.clone(),
            height: h,
            width: w,
        }],
        patches,
    }
}

/// `per_image` patches from every sample, image `i` drawing from stream `i`.
pub fn extract_all(samples: &[FundusSample], per_image: usize, seed: u64) -> PatchSet {
    PatchSet::concat(
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let stream = seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                extract_patches(s, per_image, stream)
            })
            .collect(),
    )
}

/// Moves every patch centered inside randomly placed square blocks into the
/// validation set until it holds at least `val_fraction` of all patches.
pub fn block_split(
    set: PatchSet,
    val_fraction: f64,
    block_size: usize,
    seed: u64,
) -> Result<(PatchSet, PatchSet)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if block_size == 0 {
        return Err(Error::InvalidArgument("block_size must be positive".into()));
    }
    if set.is_empty() {
        return Err(Error::Dataset("cannot split an empty patch set".into()));
    }
    let target = (val_fraction * set.len() as f64).ceil() as usize;
    let mut in_val = vec![false; set.len()];
    let mut val_count = 0;
    let mut by_source: Vec<Vec<usize>> = vec![Vec::new(); set.sources.len()];
    for (i, p) in set.patches.iter().enumerate() {
        by_source[p.source].push(i);
    }
    let candidates: Vec<usize> = (0..set.sources.len())
        .filter(|&s| !by_source[s].is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every patch is eventually covered, so this bound is generous
    let max_draws = 1_000_000;
    let mut draws = 0;
    while val_count < target {
        draws += 1;
        if draws > max_draws {
            return Err(Error::Dataset(format!(
                "block split stalled at {val_count} of {target} validation patches"
            )));
        }
        let s = *candidates.choose(&mut rng).expect("at least one source");
        let src = &set.sources[s];
        let top = rng.random_range(0..=src.height.saturating_sub(block_size));
        let left = rng.random_range(0..=src.width.saturating_sub(block_size));
        for &i in &by_source[s] {
            let (y, x) = set.patches[i].center;
            if !in_val[i]
                && (top..top + block_size).contains(&y)
                && (left..left + block_size).contains(&x)
            {
                in_val[i] = true;
                val_count += 1;
            }
        }
    }
    let mut train = Vec::with_capacity(set.len() - val_count);
    let mut val = Vec::with_capacity(val_count);
    for (p, v) in set.patches.into_iter().zip(in_val) {
        if v {
            val.push(p);
        } else {
            train.push(p);
        }
    }
    Ok((
        PatchSet {
            split: Split::Train,
            sources: set.sources.clone(),
            patches: train,
        },
        PatchSet {
            split: Split::Val,
            sources: set.sources,
            patches: val,
        },
    ))
}
