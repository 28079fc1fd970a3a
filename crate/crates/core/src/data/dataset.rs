//! Fundus samples and the on-disk dataset layout.
//!
//! ```text
//! root/images/<stem>.<ext>   colour or gray fundus image
//! root/labels/<stem>.<ext>   vessel annotation, thresholded at 128
//! root/masks/<stem>.<ext>    optional field of view
//! ```
//!
//! Files are paired by stem. Failing an exact match, a partner may extend
//! the image stem after `_` (`01_manual1` pairs with `01`) or share its
//! leading `_` token (`21_manual1` pairs with `21_training`), so DRIVE-style
//! naming works without renaming.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::image_io::{read_gray, read_mask, write_gray8, write_mask, ColorMode};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FundusSample {
    pub id: String,
    /// `(1, 1, h, w)` intensities in `[0, 1]`.
    pub image: Tensor<f32>,
    pub gt: BinaryMask,
    pub fov: Option<BinaryMask>,
}

impl FundusSample {
    pub fn new(
        id: impl Into<String>,
        image: Tensor<f32>,
        gt: BinaryMask,
        fov: Option<BinaryMask>,
    ) -> Result<Self> {
        let id = id.into();
        let s = image.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::Dataset(format!(
                "{id}: image must be single-channel, got {s}"
            )));
        }
        let dims = (s.h, s.w);
        if gt.dims() != dims {
            return Err(Error::Dataset(format!(
                "{id}: label is {:?} but image is {dims:?}",
                gt.dims()
            )));
        }
        if let Some(f) = &fov {
            if f.dims() != dims {
                return Err(Error::Dataset(format!(
                    "{id}: fov mask is {:?} but image is {dims:?}",
                    f.dims()
                )));
            }
        }
        Ok(Self { id, image, gt, fov })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gt.dims()
    }

    /// The field of view, or the whole image when none is given.
    pub fn fov_or_full(&self) -> BinaryMask {
        self.fov
            .clone()
            .unwrap_or_else(|| BinaryMask::ones(self.gt.height(), self.gt.width()))
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["pgm", "ppm", "pnm", "png", "tif", "tiff", "gif"];

/// Image files directly inside `dir`, keyed by stem; empty if `dir` is
/// missing.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

fn unique<'a>(
    stem: &str,
    mut hits: impl Iterator<Item = (&'a String, &'a PathBuf)>,
) -> Result<Option<&'a PathBuf>> {
    match (hits.next(), hits.next()) {
        (None, _) => Ok(None),
        (Some((_, p)), None) => Ok(Some(p)),
        (Some((a, _)), Some((b, _))) => Err(Error::Dataset(format!(
            "{stem}: ambiguous partner files {a} and {b}"
        ))),
    }
}

fn leading_token(stem: &str) -> &str {
    stem.split('_').next().unwrap_or(stem)
}

/// The partner of `stem`: the file with the same stem, else the unique file
/// whose stem extends it after `_`, else the unique file sharing its leading
/// `_`-separated token.
pub fn find_partner<'a>(
    files: &'a BTreeMap<String, PathBuf>,
    stem: &str,
) -> Result<Option<&'a PathBuf>> {
    if let Some(p) = files.get(stem) {
        return Ok(Some(p));
    }
    let prefix = format!("{stem}_");
    if let Some(p) = unique(stem, files.iter().filter(|(k, _)| k.starts_with(&prefix)))? {
        return Ok(Some(p));
    }
    let token = leading_token(stem);
    unique(
        stem,
        files.iter().filter(|(k, _)| leading_token(k) == token),
    )
}

/// Loads every sample under `root`, sorted by stem. An empty or missing
/// `images/` directory yields an empty list.
pub fn load_dataset(root: &Path, mode: ColorMode) -> Result<Vec<FundusSample>> {
    let images = list_images(&root.join("images"))?;
    if images.is_empty() {
        log::warn!("no images found under {}", root.join("images").display());
        return Ok(Vec::new());
    }
    let labels = list_images(&root.join("labels"))?;
    let masks = list_images(&root.join("masks"))?;
    let mut out = Vec::with_capacity(images.len());
    for (stem, path) in &images {
        let label = find_partner(&labels, stem)?
            .ok_or_else(|| Error::Dataset(format!("{stem}: no label file in labels/")))?;
        let fov = find_partner(&masks, stem)?
            .map(|p| read_mask(p))
            .transpose()?;
        out.push(FundusSample::new(
            stem.clone(),
            read_gray(path, mode)?,
            read_mask(label)?,
            fov,
        )?);
    }
    Ok(out)
}

/// Writes samples in the layout read by [`load_dataset`], as PGM files.
pub fn save_dataset(root: &Path, samples: &[FundusSample]) -> Result<()> {
    for sub in ["images", "labels", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        let (h, w) = s.dims();
        write_gray8(
            s.image.data(),
            h,
            w,
            &root.join("images").join(format!("{}.pgm", s.id)),
        )?;
        write_mask(&s.gt, &root.join("labels").join(format!("{}.pgm", s.id)))?;
        if let Some(f) = &s.fov {
            write_mask(f, &root.join("masks").join(format!("{}.pgm", s.id)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn sample(id: &str, h: usize, w: usize) -> FundusSample {
        let image = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
            ((y * w + x) % 256) as f32 / 255.0
        });
        let gt = BinaryMask::from_fn(h, w, |y, x| (y + x) % 3 == 0);
        FundusSample::new(id, image, gt, Some(BinaryMask::ones(h, w))).unwrap()
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("a", 8, 12), sample("b", 5, 7)];
        save_dataset(dir.path(), &samples).unwrap();
        let back = load_dataset(dir.path(), ColorMode::Green).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn empty_directory_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path(), ColorMode::Green)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn dimension_mismatch_names_the_stem() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("s07", 6, 6)]).unwrap();
        write_mask(&BinaryMask::zeros(5, 6), &dir.path().join("labels/s07.pgm")).unwrap();
        let err = load_dataset(dir.path(), ColorMode::Green).unwrap_err();
        assert!(err.to_string().contains("s07"), "{err}");
    }

    #[test]
    fn missing_label_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("x", 4, 4)]).unwrap();
        std::fs::remove_file(dir.path().join("labels/x.pgm")).unwrap();
        let err = load_dataset(dir.path(), ColorMode::Green).unwrap_err();
        assert!(err.to_string().contains("x: no label"), "{err}");
    }

    #[test]
    fn suffixed_partner_names_pair_by_prefix() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("21", 4, 4)]).unwrap();
        std::fs::rename(
            dir.path().join("labels/21.pgm"),
            dir.path().join("labels/21_manual1.pgm"),
        )
        .unwrap();
        std::fs::rename(
            dir.path().join("masks/21.pgm"),
            dir.path().join("masks/21_mask.pgm"),
        )
        .unwrap();
        let back = load_dataset(dir.path(), ColorMode::Green).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].fov.is_some());
    }

    #[test]
    fn drive_naming_pairs_by_leading_token() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[sample("21_training", 4, 4)]).unwrap();
        std::fs::rename(
            dir.path().join("labels/21_training.pgm"),
            dir.path().join("labels/21_manual1.pgm"),
        )
        .unwrap();
        std::fs::rename(
            dir.path().join("masks/21_training.pgm"),
            dir.path().join("masks/21_training_mask.pgm"),
        )
        .unwrap();
        let back = load_dataset(dir.path(), ColorMode::Green).unwrap();
        assert_eq!(back[0].id, "21_training");
        assert!(back[0].fov.is_some());
    }
}
