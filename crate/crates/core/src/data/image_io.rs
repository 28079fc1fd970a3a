//! Raster file I/O for fundus images, label masks and probability maps.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{Shape, Tensor};

/// How colour images are reduced to one channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Green,
    /// ITU-R BT.601 luma.
    Luminance,
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads an image as `(1, 1, h, w)` intensities in `[0, 1]`.
pub fn read_gray(path: &Path, mode: ColorMode) -> Result<Tensor<f32>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = if img.color().has_color() {
        let rgb = img.to_rgb32f();
        rgb.pixels()
            .map(|Rgb([r, g, b])| match mode {
                ColorMode::Green => *g,
                ColorMode::Luminance => 0.299 * r + 0.587 * g + 0.114 * b,
            })
            .collect()
    } else {
        img.to_luma32f().into_raw()
    };
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Reads a label or field-of-view image, thresholding 8-bit gray at 128.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| u8::from(v >= 128))
        .collect();
    BinaryMask::from_vec(h as usize, w as usize, data)
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    let subtype = if img.color().has_color() {
        PnmSubtype::Pixmap(SampleEncoding::Binary)
    } else {
        PnmSubtype::Graymap(SampleEncoding::Binary)
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    img.write_with_encoder(PnmEncoder::new(&mut out).with_subtype(subtype))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))
}

/// Writes a mask as an 8-bit binary PGM with values 0 and 255.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dims();
    let data = mask.data().iter().map(|&v| v * 255).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches dims");
    save(DynamicImage::ImageLuma8(img), path)
}

/// Writes `[0, 1]` intensities as an 8-bit binary PGM, rounding to nearest.
pub fn write_gray8(plane: &[f32], h: usize, w: usize, path: &Path) -> Result<()> {
    let data = plane
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, data).ok_or_else(|| {
        Error::shape("write_gray8", format!("{} values for {h}x{w}", plane.len()))
    })?;
    save(DynamicImage::ImageLuma8(img), path)
}

/// Writes an RGB image from three `[0, 1]` planes as a binary PPM.
pub fn write_rgb8(planes: [&[f32]; 3], h: usize, w: usize, path: &Path) -> Result<()> {
    let n = h * w;
    if planes.iter().any(|p| p.len() != n) {
        return Err(Error::shape(
            "write_rgb8",
            format!("planes must hold {h}x{w} values"),
        ));
    }
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let data = (0..n).flat_map(|i| planes.map(|p| q(p[i]))).collect();
    let img = RgbImage::from_raw(w as u32, h as u32, data).expect("buffer matches dims");
    save(DynamicImage::ImageRgb8(img), path)
}

/// Writes probabilities as a 16-bit big-endian PGM, `round(p * 65535)`.
pub fn write_probability_map(plane: &[f32], h: usize, w: usize, path: &Path) -> Result<()> {
    if plane.len() != h * w {
        return Err(Error::shape(
            "write_probability_map",
            format!("{} values for {h}x{w}", plane.len()),
        ));
    }
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    bytes.reserve(2 * plane.len());
    for &p in plane {
        let q = (f64::from(p).clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a map written by [`write_probability_map`] (or any gray image) as
/// values in `[0, 1]`.
pub fn read_probability_map(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = open(path)?.to_luma32f();
    let (w, h) = img.dimensions();
    Ok((img.into_raw(), h as usize, w as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent P5/P6 header parser: magic, width, height, maxval, then
    /// exactly one whitespace byte before the raster.
    fn parse_netpbm(bytes: &[u8]) -> (String, usize, usize, usize, &[u8]) {
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if bytes[i] == b'#' {
                while bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).unwrap().to_string());
        }
        let n = |k: usize| fields[k].parse::<usize>().unwrap();
        (fields[0].clone(), n(1), n(2), n(3), &bytes[i + 1..])
    }

    #[test]
    fn probability_map_is_16_bit_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let values = [0.0f32, 1.0, 0.5, 0.25, 1e-6, 0.999_99];
        write_probability_map(&values, 2, 3, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (magic, w, h, maxval, raster) = parse_netpbm(&bytes);
        assert_eq!((magic.as_str(), w, h, maxval), ("P5", 3, 2, 65535));
        let decoded: Vec<u16> = raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect();
        assert_eq!(decoded, vec![0, 65535, 32768, 16384, 0, 65534]);
        let (back, bh, bw) = read_probability_map(&path).unwrap();
        assert_eq!((bh, bw), (2, 3));
        for (&r, &q) in back.iter().zip(&decoded) {
            assert_eq!(r, q as f32 / 65535.0);
        }
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let m = BinaryMask::from_rows(&["#..#", ".##.", "#.#."]);
        write_mask(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (magic, w, h, maxval, raster) = parse_netpbm(&bytes);
        assert_eq!((magic.as_str(), w, h, maxval), ("P5", 4, 3, 255));
        assert_eq!(raster.len(), 12);
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn colour_images_reduce_to_green_or_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let r = [1.0f32, 0.0];
        let g = [0.0f32, 0.6];
        let b = [0.2f32, 1.0];
        write_rgb8([&r, &g, &b], 1, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (magic, _, _, _, raster) = parse_netpbm(&bytes);
        assert_eq!(magic, "P6");
        assert_eq!(raster, &[255, 0, 51, 0, 153, 255]);
        let green = read_gray(&path, ColorMode::Green).unwrap();
        assert_eq!(green.data(), &[0.0, 153.0 / 255.0]);
        let luma = read_gray(&path, ColorMode::Luminance).unwrap();
        let want = 0.299 + 0.114 * 51.0 / 255.0;
        assert!((luma.data()[0] - want).abs() < 1e-6);
    }

    #[test]
    fn labels_threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        let vals = [0.0, 127.0 / 255.0, 128.0 / 255.0, 1.0];
        write_gray8(&vals, 1, 4, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), BinaryMask::from_rows(&["..##"]));
    }

    #[test]
    fn missing_and_garbage_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_mask(&dir.path().join("none.pgm")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.pgm");
        std::fs::write(&junk, b"P5\n2 2\n255\n\x01").unwrap();
        assert!(read_mask(&junk).is_err());
    }
}
