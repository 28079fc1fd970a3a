//! Binary images: ground truths, field-of-view masks, pyramid levels and
//! morphology operands.

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.h, self.w)?;
        for y in 0..self.h.min(64) {
            let row: String = self
                .row(y)
                .iter()
                .map(|&v| if v == 1 { '#' } else { '.' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        assert!(h > 0 && w > 0, "mask dims must be positive");
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn ones(h: usize, w: usize) -> Self {
        let mut m = Self::zeros(h, w);
        m.data.fill(1);
        m
    }

    /// Builds a mask from 0/1 values; any other value is an error.
    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::shape(
                "BinaryMask",
                format!("{} values for {h}x{w}", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask value {v} is not binary"
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                m.data[y * w + x] = f(y, x) as u8;
            }
        }
        m
    }

    /// Parses rows of `0`/`1` characters; whitespace is ignored.
    pub fn from_rows(rows: &[&str]) -> Self {
        let parsed: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| {
                r.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| match c {
                        '1' | '#' => 1,
                        '0' | '.' => 0,
                        other => panic!("bad mask character {other:?}"),
                    })
                    .collect()
            })
            .collect();
        let w = parsed[0].len();
        assert!(parsed.iter().all(|r| r.len() == w), "ragged mask rows");
        Self::from_vec(parsed.len(), w, parsed.concat()).expect("valid rows")
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.w..(y + 1) * self.w]
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        assert!(
            y < self.h && x < self.w,
            "mask index ({y}, {x}) out of range"
        );
        self.data[y * self.w + x] == 1
    }

    /// Like [`get`](Self::get) but out-of-range coordinates read as background.
    pub fn get_or_zero(&self, y: isize, x: isize) -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < self.h
            && (x as usize) < self.w
            && self.data[y as usize * self.w + x as usize] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        assert!(
            y < self.h && x < self.w,
            "mask index ({y}, {x}) out of range"
        );
        self.data[y * self.w + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    fn check_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(u8, u8) -> u8) -> Result<Self> {
        self.check_dims(other, op)?;
        Ok(Self {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "and", |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "or", |a, b| a | b)
    }

    /// Exclusive or, computed as `|a - b|`.
    pub fn xor(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "xor", |a, b| (a as i8 - b as i8).unsigned_abs())
    }

    /// Set difference `self \ other`.
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "and_not", |a, b| a & (1 - b))
    }

    pub fn complement(&self) -> Self {
        Self {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Pixels set in both masks.
    pub fn overlap(&self, other: &Self) -> Result<usize> {
        self.check_dims(other, "overlap")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a & b == 1)
            .count())
    }

    /// Nearest-neighbour decimation by 2, sampling the top-left pixel of each
    /// 2x2 block.
    pub fn downsample_nearest(&self) -> Result<Self> {
        if !self.h.is_multiple_of(2) || !self.w.is_multiple_of(2) {
            return Err(Error::shape(
                "downsample_nearest",
                format!("dims {:?} are not even", self.dims()),
            ));
        }
        Ok(Self::from_fn(self.h / 2, self.w / 2, |y, x| {
            self.get(2 * y, 2 * x)
        }))
    }

    /// Replicates each pixel into a `factor x factor` block.
    pub fn upsample_nearest(&self, factor: usize) -> Self {
        assert!(factor >= 1, "upsample factor must be positive");
        Self::from_fn(self.h * factor, self.w * factor, |y, x| {
            self.get(y / factor, x / factor)
        })
    }

    /// Repeated top-left decimation by `2^levels`.
    pub fn downsample_pow2(&self, levels: usize) -> Result<Self> {
        let mut m = self.clone();
        for _ in 0..levels {
            m = m.downsample_nearest()?;
        }
        Ok(m)
    }
}
