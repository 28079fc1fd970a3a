//! Dense 4-D tensors in (batch, channel, height, width) order.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, Index, IndexMut, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Element type for tensors. `f64` is the verification precision, `f32` the
/// training precision.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + sealed::Kernel
    + 'static
{
    /// Converts an `f64` literal into this precision.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) mod sealed {
    /// Precision-specific dense kernels.
    pub trait Kernel: Sized {
        /// `c = a * b + beta * c` on strided matrices, `a` m x k and `b` k x n.
        ///
        /// # Safety
        /// Every addressed element must lie inside the pointed-to buffers and
        /// `c` must not alias `a` or `b`.
        #[allow(clippy::too_many_arguments)]
        unsafe fn gemm_raw(
            m: usize,
            k: usize,
            n: usize,
            a: *const Self,
            a_strides: (isize, isize),
            b: *const Self,
            b_strides: (isize, isize),
            beta: Self,
            c: *mut Self,
            c_strides: (isize, isize),
        );
    }

    macro_rules! kernel {
        ($t:ty, $f:path) => {
            impl Kernel for $t {
                unsafe fn gemm_raw(
                    m: usize,
                    k: usize,
                    n: usize,
                    a: *const Self,
                    (rsa, csa): (isize, isize),
                    b: *const Self,
                    (rsb, csb): (isize, isize),
                    beta: Self,
                    c: *mut Self,
                    (rsc, csc): (isize, isize),
                ) {
                    // SAFETY: forwarded caller contract.
                    unsafe { $f(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
                }
            }
        };
    }
    kernel!(f32, matrixmultiply::sgemm);
    kernel!(f64, matrixmultiply::dgemm);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    fn offset(&self, b: usize, ch: usize, y: usize, x: usize) -> Option<usize> {
        (b < self.n && ch < self.c && y < self.h && x < self.w)
            .then(|| ((b * self.c + ch) * self.h + y) * self.w + x)
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        assert!(
            shape.n > 0 && shape.c > 0 && shape.h > 0 && shape.w > 0,
            "tensor dims must be positive, got {shape}"
        );
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape("tensor", format!("zero dimension in {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {shape}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut i = 0;
        for b in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        t.data[i] = f(b, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> Option<T> {
        self.shape.offset(b, c, y, x).map(|i| self.data[i])
    }

    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (b * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn item(&self, b: usize) -> &[T] {
        let s = self.shape.item();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Stacks equally shaped batch items along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?
            .shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", format!("{} vs {}", t.shape, first)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Self::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }

    /// Copies out batch item `b` as a tensor with n = 1.
    pub fn batch_item(&self, b: usize) -> Self {
        Self {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.item(b).to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> Index<[usize; 4]> for Tensor<T> {
    type Output = T;

    fn index(&self, [b, c, y, x]: [usize; 4]) -> &T {
        match self.shape.offset(b, c, y, x) {
            Some(i) => &self.data[i],
            None => panic!("index ({b}, {c}, {y}, {x}) out of range for {}", self.shape),
        }
    }
}

impl<T: Real> IndexMut<[usize; 4]> for Tensor<T> {
    fn index_mut(&mut self, [b, c, y, x]: [usize; 4]) -> &mut T {
        match self.shape.offset(b, c, y, x) {
            Some(i) => &mut self.data[i],
            None => panic!("index ({b}, {c}, {y}, {x}) out of range for {}", self.shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_matches_dims() {
        let t = Tensor::<f64>::zeros(Shape::new(2, 3, 4, 5));
        assert_eq!(t.data().len(), 120);
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::<f32>::from_fn(Shape::new(2, 2, 2, 3), |b, c, y, x| {
            (b * 1000 + c * 100 + y * 10 + x) as f32
        });
        assert_eq!(t[[1, 0, 1, 2]], 1012.0);
        assert_eq!(t.data()[6 + 5], 112.0);
        assert_eq!(t.plane(1, 1)[4], 1111.0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_index_panics() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let _ = t[[0, 0, 2, 0]];
    }

    #[test]
    fn out_of_range_get_is_none() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert_eq!(t.get(0, 0, 0, 2), None);
        assert_eq!(t.get(0, 0, 1, 1), Some(0.0));
    }

    #[test]
    fn from_vec_rejects_wrong_length_and_zero_dims() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(0, 1, 2, 2), vec![]).is_err());
    }

    #[test]
    fn stack_and_split_items() {
        let a = Tensor::<f64>::filled(Shape::new(1, 2, 2, 2), 1.0);
        let b = Tensor::<f64>::filled(Shape::new(1, 2, 2, 2), 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.batch_item(1), b);
    }
}
