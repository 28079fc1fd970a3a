//! Safe row-major matrix product on top of the precision kernels.

use crate::tensor::Real;

/// A row-major `rows x cols` matrix view, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical dimensions after the optional transpose.
    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c`, with `c` row-major of the product's shape.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.dims();
    let (kb, n) = b.dims();
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(a.data.len(), a.rows * a.cols, "lhs buffer size");
    assert_eq!(b.data.len(), b.rows * b.cols, "rhs buffer size");
    assert_eq!(c.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertions above bound every strided access, and `c` is a
    // unique borrow distinct from the shared borrows `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.strides(),
            b.data.as_ptr(),
            b.strides(),
            beta,
            c.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}
