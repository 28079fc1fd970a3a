//! Differentiable primitives with hand-written adjoints.
//!
//! Every forward op is paired with a `*_backward` function that maps the
//! gradient of a scalar objective w.r.t. the op's output to gradients w.r.t.
//! each of its inputs. Batch items are processed in parallel; each item's
//! arithmetic runs in a fixed order, so results do not depend on the thread
//! schedule.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod deconv;
mod gemm;
pub mod gradcheck;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_eval_backward, batchnorm_train, BatchStats,
    BnTrace, BN_EPS, BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use deconv::{deconv2x2, deconv2x2_backward, DeconvGrads};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolTrace};

/// `dst[y][x] += a * src[y + dy][x + dx]` wherever both indices are in range.
pub(crate) fn accumulate_shifted<T: crate::Real>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    a: T,
) {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let sx0 = (x0 as isize + dx) as usize;
        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (o, &v) in d.iter_mut().zip(s) {
            *o += a * v;
        }
    }
}

/// Range of destination indices `i` with `0 <= i + d < n`.
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}
