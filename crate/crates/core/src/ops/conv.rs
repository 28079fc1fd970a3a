use rayon::prelude::*;

use super::accumulate_shifted;
use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn check_geometry(kernel: usize, pad: usize) -> Result<()> {
    match (kernel, pad) {
        (3, 1) | (1, 0) => Ok(()),
        _ => Err(Error::InvalidArgument(format!(
            "conv2d supports k=3/pad=1 and k=1/pad=0, got k={kernel}/pad={pad}"
        ))),
    }
}

fn check_shapes<T>(input: Shape, weight: &[T], cout: usize, kernel: usize) -> Result<()> {
    let expected = cout * input.c * kernel * kernel;
    if weight.len() != expected {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight has {} elements, expected {cout}x{}x{kernel}x{kernel} for input {input}",
                weight.len(),
                input.c
            ),
        ));
    }
    if cout == 0 {
        return Err(Error::shape("conv2d", "zero output channels"));
    }
    Ok(())
}

/// Unfolds one item `(c, h, w)` into `(c * k * k, h * w)` columns: row
/// `(ci, ky, kx)` holds the input shifted by `(ky - pad, kx - pad)`, zero
/// outside the image.
fn im2col<T: Real>(item: &[T], c: usize, h: usize, w: usize, kernel: usize, pad: usize) -> Vec<T> {
    let plane = h * w;
    let mut col = vec![T::zero(); c * kernel * kernel * plane];
    for ci in 0..c {
        let src = &item[ci * plane..(ci + 1) * plane];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                accumulate_shifted(dst, src, h, w, dy, dx, T::one());
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds columns back, summing overlapping taps.
fn col2im<T: Real>(
    col: &[T],
    dst: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    pad: usize,
) {
    let plane = h * w;
    for ci in 0..c {
        let out = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dy = ky as isize - pad as isize;
                let dx = kx as isize - pad as isize;
                accumulate_shifted(
                    out,
                    &col[row * plane..(row + 1) * plane],
                    h,
                    w,
                    -dy,
                    -dx,
                    T::one(),
                );
            }
        }
    }
}

/// Stride-1, shape-preserving 2-D convolution (cross-correlation).
///
/// `weight` is laid out `(cout, cin, k, k)`; `cout` is `bias.len()`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_geometry(kernel, pad)?;
    let s = input.shape();
    let cout = bias.len();
    check_shapes(s, weight, cout, kernel)?;
    let out_shape = Shape::new(s.n, cout, s.h, s.w);
    let mut out = Tensor::zeros(out_shape);
    let plane = s.plane();
    let depth = s.c * kernel * kernel;
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(b, out_item)| {
            let in_item = input.item(b);
            for (co, dst) in out_item.chunks_mut(plane).enumerate() {
                dst.fill(bias[co]);
            }
            let unfolded;
            let col = if kernel == 1 {
                in_item
            } else {
                unfolded = im2col(in_item, s.c, s.h, s.w, kernel, pad);
                &unfolded
            };
            gemm(
                Mat::new(weight, cout, depth),
                Mat::new(col, depth, plane),
                T::one(),
                out_item,
            );
        });
    Ok(out)
}

/// Adjoint of [`conv2d`]. Weight and bias gradients are summed over the batch
/// in item order.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    kernel: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    check_geometry(kernel, pad)?;
    let s = input.shape();
    let g = grad_out.shape();
    if (g.n, g.h, g.w) != (s.n, s.h, s.w) {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {g} vs input {s}"),
        ));
    }
    let cout = g.c;
    check_shapes(s, weight, cout, kernel)?;
    let plane = s.plane();
    let depth = s.c * kernel * kernel;

    let mut grad_input = Tensor::zeros(s);
    let per_item: Vec<(Vec<T>, Vec<T>)> = grad_input
        .data_mut()
        .par_chunks_mut(s.item())
        .enumerate()
        .map(|(b, gi_item)| {
            let in_item = input.item(b);
            let go_item = grad_out.item(b);
            let gb: Vec<T> = go_item
                .chunks(plane)
                .map(|r| r.iter().copied().sum())
                .collect();
            let mut gw = vec![T::zero(); weight.len()];
            let go = Mat::new(go_item, cout, plane);
            if kernel == 1 {
                gemm(go, Mat::new(in_item, depth, plane).t(), T::zero(), &mut gw);
                gemm(Mat::new(weight, cout, depth).t(), go, T::zero(), gi_item);
            } else {
                let col = im2col(in_item, s.c, s.h, s.w, kernel, pad);
                gemm(go, Mat::new(&col, depth, plane).t(), T::zero(), &mut gw);
                let mut gcol = vec![T::zero(); depth * plane];
                gemm(Mat::new(weight, cout, depth).t(), go, T::zero(), &mut gcol);
                col2im(&gcol, gi_item, s.c, s.h, s.w, kernel, pad);
            }
            (gw, gb)
        })
        .collect();

    let mut weight_grad = vec![T::zero(); weight.len()];
    let mut bias_grad = vec![T::zero(); cout];
    for (gw, gb) in per_item {
        for (a, b) in weight_grad.iter_mut().zip(gw) {
            *a += b;
        }
        for (a, b) in bias_grad.iter_mut().zip(gb) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: weight_grad,
        bias: bias_grad,
    })
}
