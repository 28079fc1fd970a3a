use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub struct DeconvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn check<T>(input: Shape, weight: &[T], cout: usize) -> Result<()> {
    if cout == 0 || weight.len() != input.c * cout * 4 {
        return Err(Error::shape(
            "deconv2x2",
            format!(
                "weight has {} elements, expected {}x{cout}x2x2 for input {input}",
                weight.len(),
                input.c
            ),
        ));
    }
    Ok(())
}

/// 2x2 transposed convolution with stride 2. Every input pixel writes
/// `value * weight[ci, co]` into its own disjoint 2x2 output block.
///
/// `weight` is laid out `(cin, cout, 2, 2)`; `cout` is `bias.len()`.
pub fn deconv2x2<T: Real>(input: &Tensor<T>, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let s = input.shape();
    let cout = bias.len();
    check(s, weight, cout)?;
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let out_shape = Shape::new(s.n, cout, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let plane = s.plane();
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(b, out_item)| {
            let in_item = input.item(b);
            for co in 0..cout {
                let dst = &mut out_item[co * oh * ow..(co + 1) * oh * ow];
                dst.fill(bias[co]);
                for ci in 0..s.c {
                    let src = &in_item[ci * plane..(ci + 1) * plane];
                    let k = &weight[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
                    for y in 0..s.h {
                        for a in 0..2 {
                            let row = &mut dst[(2 * y + a) * ow..(2 * y + a + 1) * ow];
                            let (k0, k1) = (k[2 * a], k[2 * a + 1]);
                            for (x, &v) in src[y * s.w..(y + 1) * s.w].iter().enumerate() {
                                row[2 * x] += v * k0;
                                row[2 * x + 1] += v * k1;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn deconv2x2_backward<T: Real>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
) -> Result<DeconvGrads<T>> {
    let s = input.shape();
    let g = grad_out.shape();
    if g.n != s.n || g.h != 2 * s.h || g.w != 2 * s.w {
        return Err(Error::shape(
            "deconv2x2_backward",
            format!("grad {g} vs input {s}"),
        ));
    }
    let cout = g.c;
    check(s, weight, cout)?;
    let (oh, ow) = (g.h, g.w);
    let plane = s.plane();

    let mut grad_input = Tensor::zeros(s);
    let per_item: Vec<(Vec<T>, Vec<T>)> = grad_input
        .data_mut()
        .par_chunks_mut(s.item())
        .enumerate()
        .map(|(b, gi_item)| {
            let in_item = input.item(b);
            let go_item = grad_out.item(b);
            let mut gw = vec![T::zero(); weight.len()];
            let mut gb = vec![T::zero(); cout];
            for co in 0..cout {
                let go = &go_item[co * oh * ow..(co + 1) * oh * ow];
                gb[co] = go.iter().copied().sum();
                for ci in 0..s.c {
                    let src = &in_item[ci * plane..(ci + 1) * plane];
                    let gi = &mut gi_item[ci * plane..(ci + 1) * plane];
                    let widx = (ci * cout + co) * 4;
                    let k = &weight[widx..widx + 4];
                    let mut acc = [T::zero(); 4];
                    for y in 0..s.h {
                        for x in 0..s.w {
                            let v = src[y * s.w + x];
                            let top = (2 * y) * ow + 2 * x;
                            let bot = top + ow;
                            let blk = [go[top], go[top + 1], go[bot], go[bot + 1]];
                            gi[y * s.w + x] +=
                                blk[0] * k[0] + blk[1] * k[1] + blk[2] * k[2] + blk[3] * k[3];
                            for t in 0..4 {
                                acc[t] += v * blk[t];
                            }
                        }
                    }
                    gw[widx..widx + 4].copy_from_slice(&acc);
                }
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
    Ok(DeconvGrads {
        input: grad_input,
        weight: weight_grad,
        bias: bias_grad,
    })
}
