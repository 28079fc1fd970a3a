use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Records, for every pooled output element, the flat input index it was
/// taken from.
#[derive(Clone, Debug)]
pub struct PoolTrace {
    pub input_shape: Shape,
    pub argmax: Vec<usize>,
}

/// 2x2 max-pooling with stride 2. Ties go to the first window position in
/// row-major order.
pub fn maxpool2x2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolTrace)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "maxpool2x2",
            format!("height and width must be even, got {s}"),
        ));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.len()];
    let src = input.data();
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(plane, (dst, arg))| {
            let base = plane * s.plane();
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + 2 * y * s.w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * s.w + 2 * x + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    dst[y * ow + x] = src[best];
                    arg[y * ow + x] = best;
                }
            }
        });
    Ok((
        out,
        PoolTrace {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Real>(grad_out: &Tensor<T>, trace: &PoolTrace) -> Tensor<T> {
    assert_eq!(
        grad_out.data().len(),
        trace.argmax.len(),
        "pool grad length"
    );
    let mut g = Tensor::zeros(trace.input_shape);
    let gd = g.data_mut();
    for (&i, &v) in trace.argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    g
}
