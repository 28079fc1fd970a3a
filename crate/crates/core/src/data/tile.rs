//! Full-image inference by overlap-tile: disjoint 32x32 cores, each
//! predicted from a 48x48 window carrying 8 px of context on every side.

use crate::error::{Error, Result};
use crate::model::{forward, Mode, ParameterStore};
use crate::tensor::{Shape, Tensor};

pub const CORE: usize = 32;
pub const CONTEXT: usize = 8;
pub const WINDOW: usize = CORE + 2 * CONTEXT;

/// Windows evaluated per forward call.
const CHUNK: usize = 16;

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Top-left corners of the cores covering an `h x w` image, padded up to a
/// multiple of the core size.
pub fn core_origins(h: usize, w: usize) -> Vec<(usize, usize)> {
    let rows = h.div_ceil(CORE);
    let cols = w.div_ceil(CORE);
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * CORE, c * CORE)))
        .collect()
}

/// The reflected `WINDOW x WINDOW` context around the core at `origin`,
/// as `in_channels` planes.
fn window(image: &Tensor<f32>, origin: (usize, usize), out: &mut [f32]) {
    let s = image.shape();
    for ch in 0..s.c {
        let plane = image.plane(0, ch);
        let dst = &mut out[ch * WINDOW * WINDOW..(ch + 1) * WINDOW * WINDOW];
        for wy in 0..WINDOW {
            let y = reflect(origin.0 as isize - CONTEXT as isize + wy as isize, s.h);
            let row = &plane[y * s.w..(y + 1) * s.w];
            for wx in 0..WINDOW {
                let x = reflect(origin.1 as isize - CONTEXT as isize + wx as isize, s.w);
                dst[wy * WINDOW + wx] = row[x];
            }
        }
    }
}

/// Probability map `(1, 1, h, w)` for a single image `(1, c, h, w)`.
pub fn overlap_tile_predict(
    params: &ParameterStore<f32>,
    image: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::shape(
            "overlap_tile_predict",
            format!("expected a single image, got {s}"),
        ));
    }
    let origins = core_origins(s.h, s.w);
    let mut out = Tensor::zeros(Shape::new(1, 1, s.h, s.w));
    let per_window = s.c * WINDOW * WINDOW;
    for chunk in origins.chunks(CHUNK) {
        let mut data = vec![0.0; chunk.len() * per_window];
        for (dst, &o) in data.chunks_mut(per_window).zip(chunk) {
            window(image, o, dst);
        }
        let batch = Tensor::from_vec(Shape::new(chunk.len(), s.c, WINDOW, WINDOW), data)?;
        let pass = forward(params, &batch, Mode::Eval)?;
        let probs = &pass.outputs[0];
        let plane = out.plane_mut(0, 0);
        for (b, &(oy, ox)) in chunk.iter().enumerate() {
            let pred = probs.plane(b, 0);
            for cy in 0..CORE.min(s.h - oy) {
                for cx in 0..CORE.min(s.w - ox) {
                    plane[(oy + cy) * s.w + ox + cx] = pred[(CONTEXT + cy) * WINDOW + CONTEXT + cx];
                }
            }
        }
    }
    Ok(out)
}
