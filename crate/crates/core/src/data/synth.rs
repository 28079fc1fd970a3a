//! Procedural vessel-like images for desk-scale experiments.
//!
//! Each image holds branching trees traced by a random walk. A branch starts
//! with a diameter of up to 6 px, tapers as it walks, and spawns thinner
//! children. Vessels are rendered brighter than a noisy, unevenly lit
//! background, with contrast growing with vessel width so thin branches are
//! the hard cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::FundusSample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{Shape, Tensor};

const TARGET_FRACTION: f64 = 0.08;
const MAX_TREES: usize = 64;
/// Growth stops once this fraction of the canvas is vessel.
const MAX_FRACTION: f64 = 0.12;
const MIN_DIAMETER: f64 = 1.0;
const MAX_DIAMETER: f64 = 6.0;

struct Branch {
    y: f64,
    x: f64,
    heading: f64,
    diameter: f64,
}

struct Canvas {
    size: usize,
    /// Largest diameter drawn over each pixel, 0 for background.
    width: Vec<f32>,
    painted: usize,
}

impl Canvas {
    fn stamp(&mut self, cy: f64, cx: f64, diameter: f64) {
        let r = diameter / 2.0;
        let n = self.size as isize;
        let (y0, y1) = ((cy - r).floor() as isize, (cy + r).ceil() as isize);
        let (x0, x1) = ((cx - r).floor() as isize, (cx + r).ceil() as isize);
        for y in y0.max(0)..=y1.min(n - 1) {
            for x in x0.max(0)..=x1.min(n - 1) {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let hit = dy * dy + dx * dx <= r * r
                    || (y == cy.floor() as isize && x == cx.floor() as isize);
                if hit {
                    let cell = &mut self.width[y as usize * self.size + x as usize];
                    if *cell == 0.0 {
                        self.painted += 1;
                    }
                    *cell = cell.max(diameter as f32);
                }
            }
        }
    }

    fn inside(&self, y: f64, x: f64) -> bool {
        let n = self.size as f64;
        (0.0..n).contains(&y) && (0.0..n).contains(&x)
    }

    fn vessel_fraction(&self) -> f64 {
        self.painted as f64 / self.width.len() as f64
    }
}

fn grow_tree(canvas: &mut Canvas, rng: &mut ChaCha8Rng) {
    let n = canvas.size as f64;
    // roots sit on the border and head inwards
    let t = rng.random_range(0.0..n);
    let (y, x, heading) = match rng.random_range(0..4) {
        0 => (0.0, t, std::f64::consts::FRAC_PI_2),
        1 => (n - 1e-3, t, -std::f64::consts::FRAC_PI_2),
        2 => (t, 0.0, 0.0),
        _ => (t, n - 1e-3, std::f64::consts::PI),
    };
    let jitter = Normal::new(0.0, 0.12).expect("valid spread");
    let mut stack = vec![Branch {
        y,
        x,
        heading: heading + rng.random_range(-0.6..0.6),
        diameter: rng.random_range(3.0..MAX_DIAMETER),
    }];
    let max_steps = 4 * canvas.size;
    while let Some(mut b) = stack.pop() {
        for _ in 0..max_steps {
            if !canvas.inside(b.y, b.x)
                || b.diameter < MIN_DIAMETER
                || canvas.vessel_fraction() >= MAX_FRACTION
            {
                break;
            }
            canvas.stamp(b.y, b.x, b.diameter);
            b.heading += jitter.sample(rng);
            b.y += b.heading.sin();
            b.x += b.heading.cos();
            b.diameter *= 0.99;
            if rng.random_bool(0.025) && b.diameter > 1.5 {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                stack.push(Branch {
                    y: b.y,
                    x: b.x,
                    heading: b.heading + side * rng.random_range(0.45..1.05),
                    diameter: (b.diameter * rng.random_range(0.55..0.85)).max(MIN_DIAMETER),
                });
            }
        }
    }
}

fn render(canvas: &Canvas, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = canvas.size;
    let noise = Normal::new(0.0, 0.04).expect("valid spread");
    let (gy, gx) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let base = rng.random_range(0.2..0.3);
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 / n as f64, (i % n) as f64 / n as f64);
            let w = f64::from(canvas.width[i]);
            let contrast = if w > 0.0 {
                0.08 + 0.32 * (w / MAX_DIAMETER).min(1.0)
            } else {
                0.0
            };
            let v = base + gy * (y - 0.5) + gx * (x - 0.5) + contrast + noise.sample(rng);
            v.clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// One synthetic image of side `size` from its own random stream.
pub fn synth_sample(seed: u64, index: usize, size: usize) -> Result<FundusSample> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "synthetic image size must be a positive multiple of 16, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut canvas = Canvas {
        size,
        width: vec![0.0; size * size],
        painted: 0,
    };
    for _ in 0..MAX_TREES {
        grow_tree(&mut canvas, &mut rng);
        if canvas.vessel_fraction() >= TARGET_FRACTION {
            break;
        }
    }
    let gt = BinaryMask::from_vec(
        size,
        size,
        canvas.width.iter().map(|&w| u8::from(w > 0.0)).collect(),
    )?;
    let image = Tensor::from_vec(Shape::new(1, 1, size, size), render(&canvas, &mut rng))?;
    FundusSample::new(
        format!("synth{index:03}"),
        image,
        gt,
        Some(BinaryMask::ones(size, size)),
    )
}

/// `n` synthetic images; image `i` depends only on `(seed, i, size)`.
pub fn synth_generate(seed: u64, size: usize, n: usize) -> Result<Vec<FundusSample>> {
    (0..n).map(|i| synth_sample(seed, i, size)).collect()
}
