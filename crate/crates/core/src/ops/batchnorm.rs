use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of one training-mode call; `var` is the unbiased
/// estimate that feeds the running average.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Saved state for the training-mode adjoint.
#[derive(Clone, Debug)]
pub struct BnTrace<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn check<T: Real>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    let c = input.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!(
                "{c} channels but gamma/beta have {}/{}",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    Ok(())
}

/// Training-mode batch normalization over (n, h, w) per channel.
pub fn batchnorm_train<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> Result<(Tensor<T>, BnTrace<T>, BatchStats<T>)> {
    check(input, gamma, beta)?;
    let s = input.shape();
    let count = s.n * s.plane();
    let count_t = T::lit(count as f64);
    let eps = T::lit(BN_EPS);
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    let mut stats = BatchStats {
        mean: Vec::with_capacity(s.c),
        var: Vec::with_capacity(s.c),
    };
    for c in 0..s.c {
        let mut sum = T::zero();
        for b in 0..s.n {
            sum += input.plane(b, c).iter().copied().sum::<T>();
        }
        let mean = sum / count_t;
        let mut sq = T::zero();
        for b in 0..s.n {
            sq += input
                .plane(b, c)
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>();
        }
        let var = sq / count_t;
        let istd = T::one() / (var + eps).sqrt();
        for b in 0..s.n {
            let src = input.plane(b, c);
            let xn = normalized.plane_mut(b, c);
            for (d, &v) in xn.iter_mut().zip(src) {
                *d = (v - mean) * istd;
            }
            let xn = normalized.plane(b, c).to_vec();
            for (d, v) in out.plane_mut(b, c).iter_mut().zip(xn) {
                *d = gamma[c] * v + beta[c];
            }
        }
        inv_std.push(istd);
        stats.mean.push(mean);
        let unbiased = if count > 1 {
            sq / T::lit((count - 1) as f64)
        } else {
            var
        };
        stats.var.push(unbiased);
    }
    Ok((
        out,
        BnTrace {
            normalized,
            inv_std,
        },
        stats,
    ))
}

/// Gradients `(input, gamma, beta)` of training-mode batch normalization,
/// including the dependence of the batch mean and variance on the input.
pub fn batchnorm_backward<T: Real>(
    trace: &BnTrace<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = grad_out.shape();
    assert_eq!(s, trace.normalized.shape(), "batchnorm_backward shape");
    let count = T::lit((s.n * s.plane()) as f64);
    let mut gx = Tensor::zeros(s);
    let mut ggamma = Vec::with_capacity(s.c);
    let mut gbeta = Vec::with_capacity(s.c);
    for (c, (&gain, &inv_std)) in gamma.iter().zip(&trace.inv_std).enumerate() {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..s.n {
            let g = grad_out.plane(b, c);
            let xn = trace.normalized.plane(b, c);
            sum_g += g.iter().copied().sum::<T>();
            sum_gx += g.iter().zip(xn).map(|(&p, &q)| p * q).sum::<T>();
        }
        let scale = gain * inv_std / count;
        for b in 0..s.n {
            let g = grad_out.plane(b, c).to_vec();
            let xn = trace.normalized.plane(b, c).to_vec();
            for ((d, gv), xv) in gx.plane_mut(b, c).iter_mut().zip(g).zip(xn) {
                *d = scale * (count * gv - sum_g - xv * sum_gx);
            }
        }
        ggamma.push(sum_gx);
        gbeta.push(sum_g);
    }
    (gx, ggamma, gbeta)
}

/// Inference-mode normalization with running statistics.
pub fn batchnorm_eval<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    check(input, gamma, beta)?;
    let s = input.shape();
    if running_mean.len() != s.c || running_var.len() != s.c {
        return Err(Error::shape("batchnorm", "running statistics length"));
    }
    let eps = T::lit(BN_EPS);
    let mut out = input.clone();
    for b in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] / (running_var[c] + eps).sqrt();
            let shift = beta[c] - running_mean[c] * scale;
            for v in out.plane_mut(b, c) {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`batchnorm_eval`] w.r.t. its input (running statistics are
/// constants here).
pub fn batchnorm_eval_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    running_mean: &[T],
    running_var: &[T],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = input.shape();
    let eps = T::lit(BN_EPS);
    let mut gx = grad_out.clone();
    let mut ggamma = vec![T::zero(); s.c];
    let mut gbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let istd = T::one() / (running_var[c] + eps).sqrt();
        for b in 0..s.n {
            let x = input.plane(b, c);
            let g = grad_out.plane(b, c);
            for (&gv, &xv) in g.iter().zip(x) {
                ggamma[c] += gv * (xv - running_mean[c]) * istd;
                gbeta[c] += gv;
            }
            for v in gx.plane_mut(b, c) {
                *v = *v * gamma[c] * istd;
            }
        }
    }
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{gradcheck, test_rng, uniform_vec};
    use crate::tensor::Shape;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f64>::filled(Shape::new(2, 2, 3, 3), 4.2);
        let (y, _, stats) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
        assert!((stats.mean[0] - 4.2).abs() < 1e-12);
    }

    #[test]
    fn output_has_zero_mean_unit_variance_per_channel() {
        let mut rng = test_rng(41);
        let s = Shape::new(3, 2, 4, 5);
        let x = Tensor::from_vec(s, uniform_vec(&mut rng, s.len(), -3.0, 5.0)).unwrap();
        let (y, _, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.plane(b, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        assert!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let mut rng = test_rng(42);
        let s = Shape::new(2, 3, 3, 4);
        let x = uniform_vec(&mut rng, s.len(), -2.0, 2.0);
        let gamma = uniform_vec(&mut rng, 3, 0.5, 1.5);
        let beta = uniform_vec(&mut rng, 3, -0.5, 0.5);
        let probe = uniform_vec(&mut rng, s.len(), -1.0, 1.0);
        let xt = Tensor::from_vec(s, x.clone()).unwrap();
        let (_, trace, _) = batchnorm_train(&xt, &gamma, &beta).unwrap();
        let (gx, gg, gb) =
            batchnorm_backward(&trace, &gamma, &Tensor::from_vec(s, probe.clone()).unwrap());
        let nx = x.len();
        let f = |p: &[f64]| {
            let xt = Tensor::from_vec(s, p[..nx].to_vec()).unwrap();
            let (y, _, _) = batchnorm_train(&xt, &p[nx..nx + 3], &p[nx + 3..]).unwrap();
            y.data().iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut point = x;
        point.extend(&gamma);
        point.extend(&beta);
        let mut analytic = gx.into_vec();
        analytic.extend(gg);
        analytic.extend(gb);
        let err = gradcheck(f, &point, &analytic, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let x = Tensor::<f64>::filled(Shape::new(1, 1, 2, 2), 3.0);
        let y = batchnorm_eval(&x, &[2.0], &[1.0], &[1.0], &[4.0]).unwrap();
        let expected = 2.0 * (3.0 - 1.0) / (4.0 + BN_EPS).sqrt() + 1.0;
        assert!(y.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }
}
