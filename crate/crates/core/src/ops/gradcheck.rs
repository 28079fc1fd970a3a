//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` at one
/// coordinate.
pub fn central_difference(
    f: &mut impl FnMut(&[f64]) -> f64,
    point: &mut [f64],
    index: usize,
    eps: f64,
) -> Result<f64> {
    let x0 = point[index];
    point[index] = x0 + eps;
    let plus = f(point);
    point[index] = x0 - eps;
    let minus = f(point);
    point[index] = x0;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at coordinate {index} evaluated to {plus} / {minus}"
        )));
    }
    Ok((plus - minus) / (2.0 * eps))
}

/// Compares `analytic` against central differences of the scalar closure `f`
/// at every coordinate of `point` and returns the largest relative error.
pub fn gradcheck(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    if point.len() != analytic.len() {
        return Err(Error::shape(
            "gradcheck",
            format!("{} coordinates, {} gradients", point.len(), analytic.len()),
        ));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient {i} is {a}")));
        }
        let numeric = central_difference(&mut f, &mut x, i, eps)?;
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
pub(crate) fn uniform_vec(rng: &mut impl rand::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_closure_is_exact() {
        let point = vec![0.3, -1.2, 4.0, 7.5];
        let err = gradcheck(|x| x.iter().map(|v| 2.0 * v).sum(), &point, &[2.0; 4], 0.5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = gradcheck(|x| x[0] * x[0], &[3.0], &[5.0], 1e-6).unwrap();
        assert!((err - 1.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = gradcheck(|x| (x[0]).ln(), &[0.0], &[1.0], 1e-3);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn denominator_is_floored() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
