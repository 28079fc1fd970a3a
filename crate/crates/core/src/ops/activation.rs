use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward *output* is positive, which is the
/// same set as a positive input. The subgradient at 0 is 0.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(output.shape(), grad_out.shape(), "relu_backward shape");
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Adjoint of [`sigmoid`] expressed through its output `y`: `g * y * (1 - y)`.
pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(output.shape(), grad_out.shape(), "sigmoid_backward shape");
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * y * (T::one() - y);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{gradcheck, test_rng, uniform_vec};
    use crate::tensor::Shape;

    fn row(v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v).unwrap()
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let x = row(vec![-1.0, 0.0, 2.0]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&y, &row(vec![1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_adjoint_away_from_kink() {
        let mut rng = test_rng(11);
        let x: Vec<f64> = uniform_vec(&mut rng, 64, -1.0, 1.0)
            .into_iter()
            .filter(|v| v.abs() >= 1e-3)
            .collect();
        let probe = uniform_vec(&mut rng, x.len(), -1.0, 1.0);
        let y = relu(&row(x.clone()));
        let g = relu_backward(&y, &row(probe.clone()));
        let f = |p: &[f64]| {
            relu(&row(p.to_vec()))
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        assert!(gradcheck(f, &x, g.data(), 1e-4).unwrap() < 1e-6);
    }

    #[test]
    fn sigmoid_values() {
        let y = sigmoid(&row(vec![0.0, 50.0, -50.0, 800.0, -800.0]));
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() <= f64::EPSILON);
        assert!(y.data()[2] > 0.0 && y.data()[2] < 1e-20);
        assert_eq!(y.data()[3], 1.0);
        assert_eq!(y.data()[4], 0.0);
        assert!(y.all_finite());
    }

    #[test]
    fn sigmoid_derivative_at_one() {
        let y = sigmoid(&row(vec![1.0]));
        let g = sigmoid_backward(&y, &row(vec![1.0]));
        assert!((g.data()[0] - 0.196612).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_adjoint_matches_finite_differences() {
        let mut rng = test_rng(12);
        let x = uniform_vec(&mut rng, 32, -6.0, 6.0);
        let probe = uniform_vec(&mut rng, 32, -1.0, 1.0);
        let y = sigmoid(&row(x.clone()));
        let g = sigmoid_backward(&y, &row(probe.clone()));
        let f = |p: &[f64]| {
            sigmoid(&row(p.to_vec()))
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        assert!(gradcheck(f, &x, g.data(), 1e-4).unwrap() < 1e-6);
    }
}
