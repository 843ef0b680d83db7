//! Central finite differences, the independent oracle for every gradient.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_grad<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut point = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = point[i];
        point[i] = original + h;
        let plus = f(&point);
        point[i] = original - h;
        let minus = f(&point);
        point[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle {
                coordinate: i,
                message: format!("f(θ ± h e_i) = ({plus}, {minus})"),
            });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(1, |b|)`: relative for large gradients, absolute near zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let g = finite_difference_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_map_has_zero_gradient() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn exponential() {
        let g = finite_difference_grad(|x| x[0].exp(), &[1.0], 1e-5).unwrap();
        assert!((g[0] - std::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn non_finite_values_name_the_coordinate() {
        let err = finite_difference_grad(|x| if x[1] > 0.5 { f64::NAN } else { 0.0 }, &[0.0, 0.5], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Oracle { coordinate: 1, .. }));
    }

    #[test]
    fn step_must_be_positive() {
        assert!(finite_difference_grad(|x| x[0], &[0.0], 0.0).is_err());
    }
}
