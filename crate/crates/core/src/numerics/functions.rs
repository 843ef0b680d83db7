//! Activations and the isotropic Gaussian log-density.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Numerically stable softmax. The maximum is always subtracted first.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("log-softmax of an empty vector".into()));
    }
    let lse = log_sum_exp(v);
    Ok(v.iter().map(|x| x - lse).collect())
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// `log N(x | mean, I)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64]) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::Dimension(format!(
            "gaussian log-density: point has length {}, mean has length {}",
            x.len(),
            mean.len()
        )));
    }
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(gaussian_log_normalizer(x.len()) - 0.5 * sq)
}

/// `log (2π)^{-d/2}`, the normalizing constant of a unit-covariance Gaussian.
pub fn gaussian_log_normalizer(d: usize) -> f64 {
    -(d as f64 / 2.0) * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(matches!(softmax(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&[0.0]), vec![0.5]);
        assert!(sigmoid(&[-50.0])[0] < 1e-20);
        assert!(sigmoid(&[-50.0])[0] > 0.0);
        for x in [-30.0, -2.5, 0.1, 7.0, 40.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_log_density_examples() {
        let two_pi_ln = (2.0 * PI).ln();
        let at_mode = gaussian_log_density(&[0.3, -1.0], &[0.3, -1.0]).unwrap();
        assert!((at_mode + two_pi_ln).abs() < 1e-12);
        assert!((at_mode + 1.837877).abs() < 1e-6);
        let d1 = gaussian_log_density(&[2.0], &[2.0]).unwrap();
        assert!((d1 + 0.918939).abs() < 1e-6);
        let off = gaussian_log_density(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((off + 2.337877).abs() < 1e-6);
        assert!(gaussian_log_density(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-500.0f64..500.0, 1..64)) {
            let p = softmax(&v).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn softmax_is_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..16), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v).unwrap();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn density_is_maximal_at_mean(
            mean in prop::collection::vec(-5.0f64..5.0, 1..8),
            offset in prop::collection::vec(-3.0f64..3.0, 8),
        ) {
            let x: Vec<f64> = mean.iter().zip(&offset).map(|(m, o)| m + o).collect();
            prop_assume!(x != mean);
            let at_mean = gaussian_log_density(&mean, &mean).unwrap();
            prop_assert!(gaussian_log_density(&x, &mean).unwrap() < at_mean);
        }
    }
}
