use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Distance kept from ±1 when clamping cosines, so that `sqrt(1 - cos^2)` never hits zero.
pub const COS_CLAMP_EPS: f64 = 1e-7;

/// Cosine of the angle between `a` and `b`. Errors with `ZeroNorm { row: 0 }` or
/// `{ row: 1 }` naming the zero argument.
pub fn cosine_similarity<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "cosine similarity",
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.dot(&a).sqrt();
    if !(na > T::zero()) {
        return Err(Error::ZeroNorm { row: 0 });
    }
    let nb = b.dot(&b).sqrt();
    if !(nb > T::zero()) {
        return Err(Error::ZeroNorm { row: 1 });
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Clamps a cosine into `[-1 + eps, 1 - eps]`. The second value is the derivative of
/// the clamp: one inside the range, zero where it saturates.
#[inline]
pub fn clamp_cosine<T: Real>(cos: T) -> (T, T) {
    let hi = T::one() - T::lit(COS_CLAMP_EPS);
    let lo = -hi;
    if cos > hi {
        (hi, T::zero())
    } else if cos < lo {
        (lo, T::zero())
    } else {
        (cos, T::one())
    }
}

/// `cos(theta + m)` from `cos(theta)`.
///
/// Once `theta + m >= pi` the shifted cosine stops decreasing in `theta`; past that
/// point the monotone continuation `cos(theta) - m sin(m)` is used instead.
#[inline]
pub fn cos_plus_margin<T: Real>(cos_theta: T, m: T) -> T {
    if m == T::zero() {
        return cos_theta;
    }
    if cos_theta <= -m.cos() {
        return cos_theta - m * m.sin();
    }
    let sin_theta = (T::one() - cos_theta * cos_theta).max(T::zero()).sqrt();
    cos_theta * m.cos() - sin_theta * m.sin()
}

/// Derivative of [`cos_plus_margin`] with respect to `cos_theta`.
#[inline]
pub fn cos_plus_margin_grad<T: Real>(cos_theta: T, m: T) -> T {
    if m == T::zero() || cos_theta <= -m.cos() {
        return T::one();
    }
    let sin_theta = (T::one() - cos_theta * cos_theta).max(T::zero()).sqrt();
    m.cos() + cos_theta * m.sin() / sin_theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        let v = array![0.3, -1.2, 2.0];
        assert!((cosine_similarity(v.view(), v.view()).unwrap() - 1.0f64).abs() < 1e-15);
        let (a, b) = (array![1.0, 0.0], array![0.0, 1.0]);
        assert_eq!(cosine_similarity::<f64>(a.view(), b.view()).unwrap(), 0.0);
        let (a, b) = (array![0.6, 0.8], array![1.0, 0.0]);
        assert!((cosine_similarity::<f64>(a.view(), b.view()).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_a_domain_error() {
        let (a, z) = (array![1.0f64, 0.0], array![0.0f64, 0.0]);
        assert_eq!(cosine_similarity(a.view(), z.view()), Err(Error::ZeroNorm { row: 1 }));
        assert_eq!(cosine_similarity(z.view(), a.view()), Err(Error::ZeroNorm { row: 0 }));
    }

    #[test]
    fn clamp_keeps_interior_values() {
        assert_eq!(clamp_cosine(0.25f64), (0.25, 1.0));
        assert_eq!(clamp_cosine(1.0f64), (1.0 - 1e-7, 0.0));
        assert_eq!(clamp_cosine(-1.0f64), (-1.0 + 1e-7, 0.0));
    }

    #[test]
    fn margin_examples() {
        assert!((cos_plus_margin(1.0f64, 0.2) - 0.2f64.cos()).abs() < 1e-15);
        assert!((cos_plus_margin(1.0f64, 0.2) - 0.980_066_577_841_241_6).abs() < 1e-12);
        assert!((cos_plus_margin(0.0f64, 0.2) + 0.198_669_330_795_061_2).abs() < 1e-12);
        for c in [-0.9, -0.3, 0.0, 0.4, 0.99] {
            assert_eq!(cos_plus_margin(c, 0.0f64), c);
        }
    }

    #[test]
    fn margin_matches_angle_form_and_falls_back_past_pi() {
        let m = 0.3f64;
        for theta in [0.1f64, 0.7, 1.5, 2.5] {
            assert!((cos_plus_margin(theta.cos(), m) - (theta + m).cos()).abs() < 1e-13);
        }
        let theta = 3.0f64;
        assert!(theta + m >= std::f64::consts::PI);
        assert_eq!(cos_plus_margin(theta.cos(), m), theta.cos() - m * m.sin());
    }

    #[test]
    fn margin_derivative_matches_central_difference() {
        let m = 0.2f64;
        for c in [-0.95f64, -0.5, 0.0, 0.3, 0.9] {
            let h = 1e-6;
            let fd = (cos_plus_margin(c + h, m) - cos_plus_margin(c - h, m)) / (2.0 * h);
            assert!((fd - cos_plus_margin_grad(c, m)).abs() < 1e-6, "c={c}");
        }
    }
}
