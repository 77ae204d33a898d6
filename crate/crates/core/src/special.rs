//! Standard normal distribution helpers.
//!
//! The complementary error function comes from `libm` (a port of the FreeBSD
//! msun routines, accurate to about one ulp in double precision). Values are
//! evaluated in `f64` regardless of the caller's scalar type.

use crate::scalar::Scalar;

/// Standard normal CDF, `Φ(x)`.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(phi(x.as_f64()))
}

/// Probability mass of a standard normal inside `[a, b]`, `Φ(b) − Φ(a)`.
///
/// Evaluated on the tail closest to the interval, so intervals far out in
/// either tail keep their relative precision.
pub fn normal_interval_mass<T: Scalar>(a: T, b: T) -> T {
    T::lit(interval_mass(a.as_f64(), b.as_f64()))
}

pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub(crate) fn interval_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        phi(b) - phi(a)
    } else {
        1.0 - phi(a) - upper_tail(b)
    }
}
