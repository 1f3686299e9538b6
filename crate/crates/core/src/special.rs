//! Error-function helpers hardened against cancellation and overflow.
//!
//! The expected-count formulas subtract error functions whose arguments grow
//! like `x0*/sqrt(t*)`; past |x| ~ 6 both `erf` values saturate to ±1 in f64
//! and the difference is pure roundoff. These helpers switch to the scaled
//! complementary error function `erfcx(x) = exp(x^2) erfc(x)` so every factor
//! stays O(1) and exponents are combined analytically.

/// Switch from direct `erf` differences to `erfcx` formulations past this
/// argument magnitude.
pub const ERF_DIRECT_LIMIT: f64 = 5.0;

pub use libm::{erf, erfc};

/// Scaled complementary error function `exp(x^2) erfc(x)` for `x >= 0`.
///
/// Direct evaluation overflows past x ~ 26; the Laplace continued fraction
/// takes over well before that.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0, "erfcx is only needed for nonnegative arguments");
    if x <= ERF_DIRECT_LIMIT {
        return (x * x).exp() * erfc(x);
    }
    // sqrt(pi) e^{x^2} erfc(x) = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut frac = 0.0;
    for k in (1..=30).rev() {
        frac = (k as f64 / 2.0) / (x + frac);
    }
    1.0 / (core::f64::consts::PI.sqrt() * (x + frac))
}

/// `exp(expo) * (erf(u1) - erf(u0))` without saturation loss, for `u0 <= u1`.
///
/// When both arguments sit past `ERF_DIRECT_LIMIT` on the same side, the
/// difference is rewritten through `erfcx` so the exponent `expo` absorbs the
/// Gaussian decay analytically instead of multiplying a saturated difference.
pub fn exp_erf_diff(expo: f64, u0: f64, u1: f64) -> f64 {
    debug_assert!(u0 <= u1);
    if u0 >= ERF_DIRECT_LIMIT {
        // erf(u1) - erf(u0) = erfc(u0) - erfc(u1), both arguments positive
        return (expo - u0 * u0).exp() * erfcx(u0) - (expo - u1 * u1).exp() * erfcx(u1);
    }
    if u1 <= -ERF_DIRECT_LIMIT {
        // mirror through erf(-x) = -erf(x)
        return (expo - u1 * u1).exp() * erfcx(-u1) - (expo - u0 * u0).exp() * erfcx(-u0);
    }
    expo.exp() * (erf(u1) - erf(u0))
}
