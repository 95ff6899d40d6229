//! Standard normal CDF helpers that stay accurate deep in the tails.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Smallest probability returned by [`log_cdf_diff`], as a logarithm.
pub const LOG_PROB_FLOOR: f64 = -690.7755278982137; // ln(1e-300)

const LOG_SQRT_2PI: f64 = 0.9189385332046728;
const ASYMPTOTIC_CUTOFF: f64 = -30.0;

#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LOG_SQRT_2PI
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Phi(x)`
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, using the asymptotic Mills-ratio series far in the lower
/// tail where `erfc` underflows.
pub fn log_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x > 0.0 {
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > ASYMPTOTIC_CUTOFF {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Phi(x) = phi(x)/(-x) * sum_k (-1)^k (2k-1)!! / x^(2k)
        let z = 1.0 / (x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            term *= -((2 * k - 1) as f64) * z;
            sum += term;
        }
        log_pdf(x) - (-x).ln() + sum.ln()
    }
}

/// `ln(1 - Phi(x))`
#[inline]
pub fn log_sf(x: f64) -> f64 {
    log_cdf(-x)
}

/// `ln(Phi(b) - Phi(a))` for `a <= b`, evaluated in whichever tail keeps the
/// subtraction well conditioned and floored at [`LOG_PROB_FLOOR`].
pub fn log_cdf_diff(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b || a.is_nan() || b.is_nan());
    let raw = if a == f64::NEG_INFINITY {
        log_cdf(b)
    } else if b == f64::INFINITY {
        log_sf(a)
    } else if a >= 0.0 {
        let (la, lb) = (log_sf(a), log_sf(b));
        la + log1mexp(lb - la)
    } else if b <= 0.0 {
        let (la, lb) = (log_cdf(a), log_cdf(b));
        lb + log1mexp(la - lb)
    } else {
        (-(cdf(a) + cdf(-b))).ln_1p()
    };
    raw.max(LOG_PROB_FLOOR)
}

/// `ln(1 - exp(x))` for `x <= 0`.
#[inline]
fn log1mexp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values from 50-digit arithmetic.
    #[test]
    fn log_cdf_reference_values() {
        let cases = [
            (-40.0, -804.60844201375378817),
            (-25.0, -316.63940800802025894),
            (-5.0, -15.064998393988725736),
            (-1.0, -1.8410216450092635058),
            (0.0, -0.69314718055994530942),
            (0.5, -0.36894641528865639307),
            (3.0, -0.0013508099647481937988),
            (10.0, -7.619853024160526066e-24),
        ];
        for (x, want) in cases {
            assert_relative_eq!(log_cdf(x), want, max_relative = 1e-13);
        }
    }

    #[test]
    fn asymptotic_branch_is_continuous() {
        // slope of ln Phi at -30 is phi/Phi = 30.0332596...
        let lo = log_cdf(ASYMPTOTIC_CUTOFF - 1e-6);
        let hi = log_cdf(ASYMPTOTIC_CUTOFF + 1e-6);
        assert_relative_eq!((hi - lo) / 2e-6, 30.033259667433677, max_relative = 1e-6);
    }

    #[test]
    fn log_cdf_diff_reference_values() {
        let cases = [
            (-1.0, 1.0, -0.38171514630212607227),
            (2.0, 3.0, -3.844353426334205621),
            (-3.0, -2.0, -3.844353426334205621),
            (8.0, 9.0, -35.013618593437148117),
            (-9.0, -8.5, -39.209373391744011011),
            (30.0, 31.0, -454.32124395634325204),
        ];
        for (a, b, want) in cases {
            assert_relative_eq!(log_cdf_diff(a, b), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_cdf_diff_infinite_edges_and_floor() {
        assert_eq!(log_cdf_diff(f64::NEG_INFINITY, f64::INFINITY), 0.0);
        assert_relative_eq!(log_cdf_diff(f64::NEG_INFINITY, 0.0), 0.5f64.ln(), epsilon = 1e-15);
        assert_eq!(log_cdf_diff(60.0, 61.0), LOG_PROB_FLOOR);
    }
}
