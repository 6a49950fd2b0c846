//! Scalar special functions: log-gamma, digamma, log-beta, and the
//! regularized incomplete beta function.
//!
//! `ln_gamma` uses the Lanczos approximation (g = 7, 9 coefficients), which
//! is accurate to better than 1e-13 relative error over the positive reals.
//! `digamma` shifts the argument up by the recurrence psi(x) = psi(x+1) - 1/x
//! until it is large enough for the asymptotic series (the approach of
//! Algorithm AS 103). `betainc` evaluates the continued fraction with the
//! modified Lentz method.

use crate::error::{Error, Result};

/// Lanczos coefficients for g = 7.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

const LN_SQRT_TWO_PI: f64 = 0.9189385332046727;

/// Natural log of the gamma function for `x > 0`.
///
/// Arguments in `(0, 0.5)` are handled through the reflection formula so the
/// Lanczos sum is only ever evaluated on its well-conditioned branch.
/// Returns NaN for `x <= 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < 0.5 {
        // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln()
            - ln_gamma(1.0 - x);
    }
    let t = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (t + i as f64);
    }
    let g = t + 7.5;
    LN_SQRT_TWO_PI + (t + 0.5) * g.ln() - g + acc.ln()
}

/// Digamma function (derivative of `ln_gamma`) for `x > 0`.
///
/// Small arguments are shifted upward with psi(x) = psi(x+1) - 1/x; arguments
/// of at least 10 use the asymptotic series through the 1/x^10 term, whose
/// truncation error at the switch point is around 2e-14.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let w = inv * inv;
    let series = w
        * (1.0 / 12.0
            - w * (1.0 / 120.0 - w * (1.0 / 252.0 - w * (1.0 / 240.0 - w * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// Natural log of the beta function `B(a, b)` for `a, b > 0`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0` and
/// `x` in `[0, 1]`. This is the CDF of the Beta(a, b) distribution.
pub fn betainc(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "betainc requires a, b > 0, got a={a}, b={b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "betainc requires x in [0, 1], got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    // exp(a ln x + b ln(1-x) - ln B(a, b)); shared by both branches below.
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    // The continued fraction converges fastest for x below the split point.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x) / b)
    }
}

/// Continued fraction for `betainc`, evaluated with the modified Lentz
/// method. Assumes the caller has already applied the symmetry transform so
/// that convergence is rapid.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        // Even step.
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
