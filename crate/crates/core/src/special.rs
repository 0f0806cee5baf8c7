//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! `ln_gamma` uses the Lanczos approximation (g = 7, nine terms) on
//! `x >= 0.5` and the shift `lnΓ(x) = lnΓ(x + 1) - ln x` below that, so the
//! reflection formula (and its cancellation near zero) is never needed on the
//! positive axis. `digamma` and `trigamma` shift the argument up past
//! [`ASYMPTOTIC_FROM`] with their recurrences and finish with the asymptotic
//! Bernoulli series.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments at or above this value go straight to the asymptotic series.
const ASYMPTOTIC_FROM: f64 = 10.0;

fn check_domain(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite("special function argument"));
    }
    if x <= 0.0 {
        return Err(Error::NonPositive {
            what: "special function argument",
            value: x,
        });
    }
    Ok(())
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    debug_assert!(x >= 0.5);
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_domain(x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        lanczos_ln_gamma(x + 1.0) - x.ln()
    } else {
        lanczos_ln_gamma(x)
    }
}

/// Digamma ψ(x) = d/dx lnΓ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain(x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // -sum B_2k / (2k x^2k), k = 1..7
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2
                        * (-1.0 / 252.0
                            + inv2
                                * (1.0 / 240.0
                                    + inv2
                                        * (-1.0 / 132.0
                                            + inv2 * (691.0 / 32_760.0 + inv2 * (-1.0 / 12.0)))))));
    shift + x.ln() - 0.5 * inv + series
}

/// Trigamma ψ₁(x) = d/dx ψ(x) for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain(x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/2x^2 + sum B_2k / x^(2k+1)
    let series = inv
        * inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2
                        * (1.0 / 42.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * (7.0 / 6.0)))))));
    shift + inv + 0.5 * inv2 + series
}
