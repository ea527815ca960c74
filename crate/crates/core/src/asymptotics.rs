//! Large-network limit of the relative classification error.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{threshold, ModelParams};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SERIES_CUTOFF: f64 = 2.5;

/// Complementary error function, `2/sqrt(pi) * int_x^inf exp(-t^2) dt`.
///
/// Absolute error below 1e-15 on `|x| <= 8`. Uses the everywhere-positive
/// Taylor series `erf(x) = 2/sqrt(pi) exp(-x^2) sum (2x^2)^n x / (2n+1)!!`
/// below the cutoff and the Laplace continued fraction above it.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < SERIES_CUTOFF {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// Error function, `1 - erfc(x)`.
pub fn erf(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        erf_series(x.abs()).copysign(x)
    } else {
        1.0 - erfc(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let two_x2 = 2.0 * x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    while term > 1e-17 * sum {
        n += 1;
        term *= two_x2 / f64::from(2 * n + 1);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-x * x).exp() * sum
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..1000 {
        let a = 0.5 * f64::from(k);
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    0.5 * FRAC_2_SQRT_PI * (-x * x).exp() / f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    /// Limit of `E d_H(omega_hat, omega*) / N` as `N -> inf`.
    pub q_value: f64,
    pub delta: f64,
    pub inputs: ModelParams,
}

/// `q = (1-p) erfc(delta/(alpha sqrt 2)) + p (1 - erfc(delta/(beta sqrt 2)))`
/// for raw parameters.
pub fn classification_error_limit(alpha: f64, beta: f64, p: f64) -> Result<f64> {
    let delta = threshold(alpha, beta, p)?;
    let s2 = std::f64::consts::SQRT_2;
    // 1 - erfc(z) is computed as erf(z) to keep precision when z is small.
    Ok((1.0 - p) * erfc(delta / (alpha * s2)) + p * erf(delta / (beta * s2)))
}

pub fn limit_classification_error(params: &ModelParams) -> Result<AsymptoticReport> {
    let delta = params.delta()?;
    let q_value = classification_error_limit(params.alpha(), params.beta(), params.p())?;
    Ok(AsymptoticReport {
        q_value,
        delta,
        inputs: *params,
    })
}
