//! Generative measurement model.
//!
//! Node `i` observes `y_i = theta* + omega_i * eta_i` with `eta_i ~ N(0, 1)`
//! and `omega_i` equal to `alpha` (reliable) with probability `1 - p` or to
//! `beta` (faulty) with probability `p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Noise class of a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Alpha,
    Beta,
}

impl Label {
    /// Noise standard deviation carried by the label.
    #[inline]
    pub fn sigma(self, params: &ModelParams) -> f64 {
        match self {
            Label::Alpha => params.alpha,
            Label::Beta => params.beta,
        }
    }

    /// Precision weight `sigma^-2`.
    #[inline]
    pub fn precision(self, params: &ModelParams) -> f64 {
        match self {
            Label::Alpha => params.inv_alpha2,
            Label::Beta => params.inv_beta2,
        }
    }

    /// Prior mass of the label.
    #[inline]
    pub fn prior(self, params: &ModelParams) -> f64 {
        match self {
            Label::Alpha => 1.0 - params.p,
            Label::Beta => params.p,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Alpha => "ALPHA",
            Label::Beta => "BETA",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawParams {
    theta_star: f64,
    alpha: f64,
    beta: f64,
    p: f64,
}

/// Ground truth of the generative model. The classification threshold is
/// computed once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    theta_star: f64,
    alpha: f64,
    beta: f64,
    p: f64,
    inv_alpha2: f64,
    inv_beta2: f64,
    delta: Option<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.theta_star, raw.alpha, raw.beta, raw.p)
    }
}

impl From<ModelParams> for RawParams {
    fn from(m: ModelParams) -> Self {
        RawParams {
            theta_star: m.theta_star,
            alpha: m.alpha,
            beta: m.beta,
            p: m.p,
        }
    }
}

impl ModelParams {
    pub fn new(theta_star: f64, alpha: f64, beta: f64, p: f64) -> Result<Self> {
        if !theta_star.is_finite() {
            return param_err(format!("theta_star must be finite, got {theta_star}"));
        }
        if !(alpha > 0.0 && alpha.is_finite() && beta.is_finite() && alpha < beta) {
            return param_err(format!("need 0 < alpha < beta, got alpha={alpha}, beta={beta}"));
        }
        if !(p > 0.0 && p < 1.0) {
            return param_err(format!("need 0 < p < 1, got p={p}"));
        }
        Ok(ModelParams {
            theta_star,
            alpha,
            beta,
            p,
            inv_alpha2: 1.0 / (alpha * alpha),
            inv_beta2: 1.0 / (beta * beta),
            delta: threshold(alpha, beta, p).ok(),
        })
    }

    /// `theta* = 0, alpha = 0.3, beta = 10, p = 0.25`, the setting used
    /// throughout the experiments.
    pub fn reference() -> Self {
        ModelParams::new(0.0, 0.3, 10.0, 0.25).expect("reference parameters are valid")
    }

    pub fn theta_star(&self) -> f64 {
        self.theta_star
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn inv_alpha2(&self) -> f64 {
        self.inv_alpha2
    }

    pub fn inv_beta2(&self) -> f64 {
        self.inv_beta2
    }

    /// `1/alpha^2 - 1/beta^2`, the extra precision of a reliable node.
    pub fn precision_gap(&self) -> f64 {
        self.inv_alpha2 - self.inv_beta2
    }

    /// `((1-p)/p) * (beta/alpha)`.
    pub fn odds_ratio(&self) -> f64 {
        (1.0 - self.p) / self.p * (self.beta / self.alpha)
    }

    /// Cached classification half-width.
    pub fn delta(&self) -> Result<f64> {
        self.delta
            .ok_or_else(|| Error::DegenerateThreshold(self.odds_ratio()))
    }

    pub fn with_theta_star(&self, theta_star: f64) -> Result<Self> {
        ModelParams::new(theta_star, self.alpha, self.beta, self.p)
    }
}

/// Classification half-width `delta` for raw parameters.
///
/// `delta = sqrt(2 ln(((1-p)/p)(beta/alpha)) / (1/alpha^2 - 1/beta^2))`.
pub fn threshold(alpha: f64, beta: f64, p: f64) -> Result<f64> {
    let odds = (1.0 - p) / p * (beta / alpha);
    if !(odds > 1.0) {
        return Err(Error::DegenerateThreshold(odds));
    }
    let gap = 1.0 / (alpha * alpha) - 1.0 / (beta * beta);
    if !(gap > 0.0) {
        return param_err("alpha must be strictly smaller than beta");
    }
    let delta = (2.0 * odds.ln() / gap).sqrt();
    if delta.is_finite() && delta > 0.0 {
        Ok(delta)
    } else {
        Err(Error::DegenerateThreshold(odds))
    }
}

/// Recomputes the threshold from `params` without the cache.
pub fn delta_threshold(params: &ModelParams) -> Result<f64> {
    threshold(params.alpha, params.beta, params.p)
}

/// Normal density with mean `mean` and standard deviation `sigma`.
#[inline]
pub fn normal_pdf(y: f64, mean: f64, sigma: f64) -> f64 {
    normal_ln_pdf(y, mean, sigma).exp()
}

#[inline]
pub fn normal_ln_pdf(y: f64, mean: f64, sigma: f64) -> f64 {
    let z = (y - mean) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Two-component mixture density, `p` allowed on the closed interval.
pub fn gaussian_mixture_pdf(y: f64, theta: f64, alpha: f64, beta: f64, p: f64) -> f64 {
    (1.0 - p) * normal_pdf(y, theta, alpha) + p * normal_pdf(y, theta, beta)
}

/// Marginal density of one measurement under `params`.
pub fn mixture_density(y: f64, params: &ModelParams) -> f64 {
    gaussian_mixture_pdf(y, params.theta_star, params.alpha, params.beta, params.p)
}

/// Measurements plus the hidden labels that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub y: Vec<f64>,
    pub omega_true: Vec<Label>,
    pub seed: u64,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Draw `n` independent measurements. Bit-identical for equal `(params, n, seed)`.
pub fn generate(params: &ModelParams, n: usize, seed: u64) -> Result<Observations> {
    if n == 0 {
        return param_err("need at least one node");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    let mut omega_true = Vec::with_capacity(n);
    for _ in 0..n {
        let label = if rng.random::<f64>() < params.p {
            Label::Beta
        } else {
            Label::Alpha
        };
        let eta: f64 = rng.sample(StandardNormal);
        y.push(params.theta_star + label.sigma(params) * eta);
        omega_true.push(label);
    }
    Ok(Observations {
        y,
        omega_true,
        seed,
    })
}

/// Label a single measurement: reliable iff strictly inside the window.
#[inline]
pub fn classify_one(theta: f64, y: f64, delta: f64) -> Label {
    if (y - theta).abs() < delta {
        Label::Alpha
    } else {
        Label::Beta
    }
}

/// Label every measurement against a common estimate `theta`.
pub fn classify(theta: f64, y: &[f64], delta: f64) -> Vec<Label> {
    y.iter().map(|&yi| classify_one(theta, yi, delta)).collect()
}

/// Precision-weighted mean of `y` with weights `omega_i^-2`.
pub fn weighted_theta(omega: &[Label], y: &[f64], params: &ModelParams) -> Result<f64> {
    if y.is_empty() {
        return param_err("weighted mean of an empty measurement vector");
    }
    if omega.len() != y.len() {
        return param_err(format!(
            "label vector has length {} but there are {} measurements",
            omega.len(),
            y.len()
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&label, &yi) in omega.iter().zip(y) {
        let w = label.precision(params);
        num += w * yi;
        den += w;
    }
    // Clamp guards the last-ulp overshoot of num/den for constant data.
    let (lo, hi) = min_max(y);
    Ok((num / den).clamp(lo, hi))
}

pub(crate) fn min_max(y: &[f64]) -> (f64, f64) {
    y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

pub(crate) fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}
