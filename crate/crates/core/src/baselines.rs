//! Centralized iterative baselines: alternating IML and EM.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::model::{classify, mean, min_max, normal_ln_pdf, weighted_theta, Label, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterOptions {
    pub eps: f64,
    pub max_iter: u64,
    pub trace: bool,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            eps: 1e-10,
            max_iter: 10_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeResult {
    pub theta: f64,
    /// Final labels (IML).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<Label>>,
    /// Final posterior probabilities of ALPHA (EM).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub responsibilities: Option<Vec<f64>>,
    pub iterations: u64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_trace: Option<Vec<f64>>,
    /// Observed-data log-likelihood after each EM iteration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik_trace: Option<Vec<f64>>,
}

impl IterativeResult {
    /// Labels for scoring: IML labels as-is, EM responsibilities rounded at 1/2.
    pub fn hard_labels(&self) -> Vec<Label> {
        match (&self.omega, &self.responsibilities) {
            (Some(omega), _) => omega.clone(),
            (None, Some(q)) => q
                .iter()
                .map(|&qi| if qi > 0.5 { Label::Alpha } else { Label::Beta })
                .collect(),
            (None, None) => Vec::new(),
        }
    }
}

fn check(y: &[f64], opts: &IterOptions) -> Result<()> {
    if y.is_empty() {
        return param_err("no measurements");
    }
    if !(opts.eps > 0.0) {
        return param_err(format!("eps must be positive, got {}", opts.eps));
    }
    Ok(())
}

/// Alternates `theta = weighted_theta(omega)` and `omega = classify(theta)`
/// starting from all-ALPHA labels.
pub fn iml_run(y: &[f64], params: &ModelParams, opts: &IterOptions) -> Result<IterativeResult> {
    check(y, opts)?;
    let delta = params.delta()?;
    let mut omega = vec![Label::Alpha; y.len()];
    let mut trace = opts.trace.then(Vec::new);
    let mut theta = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let next = weighted_theta(&omega, y, params)?;
        iterations += 1;
        if let Some(t) = trace.as_mut() {
            t.push(next);
        }
        omega = classify(next, y, delta);
        let step = (next - theta).abs();
        theta = next;
        if step < opts.eps {
            converged = true;
            break;
        }
    }
    Ok(IterativeResult {
        theta,
        omega: Some(omega),
        responsibilities: None,
        iterations,
        converged,
        theta_trace: trace,
        loglik_trace: None,
    })
}

/// Posterior probability of ALPHA for one measurement, in log space.
pub fn responsibility(y: f64, theta: f64, params: &ModelParams) -> f64 {
    let a = (1.0 - params.p()).ln() + normal_ln_pdf(y, theta, params.alpha());
    let b = params.p().ln() + normal_ln_pdf(y, theta, params.beta());
    1.0 / (1.0 + (b - a).exp())
}

/// `sum_i ln((1-p) N(y_i; theta, alpha^2) + p N(y_i; theta, beta^2))`.
pub fn observed_log_likelihood(theta: f64, y: &[f64], params: &ModelParams) -> f64 {
    y.iter()
        .map(|&yi| {
            let a = (1.0 - params.p()).ln() + normal_ln_pdf(yi, theta, params.alpha());
            let b = params.p().ln() + normal_ln_pdf(yi, theta, params.beta());
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln()
        })
        .sum()
}

/// Weighted mean with per-node precision `q/alpha^2 + (1-q)/beta^2`.
pub fn m_step(q: &[f64], y: &[f64], params: &ModelParams) -> f64 {
    let (ia2, ib2) = (params.inv_alpha2(), params.inv_beta2());
    let (num, den) = q.iter().zip(y).fold((0.0, 0.0), |(n, d), (&qi, &yi)| {
        let w = qi * ia2 + (1.0 - qi) * ib2;
        (n + w * yi, d + w)
    });
    let (lo, hi) = min_max(y);
    (num / den).clamp(lo, hi)
}

/// EM from `theta0` (the sample mean when `None`).
pub fn em_run(
    y: &[f64],
    params: &ModelParams,
    theta0: Option<f64>,
    opts: &IterOptions,
) -> Result<IterativeResult> {
    check(y, opts)?;
    let mut theta = theta0.unwrap_or_else(|| mean(y));
    if !theta.is_finite() {
        return param_err("initial theta must be finite");
    }
    let mut q = vec![0.0; y.len()];
    let mut trace = opts.trace.then(Vec::new);
    let mut loglik = opts.trace.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi = responsibility(yi, theta, params);
        }
        let next = m_step(&q, y, params);
        iterations += 1;
        if let Some(t) = trace.as_mut() {
            t.push(next);
        }
        if let Some(l) = loglik.as_mut() {
            l.push(observed_log_likelihood(next, y, params));
        }
        let step = (next - theta).abs();
        theta = next;
        if step < opts.eps {
            converged = true;
            break;
        }
    }
    for (qi, &yi) in q.iter_mut().zip(y) {
        *qi = responsibility(yi, theta, params);
    }
    Ok(IterativeResult {
        theta,
        omega: None,
        responsibilities: Some(q),
        iterations,
        converged,
        theta_trace: trace,
        loglik_trace: loglik,
    })
}
