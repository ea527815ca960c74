//! Input-driven consensus: every node mixes its neighbours' running sums
//! with its own measurement, weighted by its current label, and relabels
//! itself against its local estimate.
//!
//! ```text
//! mu(t+1)    = (1 - g(t)) P mu(t) + g(t) y / omega_hat(t)^2
//! nu(t+1)    = (1 - g(t)) P nu(t) + g(t) / omega_hat(t)^2
//! theta(t+1) = mu(t+1) / nu(t+1)
//! omega_hat_i(t+1) = ALPHA iff |y_i - theta_i(t+1)| < delta
//! ```

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::exec::Execution;
use crate::graph::ConsensusMatrix;
use crate::output::float;
use crate::model::{classify_one, min_max, weighted_theta, Label, ModelParams};

/// Upper clamp on the step size; the convergence argument needs `g < 1`.
pub const GAMMA_CEIL: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GammaFamily {
    /// `s^-zeta`, `zeta` in (0, 1).
    Power { zeta: f64 },
    /// `s^-1 (ln s)^a`, `a > 0`.
    LogPower { exponent: f64 },
}

/// Decreasing step sizes `g(t)`, evaluated at `s = t + t_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub family: GammaFamily,
    pub t_offset: u64,
}

impl GammaSchedule {
    pub fn power(zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return param_err(format!("power schedule needs zeta in (0, 1), got {zeta}"));
        }
        Ok(GammaSchedule {
            family: GammaFamily::Power { zeta },
            t_offset: 1,
        })
    }

    /// The offset defaults to 3 so that `ln s > 1` from the first step and
    /// `g(t) >= 1/s` holds throughout.
    pub fn log_power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return param_err(format!("log-power schedule needs a > 0, got {exponent}"));
        }
        Ok(GammaSchedule {
            family: GammaFamily::LogPower { exponent },
            t_offset: 3,
        })
    }

    pub fn with_offset(mut self, t_offset: u64) -> Result<Self> {
        let min = match self.family {
            GammaFamily::Power { .. } => 1,
            GammaFamily::LogPower { .. } => 2,
        };
        if t_offset < min {
            return param_err(format!("schedule offset must be at least {min}"));
        }
        self.t_offset = t_offset;
        Ok(self)
    }

    pub fn zeta(&self) -> Option<f64> {
        match self.family {
            GammaFamily::Power { zeta } => Some(zeta),
            GammaFamily::LogPower { .. } => None,
        }
    }

    pub fn value(&self, t: u64) -> f64 {
        let s = (t + self.t_offset) as f64;
        let raw = match self.family {
            GammaFamily::Power { zeta } => s.powf(-zeta),
            GammaFamily::LogPower { exponent } => s.ln().powf(exponent) / s,
        };
        raw.clamp(f64::MIN_POSITIVE, GAMMA_CEIL)
    }
}

/// Per-node memory at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub t: u64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// `mu / nu`; NaN at `t = 0`, where it is undefined.
    pub theta_hat: Vec<f64>,
    pub omega_hat: Vec<Label>,
}

impl NetworkState {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Local estimates, or `None` before the first step.
    pub fn estimates(&self) -> Option<&[f64]> {
        (self.t > 0).then_some(self.theta_hat.as_slice())
    }

    pub fn mean_theta(&self) -> f64 {
        self.theta_hat.iter().sum::<f64>() / self.n() as f64
    }

    /// `||(I - 11^T/N) theta_hat||_2`.
    pub fn disagreement(&self) -> f64 {
        let m = self.mean_theta();
        self.theta_hat
            .iter()
            .map(|v| (v - m) * (v - m))
            .sum::<f64>()
            .sqrt()
    }
}

/// All-zero sums and every node labelled reliable.
pub fn ia_init(y: &[f64]) -> NetworkState {
    let n = y.len();
    NetworkState {
        t: 0,
        mu: vec![0.0; n],
        nu: vec![0.0; n],
        theta_hat: vec![f64::NAN; n],
        omega_hat: vec![Label::Alpha; n],
    }
}

/// Stepper that owns its scratch buffers.
pub struct IaEngine<'a> {
    y: &'a [f64],
    p: &'a ConsensusMatrix,
    gamma: GammaSchedule,
    params: ModelParams,
    delta: f64,
    exec: Execution,
    state: NetworkState,
    scratch: Vec<f64>,
    weight: Vec<f64>,
    y_range: (f64, f64),
}

impl<'a> IaEngine<'a> {
    pub fn new(
        y: &'a [f64],
        p: &'a ConsensusMatrix,
        gamma: GammaSchedule,
        params: &ModelParams,
    ) -> Result<Self> {
        Self::from_state(ia_init(y), y, p, gamma, params)
    }

    pub fn from_state(
        state: NetworkState,
        y: &'a [f64],
        p: &'a ConsensusMatrix,
        gamma: GammaSchedule,
        params: &ModelParams,
    ) -> Result<Self> {
        if y.is_empty() {
            return param_err("no measurements");
        }
        if p.n() != y.len() || state.n() != y.len() {
            return param_err(format!(
                "matrix has {} nodes, state {}, but there are {} measurements",
                p.n(),
                state.n(),
                y.len()
            ));
        }
        let delta = params.delta()?;
        Ok(IaEngine {
            y,
            p,
            gamma,
            params: *params,
            delta,
            exec: Execution::Sequential,
            state,
            scratch: vec![0.0; y.len()],
            weight: vec![0.0; y.len()],
            y_range: min_max(y),
        })
    }

    /// Execution strategy for the matrix-vector products.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn into_state(self) -> NetworkState {
        self.state
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Synchronous update of every node. Returns how many labels flipped.
    pub fn step(&mut self) -> usize {
        let g = self.gamma.value(self.state.t);
        let keep = 1.0 - g;
        let st = &mut self.state;
        for (w, l) in self.weight.iter_mut().zip(&st.omega_hat) {
            *w = l.precision(&self.params);
        }

        self.p.apply_with(&st.mu, &mut self.scratch, self.exec);
        for ((m, &pm), (&yi, &w)) in st
            .mu
            .iter_mut()
            .zip(&self.scratch)
            .zip(self.y.iter().zip(&self.weight))
        {
            *m = keep * pm + g * yi * w;
        }
        self.p.apply_with(&st.nu, &mut self.scratch, self.exec);
        for ((v, &pv), &w) in st.nu.iter_mut().zip(&self.scratch).zip(&self.weight) {
            *v = keep * pv + g * w;
        }

        let mut flips = 0;
        for i in 0..self.y.len() {
            let theta = st.mu[i] / st.nu[i];
            st.theta_hat[i] = theta;
            let label = classify_one(theta, self.y[i], self.delta);
            if label != st.omega_hat[i] {
                flips += 1;
                st.omega_hat[i] = label;
            }
        }
        st.t += 1;
        self.debug_check_invariants();
        flips
    }

    fn debug_check_invariants(&self) {
        if cfg!(debug_assertions) {
            let lo = self.params.inv_beta2() * (1.0 - 1e-9);
            let hi = self.params.inv_alpha2() * (1.0 + 1e-9);
            let (ymin, ymax) = self.y_range;
            let slack = 1e-9 * ymin.abs().max(ymax.abs()).max(1.0);
            for i in 0..self.y.len() {
                let nu = self.state.nu[i];
                debug_assert!(nu >= lo && nu <= hi, "nu[{i}] = {nu} out of range");
                let th = self.state.theta_hat[i];
                debug_assert!(
                    th >= ymin - slack && th <= ymax + slack,
                    "theta[{i}] = {th} outside data range"
                );
            }
        }
    }

    /// Limit candidate `theta_hat(omega_hat)` for the current labels.
    pub fn limit_candidate(&self) -> f64 {
        weighted_theta(&self.state.omega_hat, self.y, &self.params)
            .expect("lengths checked at construction")
    }

    /// Whether the current labels are a fixed point of the centralized map.
    pub fn labels_are_fixed_point(&self) -> bool {
        let limit = self.limit_candidate();
        self.y
            .iter()
            .zip(&self.state.omega_hat)
            .all(|(&yi, &label)| classify_one(limit, yi, self.delta) == label)
    }

    /// `max_i |theta_i - limit| / margin_i`, where `margin_i` is the distance
    /// from `|y_i - limit|` to `delta`. Below 1 every node already reads the
    /// label it would get at the limit.
    pub fn margin_usage(&self) -> f64 {
        let limit = self.limit_candidate();
        self.y
            .iter()
            .zip(&self.state.theta_hat)
            .map(|(&yi, &th)| (th - limit).abs() / ((yi - limit).abs() - self.delta).abs())
            .fold(0.0, f64::max)
    }

    fn stop_test(&self, margin_fraction: Option<f64>) -> bool {
        self.labels_are_fixed_point() && margin_fraction.is_none_or(|f| self.margin_usage() < f)
    }
}

/// One synchronous step as a pure function.
pub fn ia_step(
    state: &NetworkState,
    p: &ConsensusMatrix,
    y: &[f64],
    gamma: GammaSchedule,
    params: &ModelParams,
) -> Result<NetworkState> {
    let mut engine = IaEngine::from_state(state.clone(), y, p, gamma, params)?;
    engine.step();
    Ok(engine.into_state())
}

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Consecutive steps without a label flip required before stopping.
    pub window: u64,
    pub t_max: u64,
    /// When set, every node must also be within this fraction of its
    /// classification margin from the limit value.
    pub margin_fraction: Option<f64>,
    /// Optional cap on `max_i |theta_i(t) - theta_i(t-1)|`.
    pub step_tol: Option<f64>,
    /// Optional cap on `max_i theta_i - min_i theta_i`.
    pub consensus_tol: Option<f64>,
    /// Ignore the stopping tests and always run to `t_max`.
    pub fixed_horizon: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            window: 500,
            t_max: 1_000_000,
            margin_fraction: None,
            step_tol: None,
            consensus_tol: None,
            fixed_horizon: false,
        }
    }
}

impl StopRule {
    /// Run exactly `t_max` steps.
    pub fn horizon(t_max: u64) -> Self {
        StopRule {
            t_max,
            fixed_horizon: true,
            ..StopRule::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IaOptions {
    pub stop: StopRule,
    /// Record a trace row every this many steps.
    pub trace_every: Option<u64>,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub gamma: f64,
    pub mean_theta: f64,
    pub disagreement: f64,
    pub label_changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaRunResult {
    /// `theta_hat(omega_limit)`, the exact limit of the iterates.
    pub theta_limit: f64,
    pub omega_limit: Vec<Label>,
    pub iterations: u64,
    /// Last step at which any label changed.
    pub stabilization_time: u64,
    pub converged: bool,
    /// `|theta_limit - weighted_theta(omega_limit, y)|`.
    pub fixed_point_residual: f64,
    /// Whether `classify(theta_limit) == omega_limit`.
    pub labels_consistent: bool,
    /// Network average of the local estimates when the run stopped.
    pub observed_mean_theta: f64,
    /// `max_i |theta_i - theta_limit|` when the run stopped.
    pub truncation_gap: f64,
    /// See [`IaEngine::margin_usage`].
    pub margin_usage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_trace: Option<Vec<TraceRow>>,
}

pub fn ia_run(
    y: &[f64],
    p: &ConsensusMatrix,
    gamma: GammaSchedule,
    params: &ModelParams,
    options: &IaOptions,
) -> Result<IaRunResult> {
    let stop = options.stop;
    let mut engine = IaEngine::new(y, p, gamma, params)?.with_execution(options.execution);
    let mut trace = options.trace_every.map(|_| Vec::new());
    let mut stable = 0u64;
    let mut last_change = 0u64;
    let mut previous = vec![0.0; y.len()];
    let mut converged = false;

    while engine.state().t < stop.t_max {
        if stop.step_tol.is_some() {
            previous.copy_from_slice(&engine.state().theta_hat);
        }
        let flips = engine.step();
        let st = engine.state();
        if flips > 0 {
            last_change = st.t;
            stable = 0;
        } else {
            stable += 1;
        }
        if let (Some(rows), Some(every)) = (trace.as_mut(), options.trace_every) {
            if st.t % every.max(1) == 0 {
                rows.push(TraceRow {
                    t: st.t,
                    gamma: gamma.value(st.t),
                    mean_theta: st.mean_theta(),
                    disagreement: st.disagreement(),
                    label_changes: flips,
                });
            }
        }
        if stop.fixed_horizon || stable < stop.window {
            continue;
        }
        if let Some(tol) = stop.step_tol {
            let moved = st
                .theta_hat
                .iter()
                .zip(&previous)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if moved >= tol {
                continue;
            }
        }
        if let Some(tol) = stop.consensus_tol {
            let (lo, hi) = min_max(&st.theta_hat);
            if hi - lo >= tol {
                continue;
            }
        }
        if engine.stop_test(stop.margin_fraction) {
            converged = true;
            break;
        }
    }
    if stop.fixed_horizon {
        converged = stable >= stop.window && engine.stop_test(stop.margin_fraction);
    }

    let delta = engine.delta();
    let theta_limit = engine.limit_candidate();
    let st = engine.state();
    let fixed_point_residual = (theta_limit - weighted_theta(&st.omega_hat, y, params)?).abs();
    let labels_consistent = y
        .iter()
        .zip(&st.omega_hat)
        .all(|(&yi, &l)| classify_one(theta_limit, yi, delta) == l);
    let truncation_gap = st
        .theta_hat
        .iter()
        .map(|v| (v - theta_limit).abs())
        .fold(0.0, f64::max);
    let margin_usage = engine.margin_usage();
    Ok(IaRunResult {
        theta_limit,
        omega_limit: st.omega_hat.clone(),
        iterations: st.t,
        stabilization_time: last_change,
        converged,
        fixed_point_residual,
        labels_consistent,
        observed_mean_theta: st.mean_theta(),
        truncation_gap,
        margin_usage,
        consensus_trace: trace,
    })
}

/// Ratio of node disagreement to step size after the labels froze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusDiagnostics {
    /// `(t, ||Omega theta(t)|| / g(t))` for traced `t > stabilization_time`.
    pub c_estimates: Vec<(u64, f64)>,
    pub stabilization_time: u64,
    pub max_ratio: f64,
    /// Least-squares slope of the ratio against `t`, per step.
    pub slope: f64,
    /// Same fit with time rescaled to [0, 1] and the ratio divided by its mean.
    pub relative_slope: f64,
}

pub fn consensus_diagnostics(trace: &[TraceRow], stabilization_time: u64) -> ConsensusDiagnostics {
    let c_estimates: Vec<(u64, f64)> = trace
        .iter()
        .filter(|r| r.t > stabilization_time)
        .map(|r| (r.t, r.disagreement / r.gamma))
        .collect();
    let max_ratio = c_estimates.iter().map(|&(_, r)| r).fold(0.0, f64::max);
    let slope = ls_slope(c_estimates.iter().map(|&(t, r)| (t as f64, r)));
    let relative_slope = match (c_estimates.first(), c_estimates.last()) {
        (Some(&(t0, _)), Some(&(t1, _))) if t1 > t0 => {
            let span = (t1 - t0) as f64;
            let mean = c_estimates.iter().map(|&(_, r)| r).sum::<f64>() / c_estimates.len() as f64;
            if mean > 0.0 {
                ls_slope(
                    c_estimates
                        .iter()
                        .map(|&(t, r)| ((t - t0) as f64 / span, r / mean)),
                )
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    ConsensusDiagnostics {
        c_estimates,
        stabilization_time,
        max_ratio,
        slope,
        relative_slope,
    }
}

fn ls_slope(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

pub const TRACE_CSV_HEADER: &str = "t,gamma,mean_theta,disagreement,label_changes";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            float(r.gamma),
            float(r.mean_theta),
            float(r.disagreement),
            r.label_changes
        )?;
    }
    Ok(())
}
