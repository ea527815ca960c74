//! Exact profile log-likelihood and its stationary points.
//!
//! The profile `L(theta) = L_N(theta, omega_hat(theta))` is continuous,
//! piecewise concave between the breakpoints `{y_i +- delta}`, and on each
//! piece the set of reliable nodes is fixed. The stationary equation
//! `theta = theta_hat(omega_hat(theta))` therefore has a closed-form
//! candidate per piece, which gives the full set of local maxima exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{classify, min_max, Label, ModelParams};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Rescaled complete log joint density `(1/N) log f(y, omega | theta)`.
///
/// Panics if `omega` and `y` differ in length.
pub fn log_likelihood(theta: f64, omega: &[Label], y: &[f64], params: &ModelParams) -> f64 {
    assert_eq!(omega.len(), y.len(), "label and measurement lengths differ");
    let total: f64 = omega
        .iter()
        .zip(y)
        .map(|(&label, &yi)| labelled_term(theta, yi, label, params))
        .sum();
    total / y.len() as f64
}

#[inline]
fn labelled_term(theta: f64, y: f64, label: Label, params: &ModelParams) -> f64 {
    let r = y - theta;
    label.prior(params).ln()
        - label.sigma(params).ln()
        - LN_SQRT_2PI
        - 0.5 * r * r * label.precision(params)
}

#[inline]
fn profile_term(theta: f64, y: f64, delta: f64, params: &ModelParams) -> f64 {
    let label = if (y - theta).abs() < delta {
        Label::Alpha
    } else {
        Label::Beta
    };
    labelled_term(theta, y, label, params)
}

/// `L_N(theta, omega_hat(theta))`.
pub fn profile_value(theta: f64, y: &[f64], params: &ModelParams) -> Result<f64> {
    let delta = params.delta()?;
    Ok(profile_value_with(theta, y, delta, params))
}

pub(crate) fn profile_value_with(theta: f64, y: &[f64], delta: f64, params: &ModelParams) -> f64 {
    let total: f64 = y.iter().map(|&yi| profile_term(theta, yi, delta, params)).sum();
    total / y.len() as f64
}

/// Derivative of the profile, defined away from the breakpoints.
pub fn profile_derivative(theta: f64, y: &[f64], params: &ModelParams) -> Result<f64> {
    let delta = params.delta()?;
    let n = y.len() as f64;
    let mut inside = 0.0;
    let mut total = 0.0;
    for &yi in y {
        let dist = (yi - theta).abs();
        if dist == delta {
            return Err(Error::NonDifferentiable(theta));
        }
        if dist < delta {
            inside += theta - yi;
        }
        total += yi;
    }
    let ybar = total / n;
    Ok(-params.precision_gap() * inside / n - params.inv_beta2() * (theta - ybar))
}

/// One open piece between consecutive breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub lo: f64,
    pub hi: f64,
    /// Reliable nodes on the piece, as a range into the sorted measurements.
    pub active: Range<usize>,
    /// Interior solution of the stationary equation, if it lies in the piece.
    pub candidate_theta: Option<f64>,
}

impl ProfileSegment {
    /// A point strictly inside the piece.
    pub fn interior_point(&self) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => 0.5 * (self.lo + self.hi),
            (false, true) => self.hi - 1.0,
            (true, false) => self.lo + 1.0,
            (false, false) => 0.0,
        }
    }
}

/// Breakpoint structure of the profile likelihood for one data set.
#[derive(Debug, Clone)]
pub struct Profile {
    sorted: Vec<f64>,
    order: Vec<usize>,
    prefix: Vec<f64>,
    delta: f64,
    params: ModelParams,
    segments: Vec<ProfileSegment>,
    coincident_breakpoints: bool,
}

impl Profile {
    pub fn new(y: &[f64], params: &ModelParams) -> Result<Self> {
        Self::with_execution(y, params, Execution::Sequential)
    }

    pub fn with_execution(y: &[f64], params: &ModelParams, exec: Execution) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Parameter("profile of an empty measurement vector".into()));
        }
        let delta = params.delta()?;
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in &sorted {
            acc += v;
            prefix.push(acc);
        }

        let mut breaks: Vec<f64> = sorted
            .iter()
            .flat_map(|&v| [v - delta, v + delta])
            .collect();
        breaks.sort_by(f64::total_cmp);
        let before = breaks.len();
        breaks.dedup();
        let coincident_breakpoints = breaks.len() != before;

        let mut bounds = Vec::with_capacity(breaks.len() + 2);
        bounds.push(f64::NEG_INFINITY);
        bounds.extend_from_slice(&breaks);
        bounds.push(f64::INFINITY);

        let mut profile = Profile {
            sorted,
            order,
            prefix,
            delta,
            params: *params,
            segments: Vec::new(),
            coincident_breakpoints,
        };
        let built = exec.map_indexed(bounds.len() - 1, |k| {
            profile.segment(bounds[k], bounds[k + 1])
        });
        profile.segments = built.into_iter().flatten().collect();
        Ok(profile)
    }

    fn segment(&self, lo: f64, hi: f64) -> Option<ProfileSegment> {
        let mut seg = ProfileSegment {
            lo,
            hi,
            active: 0..0,
            candidate_theta: None,
        };
        let probe = seg.interior_point();
        if !(lo < probe && probe < hi) {
            // Zero-width after rounding.
            return None;
        }
        seg.active = self.active_range(probe);
        let cand = self.fixed_point(&seg.active);
        if lo < cand && cand < hi {
            seg.candidate_theta = Some(cand);
        }
        Some(seg)
    }

    /// Sorted-index range of measurements strictly within `delta` of `theta`.
    pub fn active_range(&self, theta: f64) -> Range<usize> {
        let start = self.sorted.partition_point(|&v| v <= theta - self.delta);
        let end = self.sorted.partition_point(|&v| v < theta + self.delta);
        start..end.max(start)
    }

    /// Closed-form solution of `theta = theta_hat(omega)` for the labelling
    /// that marks exactly `active` as reliable.
    fn fixed_point(&self, active: &Range<usize>) -> f64 {
        let n = self.sorted.len() as f64;
        let k = active.len() as f64;
        let total = self.prefix[self.sorted.len()];
        let inside = self.prefix[active.end] - self.prefix[active.start];
        let gap = self.params.precision_gap();
        let ib2 = self.params.inv_beta2();
        let lo = self.sorted[0];
        let hi = self.sorted[self.sorted.len() - 1];
        ((ib2 * total + gap * inside) / (ib2 * n + gap * k)).clamp(lo, hi)
    }

    fn derivative_on(&self, active: &Range<usize>, theta: f64) -> f64 {
        let n = self.sorted.len() as f64;
        let k = active.len() as f64;
        let inside = self.prefix[active.end] - self.prefix[active.start];
        let ybar = self.prefix[self.sorted.len()] / n;
        -self.params.precision_gap() * (k * theta - inside) / n
            - self.params.inv_beta2() * (theta - ybar)
    }

    pub fn segments(&self) -> &[ProfileSegment] {
        &self.segments
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// True when two breakpoints coincide exactly (a null event for
    /// continuous data).
    pub fn coincident_breakpoints(&self) -> bool {
        self.coincident_breakpoints
    }

    /// Membership mask of a segment's active set in original node order.
    pub fn active_mask(&self, segment: &ProfileSegment) -> Vec<bool> {
        let mut mask = vec![false; self.sorted.len()];
        for &i in &self.order[segment.active.clone()] {
            mask[i] = true;
        }
        mask
    }

    pub fn value(&self, theta: f64) -> f64 {
        let total: f64 = self
            .sorted
            .iter()
            .map(|&v| profile_term(theta, v, self.delta, &self.params))
            .sum();
        total / self.sorted.len() as f64
    }

    /// Breakpoints that are strict local maxima. The active set only grows
    /// when crossing to the right of `y_j - delta` and only shrinks past
    /// `y_j + delta`, and both raise the slope, so this is expected to be
    /// empty; it is computed rather than assumed.
    pub fn breakpoint_maxima(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .filter_map(|pair| {
                let (left, right) = (&pair[0], &pair[1]);
                let b = left.hi;
                let before = self.derivative_on(&left.active, b);
                let after = self.derivative_on(&right.active, b);
                (before > 0.0 && after < 0.0).then_some(b)
            })
            .collect()
    }

    pub fn stationary_set(&self) -> StationarySet {
        let points: Vec<f64> = self
            .segments
            .iter()
            .filter_map(|s| s.candidate_theta)
            .collect();
        let values: Vec<f64> = points.iter().map(|&t| self.value(t)).collect();
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[best] {
                best = i;
            }
        }
        StationarySet {
            points,
            values,
            global_argmax_index: best,
            coincident_breakpoints: self.coincident_breakpoints,
            breakpoint_maxima: self.breakpoint_maxima(),
        }
    }
}

/// All local maxima of the profile likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySet {
    /// Sorted ascending.
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    /// First index of the maximal value, hence the smallest maximizer.
    pub global_argmax_index: usize,
    pub coincident_breakpoints: bool,
    /// Kink maxima not covered by `points`; reported only.
    pub breakpoint_maxima: Vec<f64>,
}

impl StationarySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `theta` to the nearest stationary point.
    pub fn distance_to(&self, theta: f64) -> f64 {
        self.points
            .iter()
            .map(|&p| (p - theta).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn enumerate_stationary(y: &[f64], params: &ModelParams) -> Result<StationarySet> {
    Ok(Profile::new(y, params)?.stationary_set())
}

/// Quadratic-time enumeration that rebuilds every active set by a full scan.
/// Kept as an independent reference for the prefix-sum path.
pub fn enumerate_stationary_reference(y: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Parameter("profile of an empty measurement vector".into()));
    }
    let delta = params.delta()?;
    let mut breaks: Vec<f64> = y.iter().flat_map(|&v| [v - delta, v + delta]).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let n = y.len() as f64;
    let total: f64 = y.iter().sum();
    let (ymin, ymax) = min_max(y);
    let mut points = Vec::new();
    for k in 0..=breaks.len() {
        let lo = if k == 0 { f64::NEG_INFINITY } else { breaks[k - 1] };
        let hi = if k == breaks.len() { f64::INFINITY } else { breaks[k] };
        let probe = ProfileSegment {
            lo,
            hi,
            active: 0..0,
            candidate_theta: None,
        }
        .interior_point();
        if !(lo < probe && probe < hi) {
            continue;
        }
        let (mut count, mut inside) = (0.0, 0.0);
        for &v in y {
            if (v - probe).abs() < delta {
                count += 1.0;
                inside += v;
            }
        }
        let gap = params.precision_gap();
        let ib2 = params.inv_beta2();
        let cand = (ib2 * total + gap * inside) / (ib2 * n + gap * count);
        let cand = cand.clamp(ymin, ymax);
        if lo < cand && cand < hi {
            points.push(cand);
        }
    }
    Ok(points)
}

/// Centralized joint ML / MAP solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlSolution {
    pub theta: f64,
    pub omega: Vec<Label>,
    pub value: f64,
}

/// Maximize the profile over its stationary points (ties to the smallest
/// `theta`) and classify against the maximizer.
pub fn ml_solution(y: &[f64], params: &ModelParams) -> Result<MlSolution> {
    let profile = Profile::new(y, params)?;
    let set = profile.stationary_set();
    let (theta, value) = if set.is_empty() {
        // Only reachable through rounding at a segment edge; fall back to
        // the best closed-form candidate clipped into its own segment.
        profile
            .segments()
            .iter()
            .map(|s| profile.fixed_point(&s.active).clamp(s.lo, s.hi))
            .map(|t| (t, profile.value(t)))
            .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    } else {
        (
            set.points[set.global_argmax_index],
            set.values[set.global_argmax_index],
        )
    };
    Ok(MlSolution {
        theta,
        omega: classify(theta, y, profile.delta()),
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate, mean, weighted_theta};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_instances(count: usize, max_n: usize, seed: u64) -> Vec<Vec<f64>> {
        let params = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let n = rng.random_range(1..=max_n);
                generate(&params, n, rng.random()).unwrap().y
            })
            .collect()
    }

    // Independent evaluation of Eq. (5) with the normalizing constant kept:
    // beta baseline plus a reliable-node correction.
    fn grouped_log_likelihood(theta: f64, omega: &[Label], y: &[f64], params: &ModelParams) -> f64 {
        let n = y.len() as f64;
        let (a, b, p) = (params.alpha(), params.beta(), params.p());
        let log_odds = ((1.0 - p) / p * (b / a)).ln();
        let mut s = 0.0;
        for (&l, &v) in omega.iter().zip(y) {
            let r2 = (v - theta).powi(2);
            s += r2 / (2.0 * b * b);
            if l == Label::Alpha {
                s += r2 / 2.0 * (1.0 / (a * a) - 1.0 / (b * b)) - log_odds;
            }
        }
        let c = p.ln() - b.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        -s / n + c
    }

    #[test]
    fn single_point_closed_form() {
        let params = ModelParams::reference();
        let l = log_likelihood(2.0, &[Label::Alpha], &[2.0], &params);
        let expected = (0.75f64).ln() - (0.3 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert_relative_eq!(l, expected, max_relative = 1e-14);
        // mpmath: -0.00264780133051767659680252463757
        assert_relative_eq!(l, -0.002_647_801_330_517_676_6, max_relative = 1e-11);
    }

    #[test]
    fn grouped_and_termwise_forms_agree() {
        let params = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for y in small_instances(40, 30, 11) {
            let omega: Vec<Label> = y
                .iter()
                .map(|_| if rng.random_bool(0.5) { Label::Alpha } else { Label::Beta })
                .collect();
            let theta = rng.random_range(-3.0..3.0);
            let a = log_likelihood(theta, &omega, &y, &params);
            let b = grouped_log_likelihood(theta, &omega, &y, &params);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn weighted_theta_maximizes_for_fixed_labels() {
        let params = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = generate(&params, 25, 1).unwrap().y;
        let omega: Vec<Label> = y
            .iter()
            .map(|_| if rng.random_bool(0.7) { Label::Alpha } else { Label::Beta })
            .collect();
        let best = weighted_theta(&omega, &y, &params).unwrap();
        let top = log_likelihood(best, &omega, &y, &params);
        for _ in 0..100 {
            let t = rng.random_range(-20.0..20.0);
            assert!(log_likelihood(t, &omega, &y, &params) <= top);
        }
    }

    #[test]
    fn profile_dominates_every_labelling() {
        let params = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = generate(&params, 12, 2).unwrap().y;
        for _ in 0..50 {
            let t = rng.random_range(-15.0..15.0);
            let pv = profile_value(t, &y, &params).unwrap();
            let omega: Vec<Label> = y
                .iter()
                .map(|_| if rng.random_bool(0.5) { Label::Alpha } else { Label::Beta })
                .collect();
            assert!(pv >= log_likelihood(t, &omega, &y, &params));
        }
    }

    #[test]
    fn profile_continuous_at_breakpoints() {
        let params = ModelParams::reference();
        let delta = params.delta().unwrap();
        let y = [1.0, -2.0, 4.5];
        for b in [y[0] - delta, y[0] + delta] {
            let h = 1e-9;
            let left = profile_value(b - h, &y, &params).unwrap();
            let right = profile_value(b + h, &y, &params).unwrap();
            let at = profile_value(b, &y, &params).unwrap();
            assert!(at.is_finite());
            assert!((left - right).abs() < 1e-7, "jump {left} vs {right}");
        }
    }

    #[test]
    fn single_observation_peak() {
        let params = ModelParams::reference();
        let y = [0.0];
        let at = profile_value(0.0, &y, &params).unwrap();
        for h in [1e-3, 1e-2, 0.1] {
            assert!(at > profile_value(h, &y, &params).unwrap());
            assert!(at > profile_value(-h, &y, &params).unwrap());
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let params = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y = generate(&params, 40, 3).unwrap().y;
        let mut checked = 0;
        while checked < 100 {
            let t = rng.random_range(-25.0..25.0);
            let h = 1e-6;
            // Skip probes whose stencil straddles a breakpoint.
            let delta = params.delta().unwrap();
            if y.iter().any(|&v| ((v - t).abs() - delta).abs() < 2.0 * h) {
                continue;
            }
            let fd = (profile_value(t + h, &y, &params).unwrap()
                - profile_value(t - h, &y, &params).unwrap())
                / (2.0 * h);
            let d = profile_derivative(t, &y, &params).unwrap();
            assert!((fd - d).abs() < 1e-4, "theta {t}: {fd} vs {d}");
            checked += 1;
        }
    }

    #[test]
    fn derivative_far_right_and_breakpoint_error() {
        let params = ModelParams::reference();
        let delta = params.delta().unwrap();
        let y = [0.5, -1.0, 2.0];
        let ybar = 0.5;
        let t = 10.0;
        let d = profile_derivative(t, &y, &params).unwrap();
        assert_relative_eq!(d, -(t - ybar) / 100.0, max_relative = 1e-14);
        assert!(d < 0.0);
        assert!(matches!(
            profile_derivative(0.5 + delta, &y, &params),
            Err(Error::NonDifferentiable(_))
        ));
    }

    #[test]
    fn derivative_vanishes_on_stationary_points() {
        let params = ModelParams::reference();
        for y in small_instances(30, 50, 4) {
            let set = enumerate_stationary(&y, &params).unwrap();
            for &xi in &set.points {
                let d = profile_derivative(xi, &y, &params).unwrap();
                assert!(d.abs() < 1e-9, "derivative {d} at {xi}");
            }
        }
    }

    #[test]
    fn single_measurement_stationary_set() {
        let params = ModelParams::reference();
        let set = enumerate_stationary(&[3.0], &params).unwrap();
        assert_eq!(set.points, vec![3.0]);
        assert_eq!(set.global_argmax_index, 0);
        let profile = Profile::new(&[3.0], &params).unwrap();
        assert_eq!(profile.segments().len(), 3);
    }

    // Local maxima of a dense grid scan of the profile.
    fn grid_maxima(y: &[f64], params: &ModelParams) -> Vec<f64> {
        let delta = params.delta().unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * delta;
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * delta;
        let step = 1e-4;
        let m = ((hi - lo) / step) as usize;
        let vals: Vec<f64> = (0..=m)
            .map(|k| profile_value_with(lo + k as f64 * step, y, delta, params))
            .collect();
        (1..m)
            .filter(|&k| vals[k] > vals[k - 1] && vals[k] >= vals[k + 1])
            .map(|k| lo + k as f64 * step)
            .collect()
    }

    #[test]
    fn stationary_set_matches_grid_scan() {
        let params = ModelParams::reference();
        for y in small_instances(15, 10, 21) {
            let set = enumerate_stationary(&y, &params).unwrap();
            let grid = grid_maxima(&y, &params);
            assert_eq!(set.len(), grid.len(), "y = {y:?}");
            for (a, b) in set.points.iter().zip(&grid) {
                assert!((a - b).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn prefix_and_reference_enumerations_agree() {
        let params = ModelParams::reference();
        for y in small_instances(40, 200, 33) {
            let fast = enumerate_stationary(&y, &params).unwrap().points;
            let slow = enumerate_stationary_reference(&y, &params).unwrap();
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn parallel_and_sequential_profiles_agree() {
        let params = ModelParams::reference();
        let y = generate(&params, 2000, 8).unwrap().y;
        let a = Profile::with_execution(&y, &params, Execution::Sequential).unwrap();
        let b = Profile::with_execution(&y, &params, Execution::Parallel).unwrap();
        assert_eq!(a.segments(), b.segments());
    }

    #[test]
    fn translation_shifts_stationary_points() {
        let params = ModelParams::reference();
        for (k, y) in small_instances(20, 30, 5).into_iter().enumerate() {
            let c = 0.75 * k as f64 - 4.0;
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = enumerate_stationary(&y, &params).unwrap().points;
            let b = enumerate_stationary(&shifted, &params).unwrap().points;
            assert_eq!(a.len(), b.len());
            for (u, v) in a.iter().zip(&b) {
                assert!((u + c - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stationary_points_are_fixed_points() {
        let params = ModelParams::reference();
        let delta = params.delta().unwrap();
        for y in small_instances(50, 60, 6) {
            let profile = Profile::new(&y, &params).unwrap();
            let set = profile.stationary_set();
            assert!(set.len() <= 2 * y.len() + 1);
            for &xi in &set.points {
                let w = weighted_theta(&classify(xi, &y, delta), &y, &params).unwrap();
                assert!((w - xi).abs() <= 1e-12 * xi.abs().max(1.0), "{w} vs {xi}");
            }
            // Conversely, a rejected candidate is not a fixed point unless it
            // coincides with an accepted one from a neighbouring piece.
            for seg in profile.segments() {
                if seg.candidate_theta.is_some() {
                    continue;
                }
                let cand = profile.fixed_point(&seg.active);
                let w = weighted_theta(&classify(cand, &y, delta), &y, &params).unwrap();
                let is_fixed = (w - cand).abs() <= 1e-12 * cand.abs().max(1.0);
                assert!(!is_fixed || set.distance_to(cand) < 1e-9);
            }
        }
    }

    #[test]
    fn segments_are_concave_and_constant() {
        let params = ModelParams::reference();
        let delta = params.delta().unwrap();
        for y in small_instances(10, 20, 7) {
            let profile = Profile::new(&y, &params).unwrap();
            for seg in profile.segments() {
                let (lo, hi) = if seg.lo.is_finite() && seg.hi.is_finite() {
                    (seg.lo, seg.hi)
                } else if seg.lo.is_finite() {
                    (seg.lo, seg.lo + 5.0)
                } else {
                    (seg.hi - 5.0, seg.hi)
                };
                let mask = profile.active_mask(seg);
                let samples: Vec<f64> = (1..=20)
                    .map(|k| lo + (hi - lo) * k as f64 / 21.0)
                    .collect();
                for &t in &samples {
                    let labels = classify(t, &y, delta);
                    let here: Vec<bool> = labels.iter().map(|&l| l == Label::Alpha).collect();
                    assert_eq!(here, mask);
                }
                let vals: Vec<f64> = samples.iter().map(|&t| profile.value(t)).collect();
                for w in vals.windows(3) {
                    assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9);
                }
                if let Some(c) = seg.candidate_theta {
                    assert!(seg.lo < c && c < seg.hi);
                }
            }
        }
    }

    #[test]
    fn stationary_points_near_mean() {
        let params = ModelParams::reference();
        let bound =
            params.beta().powi(2) * params.precision_gap() * params.delta().unwrap();
        for y in small_instances(50, 300, 8) {
            let ybar = mean(&y);
            for &xi in &enumerate_stationary(&y, &params).unwrap().points {
                assert!((xi - ybar).abs() <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn no_breakpoint_maxima() {
        let params = ModelParams::reference();
        for y in small_instances(30, 100, 9) {
            let set = enumerate_stationary(&y, &params).unwrap();
            assert!(set.breakpoint_maxima.is_empty());
            assert!(!set.coincident_breakpoints);
        }
    }

    #[test]
    fn coincident_breakpoints_are_flagged() {
        let params = ModelParams::reference();
        let delta = params.delta().unwrap();
        let y = [0.0, 2.0 * delta, 5.0];
        let set = enumerate_stationary(&y, &params).unwrap();
        assert!(set.coincident_breakpoints);
        assert!(!set.is_empty());
    }

    fn brute_force_ml(y: &[f64], params: &ModelParams) -> f64 {
        let n = y.len();
        (0u32..1 << n)
            .map(|bits| {
                let omega: Vec<Label> = (0..n)
                    .map(|i| if bits >> i & 1 == 1 { Label::Beta } else { Label::Alpha })
                    .collect();
                let t = weighted_theta(&omega, y, params).unwrap();
                log_likelihood(t, &omega, y, params)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn ml_matches_exhaustive_search() {
        let params = ModelParams::reference();
        for y in small_instances(30, 10, 12) {
            let ml = ml_solution(&y, &params).unwrap();
            let brute = brute_force_ml(&y, &params);
            assert!((ml.value - brute).abs() < 1e-12, "{} vs {brute}", ml.value);
            assert_eq!(ml.omega, classify(ml.theta, &y, params.delta().unwrap()));
        }
    }

    #[test]
    fn ml_single_point_and_tiny_prior() {
        let params = ModelParams::reference();
        assert_eq!(ml_solution(&[4.2], &params).unwrap().theta, 4.2);

        let rare = ModelParams::new(0.0, 0.3, 10.0, 1e-9).unwrap();
        let y = [0.1, -0.2, 0.3, 0.05, -0.4];
        let ml = ml_solution(&y, &rare).unwrap();
        assert!(ml.omega.iter().all(|&l| l == Label::Alpha));
        assert_relative_eq!(ml.theta, mean(&y), max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use crate::model::classify;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stationary_points_are_fixed_points(
                y in prop::collection::vec(-30.0f64..30.0, 1..25),
            ) {
                let params = ModelParams::reference();
                let delta = params.delta().unwrap();
                let set = enumerate_stationary(&y, &params).unwrap();
                prop_assert!(!set.is_empty());
                for &xi in &set.points {
                    let omega = classify(xi, &y, delta);
                    let back = weighted_theta(&omega, &y, &params).unwrap();
                    prop_assert!((back - xi).abs() <= 1e-9 * xi.abs().max(1.0));
                }
            }

            #[test]
            fn ml_value_dominates_the_profile(
                y in prop::collection::vec(-30.0f64..30.0, 1..25),
                probe in -40.0f64..40.0,
            ) {
                let params = ModelParams::reference();
                let ml = ml_solution(&y, &params).unwrap();
                let at = profile_value(probe, &y, &params).unwrap();
                prop_assert!(at <= ml.value + 1e-9 * ml.value.abs().max(1.0));
            }
        }
    }
}
