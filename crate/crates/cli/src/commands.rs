use std::io::Write;

use serde_json::{json, Value};

use input_consensus::asymptotics::classification_error_limit;
use input_consensus::baselines::{em_run, iml_run, observed_log_likelihood, IterOptions, IterativeResult};
use input_consensus::exec::Execution;
use input_consensus::graph::{validate_theorem_hypotheses, ConsensusMatrix, HypothesisReport};
use input_consensus::ia::{ia_run, write_trace_csv, GammaSchedule, IaOptions, StopRule};
use input_consensus::likelihood::{ml_solution, Profile};
use input_consensus::model::{generate, threshold, ModelParams, Observations};
use input_consensus::montecarlo::{hamming_error, mix, run_sweep_with, Algorithm, ExperimentConfig, TopologySpec};
use input_consensus::output::float;

use crate::config::{key, required, usage, CliError, CliResult, Key, Resolved};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub const SIMULATE_KEYS: [Key; 17] = [
    key("algo", "ia"),
    required("n"),
    key("seed", "0"),
    key("topology", "complete"),
    key("radius", "0.3"),
    key("tau", "none"),
    key("gamma", "power"),
    key("zeta", "0.7"),
    key("exponent", "1"),
    key("t_offset", "none"),
    key("window", "500"),
    key("t_max", "1000000"),
    key("margin_fraction", "none"),
    key("trace_every", "1"),
    key("eps", "1e-10"),
    key("max_iter", "10000"),
    key("theta0", "none"),
];

pub const SWEEP_KEYS: [Key; 16] = [
    key("n_values", "10,50,100,500,1000"),
    key("topologies", "complete"),
    key("algorithms", "ia,em,iml,ml_exact"),
    key("gamma", "power"),
    key("zetas", "0.7"),
    key("exponents", "1"),
    key("mc_runs", "400"),
    key("seed", "0"),
    key("radius", "0.3"),
    key("tau", "none"),
    key("window", "500"),
    key("t_max", "1000000"),
    key("margin_fraction", "none"),
    key("eps", "1e-10"),
    key("max_iter", "10000"),
    key("execution", "parallel"),
];

pub const CURVE_KEYS: [Key; 3] = [required("n"), key("seed", "0"), key("grid_points", "2001")];

pub const VALIDATE_KEYS: [Key; 5] = [
    key("topology", "ring"),
    required("n"),
    key("seed", "0"),
    key("radius", "0.3"),
    key("tau", "none"),
];

pub const ASYMPTOTICS_KEYS: [Key; 3] = [
    key("alpha", "0.3"),
    key("p_values", "0.45,0.25,0.1,0.01,0.001,0.0001"),
    key("ratios", "1.000001,1.01,1.1,2,10,33.333333333333336,100,1000"),
];

pub fn model(r: &Resolved) -> CliResult<ModelParams> {
    Ok(ModelParams::new(r.get("theta_star")?, r.get("alpha")?, r.get("beta")?, r.get("p")?)?)
}

fn schedule(family: &str, value: f64, offset: Option<u64>) -> CliResult<GammaSchedule> {
    let g = match family {
        "power" => GammaSchedule::power(value)?,
        "log_power" => GammaSchedule::log_power(value)?,
        other => return usage(format!("unknown gamma family '{other}' (power, log_power)")),
    };
    Ok(match offset {
        Some(o) => g.with_offset(o)?,
        None => g,
    })
}

fn topology(name: &str, radius: f64) -> CliResult<TopologySpec> {
    Ok(match name {
        "complete" => TopologySpec::Complete,
        "ring" => TopologySpec::Ring,
        "torus" => TopologySpec::Torus,
        "rgg" => TopologySpec::Rgg { radius },
        other => return usage(format!("unknown topology '{other}' (complete, ring, torus, rgg)")),
    })
}

fn stop_rule(r: &Resolved) -> CliResult<StopRule> {
    Ok(StopRule {
        window: r.get("window")?,
        t_max: r.get("t_max")?,
        margin_fraction: r.get_opt("margin_fraction")?,
        ..StopRule::default()
    })
}

fn iter_options(r: &Resolved, trace: bool) -> CliResult<IterOptions> {
    Ok(IterOptions {
        eps: r.get("eps")?,
        max_iter: r.get("max_iter")?,
        trace,
    })
}

fn positive_n(r: &Resolved) -> CliResult<usize> {
    let n: usize = r.get("n")?;
    if n == 0 {
        return usage("n must be at least 1");
    }
    Ok(n)
}

fn write_json<W: Write>(out: &mut W, r: &Resolved, result: Value) -> CliResult<()> {
    let doc = json!({
        "command": r.command,
        "config": r.to_json(),
        "config_hash": r.hash_hex(),
        "result": result,
    });
    serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn write_warnings<W: Write>(out: &mut W, report: &HypothesisReport) -> CliResult<()> {
    for w in &report.warnings {
        writeln!(out, "# warning: {w}")?;
    }
    Ok(())
}

fn scores(obs: &Observations, labels: &[input_consensus::Label], theta: f64, params: &ModelParams) -> CliResult<(f64, f64)> {
    let wrong = hamming_error(labels, &obs.omega_true)?;
    let err = theta - params.theta_star();
    Ok((wrong as f64 / obs.len() as f64, err * err))
}

fn iteration_rows(res: &IterativeResult, y: &[f64], params: &ModelParams) -> Vec<String> {
    res.theta_trace
        .iter()
        .flatten()
        .enumerate()
        .map(|(k, &th)| {
            format!(
                "{},{},{}",
                k + 1,
                float(th),
                float(observed_log_likelihood(th, y, params))
            )
        })
        .collect()
}

/// Returns the summary document; the trace goes to `out`.
pub fn simulate<W: Write>(r: &Resolved, format: Format, out: &mut W) -> CliResult<Value> {
    let params = model(r)?;
    let n = positive_n(r)?;
    let seed: u64 = r.get("seed")?;
    let obs = generate(&params, n, seed)?;
    if format == Format::Csv {
        r.write_header(out)?;
    }
    let y = &obs.y;
    let algo = r.raw("algo");
    let (summary, trace_csv, trace_json): (Value, Vec<String>, Value) = match algo {
        "ia" => {
            let spec = topology(r.raw("topology"), r.get("radius")?)?;
            let p: ConsensusMatrix = spec.matrix(n, mix(seed, 1), r.get_opt("tau")?)?;
            let hyp = validate_theorem_hypotheses(&p);
            let gamma = schedule(r.raw("gamma"), gamma_value(r)?, r.get_opt("t_offset")?)?;
            let every: u64 = r.get("trace_every")?;
            let opts = IaOptions {
                stop: stop_rule(r)?,
                trace_every: (every > 0).then_some(every),
                execution: Execution::Parallel,
            };
            let mut res = ia_run(y, &p, gamma, &params, &opts)?;
            if res.converged && (!res.labels_consistent || res.fixed_point_residual > 1e-12) {
                return Err(CliError::Internal(format!(
                    "converged IA run violates the fixed-point relations (residual {})",
                    res.fixed_point_residual
                )));
            }
            let trace = res.consensus_trace.take().unwrap_or_default();
            let mut buf = Vec::new();
            write_trace_csv(&trace, &mut buf)?;
            let lines = String::from_utf8(buf)
                .map_err(|e| CliError::Internal(e.to_string()))?
                .lines()
                .map(str::to_string)
                .collect();
            let (class_err, sq_err) = scores(&obs, &res.omega_limit, res.theta_limit, &params)?;
            if format == Format::Csv {
                write_warnings(out, &hyp)?;
            }
            (
                json!({
                    "algorithm": "ia",
                    "converged": res.converged,
                    "theta": res.theta_limit,
                    "class_err": class_err,
                    "sq_err": sq_err,
                    "iterations": res.iterations,
                    "hypotheses": to_value(&hyp)?,
                    "run": to_value(&res)?,
                }),
                lines,
                to_value(&trace)?,
            )
        }
        "em" | "iml" => {
            let opts = iter_options(r, true)?;
            let mut res = if algo == "em" {
                em_run(y, &params, r.get_opt("theta0")?, &opts)?
            } else {
                iml_run(y, &params, &opts)?
            };
            let mut lines = vec!["iteration,theta,loglik".to_string()];
            lines.extend(iteration_rows(&res, y, &params));
            let labels = res.hard_labels();
            let (class_err, sq_err) = scores(&obs, &labels, res.theta, &params)?;
            let trace = to_value(&res.theta_trace)?;
            res.theta_trace = None;
            res.loglik_trace = None;
            (
                json!({
                    "algorithm": algo,
                    "converged": res.converged,
                    "theta": res.theta,
                    "class_err": class_err,
                    "sq_err": sq_err,
                    "iterations": res.iterations,
                    "run": to_value(&res)?,
                }),
                lines,
                trace,
            )
        }
        "ml" | "ml_exact" => {
            let res = ml_solution(y, &params)?;
            let (class_err, sq_err) = scores(&obs, &res.omega, res.theta, &params)?;
            let lines = vec![
                "iteration,theta,loglik".to_string(),
                format!("0,{},{}", float(res.theta), float(observed_log_likelihood(res.theta, y, &params))),
            ];
            (
                json!({
                    "algorithm": "ml_exact",
                    "converged": true,
                    "theta": res.theta,
                    "class_err": class_err,
                    "sq_err": sq_err,
                    "iterations": 0,
                    "profile_value": res.value,
                }),
                lines,
                Value::Null,
            )
        }
        other => return usage(format!("unknown algo '{other}' (ia, em, iml, ml_exact)")),
    };
    match format {
        Format::Csv => {
            for line in trace_csv {
                writeln!(out, "{line}")?;
            }
        }
        Format::Json => {
            write_json(out, r, json!({ "summary": summary.clone(), "trace": trace_json }))?;
        }
    }
    Ok(json!({
        "command": r.command,
        "config_hash": r.hash_hex(),
        "summary": summary,
    }))
}

fn gamma_value(r: &Resolved) -> CliResult<f64> {
    match r.raw("gamma") {
        "log_power" => r.get("exponent"),
        _ => r.get("zeta"),
    }
}

pub fn sweep<W: Write>(r: &Resolved, format: Format, out: &mut W) -> CliResult<()> {
    let mut config = ExperimentConfig::new(model(r)?);
    config.n_values = r.list("n_values")?;
    let radius = r.get("radius")?;
    config.topologies = r
        .list::<String>("topologies")?
        .iter()
        .map(|t| topology(t, radius))
        .collect::<CliResult<_>>()?;
    let family = r.raw("gamma").to_string();
    let gamma_values: Vec<f64> = match family.as_str() {
        "log_power" => r.list("exponents")?,
        _ => r.list("zetas")?,
    };
    let mut algorithms = Vec::new();
    for name in r.list::<String>("algorithms")? {
        match name.as_str() {
            "ia" => {
                for &v in &gamma_values {
                    algorithms.push(Algorithm::Ia {
                        gamma: schedule(&family, v, None)?,
                    });
                }
            }
            "em" => algorithms.push(Algorithm::Em),
            "iml" => algorithms.push(Algorithm::Iml),
            "ml" | "ml_exact" => algorithms.push(Algorithm::MlExact),
            other => return usage(format!("unknown algorithm '{other}' (ia, em, iml, ml_exact)")),
        }
    }
    config.algorithms = algorithms;
    config.mc_runs = r.get("mc_runs")?;
    config.base_seed = r.get("seed")?;
    config.tau = r.get_opt("tau")?;
    config.ia_stop = stop_rule(r)?;
    config.iter = iter_options(r, false)?;
    let exec = match r.raw("execution") {
        "parallel" => Execution::Parallel,
        "sequential" => Execution::Sequential,
        other => return usage(format!("unknown execution '{other}' (parallel, sequential)")),
    };
    let report = run_sweep_with(&config, exec)?;
    match format {
        Format::Csv => {
            r.write_header(out)?;
            report.write_csv(&mut *out)?;
        }
        Format::Json => write_json(out, r, json!({ "rows": to_value(&report.rows)? }))?,
    }
    Ok(())
}

pub fn likelihood_curve<W: Write>(r: &Resolved, format: Format, out: &mut W) -> CliResult<()> {
    let params = model(r)?;
    let n = positive_n(r)?;
    let points: usize = r.get("grid_points")?;
    if points < 2 {
        return usage("grid_points must be at least 2");
    }
    let y = generate(&params, n, r.get("seed")?)?.y;
    let profile = Profile::new(&y, &params)?;
    let delta = profile.delta();
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 2.0 * delta;
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 2.0 * delta;
    let set = profile.stationary_set();
    let mut rows: Vec<(f64, f64, bool)> = (0..points)
        .map(|k| {
            let theta = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            (theta, profile.value(theta), false)
        })
        .collect();
    rows.extend(set.points.iter().zip(&set.values).map(|(&t, &v)| (t, v, true)));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    match format {
        Format::Csv => {
            r.write_header(out)?;
            writeln!(out, "# delta={}", float(delta))?;
            writeln!(out, "theta,profile_value,is_stationary")?;
            for (t, v, s) in rows {
                writeln!(out, "{},{},{}", float(t), float(v), s)?;
            }
        }
        Format::Json => write_json(
            out,
            r,
            json!({
                "delta": delta,
                "stationary": to_value(&set)?,
                "curve": rows.iter().map(|&(t, v, s)| json!([t, v, s])).collect::<Vec<_>>(),
            }),
        )?,
    }
    Ok(())
}

pub fn validate_matrix<W: Write>(
    r: &Resolved,
    format: Format,
    out: &mut W,
    edges: Option<&mut dyn Write>,
) -> CliResult<()> {
    let n = positive_n(r)?;
    let spec = topology(r.raw("topology"), r.get("radius")?)?;
    let p = spec.matrix(n, mix(r.get("seed")?, 1), r.get_opt("tau")?)?;
    let report = validate_theorem_hypotheses(&p);
    if let Some(w) = edges {
        p.write_edge_list(w)?;
    }
    let opt_bool = |b: Option<bool>| b.map_or("NA".to_string(), |v| v.to_string());
    let opt_float = |x: Option<f64>| x.map_or("NA".to_string(), float);
    match format {
        Format::Csv => {
            r.write_header(out)?;
            writeln!(out, "key,value")?;
            writeln!(out, "symmetric,{}", report.symmetric)?;
            writeln!(out, "stochastic,{}", report.stochastic)?;
            writeln!(out, "primitive,{}", report.primitive)?;
            writeln!(out, "positive_spectrum,{}", opt_bool(report.positive_spectrum))?;
            writeln!(out, "nonneg_spectrum,{}", opt_bool(report.nonneg_spectrum))?;
            writeln!(out, "min_eigenvalue,{}", opt_float(report.min_eigenvalue))?;
            writeln!(out, "mu2,{}", opt_float(report.mu2))?;
            writeln!(out, "all_hold,{}", report.all_hold())?;
            write_warnings(out, &report)?;
        }
        Format::Json => write_json(out, r, to_value(&report)?)?,
    }
    Ok(())
}

pub fn asymptotics<W: Write>(r: &Resolved, format: Format, out: &mut W) -> CliResult<()> {
    let alpha: f64 = r.get("alpha")?;
    let ps: Vec<f64> = r.list("p_values")?;
    let ratios: Vec<f64> = r.list("ratios")?;
    let mut rows = Vec::new();
    for &p in &ps {
        for &ratio in &ratios {
            let beta = ratio * alpha;
            let (delta, q) = match (threshold(alpha, beta, p), classification_error_limit(alpha, beta, p)) {
                (Ok(d), Ok(q)) => (Some(d), Some(q)),
                _ => (None, None),
            };
            rows.push((p, ratio, beta, delta, q));
        }
    }
    let opt = |x: Option<f64>| x.map_or("NA".to_string(), float);
    match format {
        Format::Csv => {
            r.write_header(out)?;
            writeln!(out, "p,beta_over_alpha,alpha,beta,delta,q")?;
            for (p, ratio, beta, delta, q) in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    float(p),
                    float(ratio),
                    float(alpha),
                    float(beta),
                    opt(delta),
                    opt(q)
                )?;
            }
        }
        Format::Json => write_json(
            out,
            r,
            Value::Array(
                rows.iter()
                    .map(|&(p, ratio, beta, delta, q)| {
                        json!({ "p": p, "beta_over_alpha": ratio, "alpha": alpha, "beta": beta, "delta": delta, "q": q })
                    })
                    .collect(),
            ),
        )?,
    }
    Ok(())
}
