//! `icsim`: drive single runs, sweeps and diagnostics from the command line.

mod commands;
mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Format;
use config::{read_config_file, CliError, CliResult, Key, Resolved, MODEL_KEYS};

#[derive(Parser)]
#[command(name = "icsim", version, about = "Input-driven consensus estimation and fault classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One traced run of IA, EM, IML or exact ML.
    Simulate(SimulateArgs),
    /// Monte Carlo sweep over network sizes, topologies and algorithms.
    Sweep(SweepArgs),
    /// Profile likelihood on a dense grid plus its exact stationary points.
    LikelihoodCurve(CurveArgs),
    /// Check a consensus matrix against the convergence hypotheses.
    ValidateMatrix(ValidateArgs),
    /// Limit relative classification error over a (p, beta/alpha) grid.
    Asymptotics(AsymptoticsArgs),
}

#[derive(Args)]
struct Common {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    theta_star: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
}

macro_rules! flag_pairs {
    ($src:expr; $($field:ident),* $(,)?) => {
        vec![$((stringify!($field), $src.$field.as_ref().map(|v| v.to_string()))),*]
    };
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// ia, em, iml or ml_exact.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// complete, ring, torus or rgg.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    /// Lazy parameter; the matrix becomes (1 - tau) I + tau P.
    #[arg(long)]
    tau: Option<f64>,
    /// power or log_power.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    t_offset: Option<u64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    t_max: Option<u64>,
    #[arg(long)]
    margin_fraction: Option<f64>,
    /// Trace every k-th step; 0 disables the trace.
    #[arg(long)]
    trace_every: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<u64>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Write the run summary (JSON) here instead of stderr.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated network sizes.
    #[arg(long)]
    n_values: Option<String>,
    #[arg(long)]
    topologies: Option<String>,
    #[arg(long)]
    algorithms: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    zetas: Option<String>,
    #[arg(long)]
    exponents: Option<String>,
    #[arg(long)]
    mc_runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    t_max: Option<u64>,
    #[arg(long)]
    margin_fraction: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<u64>,
    /// parallel or sequential.
    #[arg(long)]
    execution: Option<String>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Also write the matrix as "i j weight" lines.
    #[arg(long)]
    edges: Option<PathBuf>,
}

#[derive(Args)]
struct AsymptoticsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated prior probabilities of the faulty label.
    #[arg(long)]
    p_values: Option<String>,
    /// Comma-separated beta/alpha values.
    #[arg(long)]
    ratios: Option<String>,
}

fn resolve(
    command: &'static str,
    common: &Common,
    keys: &[&[Key]],
    flags: Vec<(&'static str, Option<String>)>,
) -> CliResult<Resolved> {
    let file = match &common.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    Resolved::resolve(command, keys, &file, &flags)
}

fn open_output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Usage(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn model_flags(m: &ModelArgs) -> Vec<(&'static str, Option<String>)> {
    flag_pairs!(m; theta_star, alpha, beta, p)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => {
            let mut flags = model_flags(&a.model);
            flags.extend(flag_pairs!(a; algo, n, seed, topology, radius, tau, gamma, zeta, exponent,
                t_offset, window, t_max, margin_fraction, trace_every, eps, max_iter, theta0));
            let r = resolve("simulate", &a.common, &[&MODEL_KEYS, &commands::SIMULATE_KEYS], flags)?;
            let mut out = open_output(&a.common.output)?;
            let summary = commands::simulate(&r, a.common.format, &mut out)?;
            out.flush()?;
            let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
            match &a.summary {
                Some(path) => std::fs::write(path, text + "\n")?,
                None => eprintln!("{text}"),
            }
        }
        Command::Sweep(a) => {
            let mut flags = model_flags(&a.model);
            flags.extend(flag_pairs!(a; n_values, topologies, algorithms, gamma, zetas, exponents,
                mc_runs, seed, radius, tau, window, t_max, margin_fraction, eps, max_iter, execution));
            let r = resolve("sweep", &a.common, &[&MODEL_KEYS, &commands::SWEEP_KEYS], flags)?;
            let mut out = open_output(&a.common.output)?;
            commands::sweep(&r, a.common.format, &mut out)?;
            out.flush()?;
        }
        Command::LikelihoodCurve(a) => {
            let mut flags = model_flags(&a.model);
            flags.extend(flag_pairs!(a; n, seed, grid_points));
            let r = resolve("likelihood-curve", &a.common, &[&MODEL_KEYS, &commands::CURVE_KEYS], flags)?;
            let mut out = open_output(&a.common.output)?;
            commands::likelihood_curve(&r, a.common.format, &mut out)?;
            out.flush()?;
        }
        Command::ValidateMatrix(a) => {
            let flags = flag_pairs!(a; topology, n, seed, radius, tau);
            let r = resolve("validate-matrix", &a.common, &[&commands::VALIDATE_KEYS], flags)?;
            let mut out = open_output(&a.common.output)?;
            let mut edges = match &a.edges {
                Some(p) => Some(open_output(&Some(p.clone()))?),
                None => None,
            };
            commands::validate_matrix(&r, a.common.format, &mut out, edges.as_deref_mut().map(|w| w as &mut dyn Write))?;
            if let Some(w) = edges.as_mut() {
                w.flush()?;
            }
            out.flush()?;
        }
        Command::Asymptotics(a) => {
            let flags = flag_pairs!(a; alpha, p_values, ratios);
            let r = resolve("asymptotics", &a.common, &[&commands::ASYMPTOTICS_KEYS], flags)?;
            let mut out = open_output(&a.common.output)?;
            commands::asymptotics(&r, a.common.format, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
