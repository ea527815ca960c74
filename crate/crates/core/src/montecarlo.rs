//! Seeded Monte Carlo sweeps over network size, topology and algorithm.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::{em_run, iml_run, IterOptions};
use crate::error::{param_err, Result};
use crate::exec::{pairwise_sum, Execution};
use crate::graph::{build_topology, lazy, metropolis, ConsensusMatrix, TopologyKind};
use crate::ia::{ia_run, GammaSchedule, IaOptions, StopRule};
use crate::likelihood::ml_solution;
use crate::model::{generate, Label, ModelParams};
use crate::output::float;

/// Number of positions where two label vectors differ.
pub fn hamming_error(omega_est: &[Label], omega_true: &[Label]) -> Result<usize> {
    if omega_est.len() != omega_true.len() {
        return param_err(format!(
            "label vectors differ in length: {} vs {}",
            omega_est.len(),
            omega_true.len()
        ));
    }
    Ok(omega_est
        .iter()
        .zip(omega_true)
        .filter(|(a, b)| a != b)
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    Ia { gamma: GammaSchedule },
    Em,
    Iml,
    MlExact,
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::Ia { .. } => "ia",
            Algorithm::Em => "em",
            Algorithm::Iml => "iml",
            Algorithm::MlExact => "ml_exact",
        }
    }

    /// Whether the algorithm runs over a network.
    pub fn is_distributed(&self) -> bool {
        matches!(self, Algorithm::Ia { .. })
    }

    fn zeta(&self) -> Option<f64> {
        match self {
            Algorithm::Ia { gamma } => gamma.zeta(),
            _ => None,
        }
    }

    fn seed_tag(&self) -> u64 {
        let base = tag_hash(self.tag());
        match self {
            Algorithm::Ia { gamma } => {
                let family = match gamma.family {
                    crate::ia::GammaFamily::Power { zeta } => zeta.to_bits(),
                    crate::ia::GammaFamily::LogPower { exponent } => !exponent.to_bits(),
                };
                mix(mix(base, family), gamma.t_offset)
            }
            _ => base,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Topology family; concrete sizes and RGG positions are chosen per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    Complete,
    Ring,
    /// Most square torus for each `n`.
    Torus,
    Rgg { radius: f64 },
}

impl TopologySpec {
    pub fn tag(&self) -> &'static str {
        match self {
            TopologySpec::Complete => "complete",
            TopologySpec::Ring => "ring",
            TopologySpec::Torus => "torus",
            TopologySpec::Rgg { .. } => "rgg",
        }
    }

    pub fn kind(&self, n: usize, seed: u64) -> TopologyKind {
        match *self {
            TopologySpec::Complete => TopologyKind::Complete,
            TopologySpec::Ring => TopologyKind::Ring,
            TopologySpec::Torus => TopologyKind::torus_for(n),
            TopologySpec::Rgg { radius } => TopologyKind::Rgg { radius, seed },
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            TopologySpec::Rgg { radius } => mix(tag_hash(self.tag()), radius.to_bits()),
            _ => tag_hash(self.tag()),
        }
    }

    /// Metropolis matrix for one trial, made lazy when `tau` is given.
    pub fn matrix(&self, n: usize, seed: u64, tau: Option<f64>) -> Result<ConsensusMatrix> {
        let p = if n == 1 {
            ConsensusMatrix::averaging(1)
        } else {
            metropolis(&build_topology(self.kind(n, seed), n)?)
        };
        match tau {
            Some(t) => lazy(&p, t),
            None => Ok(p),
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub n_values: Vec<usize>,
    pub topologies: Vec<TopologySpec>,
    pub algorithms: Vec<Algorithm>,
    pub mc_runs: usize,
    pub base_seed: u64,
    pub tau: Option<f64>,
    pub ia_stop: StopRule,
    pub iter: IterOptions,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams) -> Self {
        ExperimentConfig {
            params,
            n_values: vec![10, 50, 100, 500, 1000],
            topologies: vec![TopologySpec::Complete],
            algorithms: vec![Algorithm::Em, Algorithm::Iml, Algorithm::MlExact],
            mc_runs: 400,
            base_seed: 0,
            tau: None,
            ia_stop: StopRule::default(),
            iter: IterOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_runs == 0 {
            return param_err("mc_runs must be at least 1");
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return param_err("n_values must be nonempty and positive");
        }
        if self.algorithms.is_empty() {
            return param_err("no algorithms selected");
        }
        if self.algorithms.iter().any(Algorithm::is_distributed) && self.topologies.is_empty() {
            return param_err("distributed algorithms need at least one topology");
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t <= 1.0) {
                return param_err(format!("tau must lie in (0, 1], got {t}"));
            }
        }
        for spec in &self.topologies {
            if let TopologySpec::Rgg { radius } = spec {
                if !(*radius > 0.0) {
                    return param_err(format!("rgg radius must be positive, got {radius}"));
                }
            }
            if *spec == TopologySpec::Torus {
                for &n in &self.n_values {
                    if let TopologyKind::TorusGrid { rows, .. } = TopologyKind::torus_for(n) {
                        if n > 1 && rows < 2 {
                            return param_err(format!("no torus with two or more rows has {n} nodes"));
                        }
                    }
                }
            }
        }
        self.params.delta()?;
        Ok(())
    }

    /// `(n, topology, algorithm)` cells in output order. Centralized
    /// algorithms ignore the network and get a single cell per `n`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in &self.n_values {
            for alg in &self.algorithms {
                if alg.is_distributed() {
                    for topo in &self.topologies {
                        cells.push(Cell {
                            n,
                            topology: Some(*topo),
                            algorithm: *alg,
                        });
                    }
                } else {
                    cells.push(Cell {
                        n,
                        topology: None,
                        algorithm: *alg,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub topology: Option<TopologySpec>,
    pub algorithm: Algorithm,
}

impl Cell {
    pub fn topology_tag(&self) -> &'static str {
        self.topology.map_or("none", |t| t.tag())
    }

    pub fn trial_seed(&self, base_seed: u64, trial: usize) -> u64 {
        let topo = self.topology.map_or(tag_hash("none"), |t| t.seed_tag());
        [self.n as u64, topo, self.algorithm.seed_tag(), trial as u64]
            .into_iter()
            .fold(mix(base_seed, 0x1C5E_ED00), mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub theta: f64,
    pub class_err: f64,
    pub sq_err: f64,
    pub iterations: u64,
    pub converged: bool,
}

/// One seeded trial: draw data, build the network if needed, run, score.
pub fn run_trial(config: &ExperimentConfig, cell: &Cell, trial: usize) -> Result<TrialOutcome> {
    let seed = cell.trial_seed(config.base_seed, trial);
    let params = &config.params;
    let obs = generate(params, cell.n, seed)?;
    let y = &obs.y;
    let (theta, labels, iterations, converged) = match cell.algorithm {
        Algorithm::Ia { gamma } => {
            let topo = cell.topology.unwrap_or(TopologySpec::Complete);
            let p = topo.matrix(cell.n, mix(seed, 1), config.tau)?;
            let opts = IaOptions {
                stop: config.ia_stop,
                trace_every: None,
                execution: Execution::Sequential,
            };
            let r = ia_run(y, &p, gamma, params, &opts)?;
            (r.theta_limit, r.omega_limit, r.iterations, r.converged)
        }
        Algorithm::Em => {
            let r = em_run(y, params, None, &config.iter)?;
            let labels = r.hard_labels();
            (r.theta, labels, r.iterations, r.converged)
        }
        Algorithm::Iml => {
            let r = iml_run(y, params, &config.iter)?;
            let labels = r.hard_labels();
            (r.theta, labels, r.iterations, r.converged)
        }
        Algorithm::MlExact => {
            let r = ml_solution(y, params)?;
            (r.theta, r.omega, 0, true)
        }
    };
    let wrong = hamming_error(&labels, &obs.omega_true)?;
    let err = theta - params.theta_star();
    Ok(TrialOutcome {
        seed,
        theta,
        class_err: wrong as f64 / cell.n as f64,
        sq_err: err * err,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub topology: String,
    pub algorithm: String,
    pub zeta: Option<f64>,
    pub mc_runs: usize,
    pub mean_class_err: f64,
    pub std_class_err: f64,
    pub mse_theta: f64,
    pub mean_iters: f64,
    pub nonconverged: usize,
}

impl SweepRow {
    pub fn aggregate(cell: &Cell, trials: &[TrialOutcome]) -> Self {
        let runs = trials.len();
        let k = runs as f64;
        let errs: Vec<f64> = trials.iter().map(|t| t.class_err).collect();
        let mean = pairwise_sum(&errs) / k;
        let dev: Vec<f64> = errs.iter().map(|e| (e - mean) * (e - mean)).collect();
        let std = if runs > 1 {
            (pairwise_sum(&dev) / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let sq: Vec<f64> = trials.iter().map(|t| t.sq_err).collect();
        let iters: Vec<f64> = trials.iter().map(|t| t.iterations as f64).collect();
        SweepRow {
            n: cell.n,
            topology: cell.topology_tag().to_string(),
            algorithm: cell.algorithm.tag().to_string(),
            zeta: cell.algorithm.zeta(),
            mc_runs: runs,
            mean_class_err: mean,
            std_class_err: std,
            mse_theta: pairwise_sum(&sq) / k,
            mean_iters: pairwise_sum(&iters) / k,
            nonconverged: trials.iter().filter(|t| !t.converged).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str =
    "n,topology,algorithm,zeta,mc_runs,mean_class_err,std_class_err,mse_theta,mean_iters,nonconverged";

impl SweepReport {
    pub fn row(&self, n: usize, topology: &str, algorithm: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.topology == topology && r.algorithm == algorithm)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            let zeta = r.zeta.map_or_else(|| "NA".to_string(), float);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.topology,
                r.algorithm,
                zeta,
                r.mc_runs,
                float(r.mean_class_err),
                float(r.std_class_err),
                float(r.mse_theta),
                float(r.mean_iters),
                r.nonconverged
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    run_sweep_with(config, Execution::default())
}

/// Trials inside each cell are spread over `exec`; results are identical
/// for every execution strategy.
pub fn run_sweep_with(config: &ExperimentConfig, exec: Execution) -> Result<SweepReport> {
    config.validate()?;
    let mut rows = Vec::new();
    for cell in config.cells() {
        let trials = run_cell_with(config, &cell, exec)?;
        rows.push(SweepRow::aggregate(&cell, &trials));
    }
    Ok(SweepReport {
        config: config.clone(),
        rows,
    })
}

pub fn run_cell_with(config: &ExperimentConfig, cell: &Cell, exec: Execution) -> Result<Vec<TrialOutcome>> {
    exec.map_indexed(config.mc_runs, |trial| run_trial(config, cell, trial))
        .into_iter()
        .collect()
}

fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// SplitMix64 finalizer applied to `a` combined with `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
