//! Communication topologies and consensus weight matrices.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::exec::Execution;

/// Largest matrix for which the dense eigensolve is run.
pub const DEFAULT_SPECTRAL_CAP: usize = 2048;
/// Resamples allowed before a random geometric graph is declared disconnected.
pub const DEFAULT_RGG_RETRIES: u32 = 100;

const PAR_MATVEC_MIN_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    TorusGrid { rows: usize, cols: usize },
    /// Uniform points in the unit square, linked when closer than `radius`.
    Rgg { radius: f64, seed: u64 },
    /// Built from an explicit edge list.
    Custom,
}

impl TopologyKind {
    /// Torus with the most square `rows x cols = n` factorization.
    pub fn torus_for(n: usize) -> Self {
        let mut rows = (n as f64).sqrt() as usize;
        while rows > 1 && !n.is_multiple_of(rows) {
            rows -= 1;
        }
        let rows = rows.max(1);
        TopologyKind::TorusGrid {
            rows,
            cols: n / rows,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Ring => "ring",
            TopologyKind::TorusGrid { .. } => "torus",
            TopologyKind::Rgg { .. } => "rgg",
            TopologyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::TorusGrid { rows, cols } => write!(f, "torus{rows}x{cols}"),
            TopologyKind::Rgg { radius, .. } => write!(f, "rgg(r={radius})"),
            other => f.write_str(other.tag()),
        }
    }
}

/// Undirected communication graph with sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    neighbors: Vec<Vec<usize>>,
    /// Node positions for geometric graphs.
    pub positions: Option<Vec<[f64; 2]>>,
    /// Number of samples drawn before a connected realization was found.
    pub attempts: u32,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Undirected graph from an edge list. Duplicates are merged; self-loops
    /// and out-of-range endpoints are rejected. Connectivity is required.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return param_err("topology needs at least one node");
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return param_err(format!("edge ({i}, {j}) out of range for n = {n}"));
            }
            if i == j {
                return param_err(format!("self-loop at node {i}"));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        let topo = Topology::from_neighbors(TopologyKind::Custom, neighbors, None, 1);
        if !topo.is_connected() {
            return Err(Error::Topology("edge list does not form a connected graph".into()));
        }
        Ok(topo)
    }

    fn from_neighbors(
        kind: TopologyKind,
        mut neighbors: Vec<Vec<usize>>,
        positions: Option<Vec<[f64; 2]>>,
        attempts: u32,
    ) -> Self {
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            list.retain(|&j| j != i);
        }
        Topology {
            kind,
            neighbors,
            positions,
            attempts,
        }
    }

    /// Breadth-first reachability of every node from node 0.
    pub fn is_connected(&self) -> bool {
        connected(&self.neighbors)
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .all(|(i, list)| list.iter().all(|&j| j != i && self.has_edge(j, i)))
    }
}

fn connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        for &j in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    reached == n
}

pub fn build_topology(kind: TopologyKind, n: usize) -> Result<Topology> {
    build_topology_with_retries(kind, n, DEFAULT_RGG_RETRIES)
}

pub fn build_topology_with_retries(kind: TopologyKind, n: usize, retries: u32) -> Result<Topology> {
    if n < 2 {
        return param_err(format!("topologies need n >= 2, got {n}"));
    }
    let topo = match kind {
        TopologyKind::Complete => {
            let neighbors = (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect();
            Topology::from_neighbors(kind, neighbors, None, 1)
        }
        TopologyKind::Ring => {
            let neighbors = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
            Topology::from_neighbors(kind, neighbors, None, 1)
        }
        TopologyKind::TorusGrid { rows, cols } => {
            if rows == 0 || cols == 0 || rows * cols != n {
                return param_err(format!("torus {rows}x{cols} does not have {n} nodes"));
            }
            let id = |r: usize, c: usize| r * cols + c;
            let neighbors = (0..n)
                .map(|i| {
                    let (r, c) = (i / cols, i % cols);
                    vec![
                        id((r + rows - 1) % rows, c),
                        id((r + 1) % rows, c),
                        id(r, (c + cols - 1) % cols),
                        id(r, (c + 1) % cols),
                    ]
                })
                .collect();
            Topology::from_neighbors(kind, neighbors, None, 1)
        }
        TopologyKind::Rgg { radius, seed } => return build_rgg(n, radius, seed, retries),
        TopologyKind::Custom => {
            return param_err("custom topologies are built with Topology::from_edges")
        }
    };
    Ok(topo)
}

fn build_rgg(n: usize, radius: f64, seed: u64, retries: u32) -> Result<Topology> {
    if !(radius > 0.0 && radius < std::f64::consts::SQRT_2) {
        return param_err(format!("rgg radius must lie in (0, sqrt 2), got {radius}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r2 = radius * radius;
    for attempt in 1..=retries.max(1) {
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                let dx = pts[i][0] - pts[j][0];
                let dy = pts[i][1] - pts[j][1];
                if dx * dx + dy * dy < r2 {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        if connected(&neighbors) {
            return Ok(Topology::from_neighbors(
                TopologyKind::Rgg { radius, seed },
                neighbors,
                Some(pts),
                attempt,
            ));
        }
    }
    Err(Error::Topology(format!(
        "random geometric graph (n = {n}, r = {radius}) still disconnected after {retries} samples"
    )))
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// From per-row `(column, value)` lists; columns are sorted here.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            acc += self.values[k] * x[self.col_idx[k]];
        }
        acc
    }

    fn matvec(&self, x: &[f64], out: &mut [f64], exec: Execution) {
        if exec == Execution::Parallel && self.n >= PAR_MATVEC_MIN_ROWS {
            par_rows(self, x, out);
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.row_dot(i, x);
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn par_rows(m: &CsrMatrix, x: &[f64], out: &mut [f64]) {
    use rayon::prelude::*;
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| *o = m.row_dot(i, x));
}

#[cfg(not(feature = "parallel"))]
fn par_rows(m: &CsrMatrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m.row_dot(i, x);
    }
}

/// Storage for a consensus matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Sparse(CsrMatrix),
    /// `(1 - tau) I + tau * 11^T / n`; `tau = 1` is exact averaging.
    Averaging { tau: f64 },
}

/// Symmetric stochastic matrix adapted to a communication graph.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    n: usize,
    weights: Weights,
    spectral_cap: usize,
    #[serde(skip)]
    spectrum: OnceLock<Option<Vec<f64>>>,
}

impl Clone for ConsensusMatrix {
    fn clone(&self) -> Self {
        ConsensusMatrix {
            n: self.n,
            weights: self.weights.clone(),
            spectral_cap: self.spectral_cap,
            spectrum: self.spectrum.clone(),
        }
    }
}

impl PartialEq for ConsensusMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.weights == other.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetadata {
    pub is_primitive: bool,
    pub min_eigenvalue: Option<f64>,
    /// Second-largest eigenvalue modulus.
    pub mu2: Option<f64>,
}

impl ConsensusMatrix {
    fn new(n: usize, weights: Weights) -> Self {
        ConsensusMatrix {
            n,
            weights,
            spectral_cap: DEFAULT_SPECTRAL_CAP,
            spectrum: OnceLock::new(),
        }
    }

    /// Exact averaging `11^T / n`.
    pub fn averaging(n: usize) -> Self {
        ConsensusMatrix::new(n, Weights::Averaging { tau: 1.0 })
    }

    /// From a row list. Symmetry and stochasticity are not enforced here;
    /// see [`validate_theorem_hypotheses`].
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        ConsensusMatrix::new(n, Weights::Sparse(CsrMatrix::from_rows(rows)))
    }

    pub fn with_spectral_cap(mut self, cap: usize) -> Self {
        self.spectral_cap = cap;
        self.spectrum = OnceLock::new();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn spectral_cap(&self) -> usize {
        self.spectral_cap
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Weights::Sparse(m) => m.get(i, j),
            Weights::Averaging { tau } => {
                let off = tau / self.n as f64;
                if i == j {
                    1.0 - tau + off
                } else {
                    off
                }
            }
        }
    }

    /// `out = P x`, sequential.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_with(x, out, Execution::Sequential);
    }

    /// `out = P x`. Every output entry is reduced in a fixed order, so the
    /// result does not depend on `exec`.
    pub fn apply_with(&self, x: &[f64], out: &mut [f64], exec: Execution) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        match &self.weights {
            Weights::Sparse(m) => m.matvec(x, out, exec),
            Weights::Averaging { tau } => {
                let avg = x.iter().sum::<f64>() / self.n as f64;
                let keep = 1.0 - tau;
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = keep * xi + tau * avg;
                }
            }
        }
    }

    /// Nonzero entries `(i, j, P_ij)` in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.weights {
            Weights::Sparse(m) => (0..self.n)
                .flat_map(|i| m.row(i).map(move |(j, w)| (i, j, w)))
                .filter(|&(_, _, w)| w != 0.0)
                .collect(),
            Weights::Averaging { .. } => (0..self.n)
                .flat_map(|i| (0..self.n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, self.get(i, j)))
                .filter(|&(_, _, w)| w != 0.0)
                .collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.entries() {
            m[(i, j)] = w;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        match &self.weights {
            Weights::Sparse(m) => (0..self.n).map(|i| m.row(i).map(|(_, w)| w).sum()).collect(),
            Weights::Averaging { tau } => {
                let off = tau / self.n as f64;
                vec![1.0 - tau + off + off * (self.n - 1) as f64; self.n]
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.weights {
            Weights::Sparse(m) => (0..self.n).all(|i| m.row(i).all(|(j, w)| m.get(j, i) == w)),
            Weights::Averaging { .. } => true,
        }
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        let nonneg = match &self.weights {
            Weights::Sparse(m) => m.values.iter().all(|&w| w >= 0.0),
            Weights::Averaging { tau } => *tau > 0.0 && *tau <= 1.0,
        };
        nonneg && self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// Every positive off-diagonal entry sits on an edge of `topology`.
    pub fn is_adapted_to(&self, topology: &Topology) -> bool {
        self.n == topology.n()
            && self
                .entries()
                .iter()
                .all(|&(i, j, w)| i == j || w <= 0.0 || topology.has_edge(i, j))
    }

    /// Irreducible and aperiodic. For a symmetric pattern this holds iff the
    /// support graph is connected and either some diagonal entry is positive
    /// or the graph has an odd cycle.
    pub fn is_primitive(&self) -> bool {
        match &self.weights {
            Weights::Averaging { tau } => *tau > 0.0,
            Weights::Sparse(m) => {
                let mut neighbors = vec![Vec::new(); self.n];
                let mut self_loop = false;
                for (i, list) in neighbors.iter_mut().enumerate() {
                    for (j, w) in m.row(i) {
                        if w > 0.0 {
                            if i == j {
                                self_loop = true;
                            } else {
                                list.push(j);
                            }
                        }
                    }
                }
                connected(&neighbors) && (self_loop || !bipartite(&neighbors))
            }
        }
    }

    /// Ascending eigenvalues, or `None` above the spectral cap.
    pub fn spectrum(&self) -> Option<&[f64]> {
        self.spectrum
            .get_or_init(|| self.compute_spectrum())
            .as_deref()
    }

    fn compute_spectrum(&self) -> Option<Vec<f64>> {
        match &self.weights {
            Weights::Averaging { tau } => {
                let mut ev = vec![1.0 - tau; self.n - 1];
                ev.push(1.0);
                ev.sort_by(f64::total_cmp);
                Some(ev)
            }
            Weights::Sparse(_) if self.n > self.spectral_cap => None,
            Weights::Sparse(_) => {
                let eig = SymmetricEigen::new(self.to_dense());
                let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                ev.sort_by(f64::total_cmp);
                Some(ev)
            }
        }
    }

    pub fn metadata(&self) -> SpectralMetadata {
        let spectrum = self.spectrum();
        SpectralMetadata {
            is_primitive: self.is_primitive(),
            min_eigenvalue: spectrum.map(|ev| ev[0]),
            mu2: spectrum.map(second_modulus),
        }
    }

    /// `"i j w"` lines for every nonzero entry.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j, w) in self.entries() {
            writeln!(out, "{i} {j} {}", crate::output::float(w))?;
        }
        Ok(())
    }
}

fn second_modulus(ev: &[f64]) -> f64 {
    // Drop one copy of the Perron eigenvalue (the largest).
    ev[..ev.len() - 1]
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

fn bipartite(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    let mut color = vec![u8::MAX; n];
    for s in 0..n {
        if color[s] != u8::MAX {
            continue;
        }
        color[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if color[j] == u8::MAX {
                    color[j] = 1 - color[i];
                    queue.push_back(j);
                } else if color[j] == color[i] {
                    return false;
                }
            }
        }
    }
    true
}

/// Metropolis weights `1 / max(deg i + 1, deg j + 1)` on edges, remainder on
/// the diagonal. Complete graphs get exact averaging `11^T / n`.
pub fn metropolis(topology: &Topology) -> ConsensusMatrix {
    let n = topology.n();
    if topology.kind == TopologyKind::Complete {
        return ConsensusMatrix::averaging(n);
    }
    let rows = (0..n)
        .map(|i| {
            let di = topology.degree(i);
            let mut row: Vec<(usize, f64)> = topology
                .neighbors(i)
                .iter()
                .map(|&j| (j, 1.0 / (di.max(topology.degree(j)) + 1) as f64))
                .collect();
            let off: f64 = row.iter().map(|&(_, w)| w).sum();
            row.push((i, 1.0 - off));
            row
        })
        .collect();
    ConsensusMatrix::from_rows(rows)
}

/// `(1 - tau) I + tau P`.
pub fn lazy(p: &ConsensusMatrix, tau: f64) -> Result<ConsensusMatrix> {
    if !(tau > 0.0 && tau <= 1.0) {
        return param_err(format!("lazy parameter must lie in (0, 1], got {tau}"));
    }
    let weights = match &p.weights {
        Weights::Averaging { tau: inner } => Weights::Averaging { tau: inner * tau },
        Weights::Sparse(m) => {
            let rows = (0..p.n)
                .map(|i| {
                    let mut row: Vec<(usize, f64)> = m
                        .row(i)
                        .map(|(j, w)| (j, w * tau))
                        .collect();
                    match row.iter_mut().find(|(j, _)| *j == i) {
                        Some(diag) => diag.1 += 1.0 - tau,
                        None => row.push((i, 1.0 - tau)),
                    }
                    row
                })
                .collect();
            Weights::Sparse(CsrMatrix::from_rows(rows))
        }
    };
    Ok(ConsensusMatrix::new(p.n, weights).with_spectral_cap(p.spectral_cap))
}

/// Diagnostic report on the convergence hypotheses for the consensus matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub symmetric: bool,
    pub stochastic: bool,
    pub primitive: bool,
    /// All eigenvalues strictly positive; `None` when not computed.
    pub positive_spectrum: Option<bool>,
    /// All eigenvalues nonnegative; `None` when not computed.
    pub nonneg_spectrum: Option<bool>,
    pub min_eigenvalue: Option<f64>,
    pub mu2: Option<f64>,
    pub warnings: Vec<String>,
}

impl HypothesisReport {
    /// Every hypothesis verified, including strict spectral positivity.
    pub fn all_hold(&self) -> bool {
        self.symmetric && self.stochastic && self.primitive && self.positive_spectrum == Some(true)
    }
}

const SPECTRUM_TOL: f64 = 1e-12;

pub fn validate_theorem_hypotheses(p: &ConsensusMatrix) -> HypothesisReport {
    let symmetric = p.is_symmetric();
    let stochastic = p.is_stochastic(1e-12);
    let meta = p.metadata();
    let positive_spectrum = meta.min_eigenvalue.map(|l| l > SPECTRUM_TOL);
    let nonneg_spectrum = meta.min_eigenvalue.map(|l| l >= -SPECTRUM_TOL);
    let mut warnings = Vec::new();
    if !symmetric {
        warnings.push("matrix is not symmetric".to_string());
    }
    if !stochastic {
        warnings.push("rows do not sum to one or an entry is negative".to_string());
    }
    if !meta.is_primitive {
        warnings.push("matrix is not primitive".to_string());
    }
    match positive_spectrum {
        Some(false) => warnings.push(format!(
            "smallest eigenvalue {} is not positive; a lazy version (1-tau) I + tau P repairs it",
            meta.min_eigenvalue.unwrap_or(f64::NAN)
        )),
        None => warnings.push(format!(
            "spectrum not computed (n = {} above cap {}); lazy(P, 0.5) guarantees nonnegative eigenvalues",
            p.n, p.spectral_cap
        )),
        Some(true) => {}
    }
    HypothesisReport {
        symmetric,
        stochastic,
        primitive: meta.is_primitive,
        positive_spectrum,
        nonneg_spectrum,
        min_eigenvalue: meta.min_eigenvalue,
        mu2: meta.mu2,
        warnings,
    }
}
