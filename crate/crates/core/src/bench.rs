//! Sweeps over the number of time steps `N`, comparing the density-transport
//! method with a single low-depth amplitude estimation of the terminal
//! expectation and with classical path sampling.
//!
//! Costs are reported in transition-oracle units. A Grover application in
//! the transport method holds one transition oracle; in the low-depth
//! baseline it holds a whole path of `N`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OsdeError, Result};
use crate::pipeline::{self, PipelineConfig, Transport};
use crate::qae::{self, QaeBackend};
use crate::rbm::RbmKernel;
use crate::seed;

/// Tolerance of the frozen reference probability.
pub const REFERENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Proposed,
    LowDepth,
    ClassicalMC,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::LowDepth, Method::ClassicalMC];

    fn tag(self) -> u64 {
        match self {
            Method::Proposed => 1,
            Method::LowDepth => 2,
            Method::ClassicalMC => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "Proposed",
            Method::LowDepth => "LowDepth",
            Method::ClassicalMC => "ClassicalMC",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OsdeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                OsdeError::domain(format!(
                    "unknown method {s:?}; expected Proposed, LowDepth or ClassicalMC"
                ))
            })
    }
}

/// Which query total of the low-depth baseline feeds the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowDepthMode {
    /// One expectation, at the terminal time.
    Single,
    /// One expectation per time step, `N` in total.
    #[default]
    AllExpectations,
}

/// How classical Monte Carlo cells are filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassicalMode {
    /// Trial count needed for `target_rmse`; the estimate is the reference
    /// itself and the reported RMSE is the target.
    Analytic,
    /// Simulate this many paths.
    Sampled { paths: u64 },
}

/// Everything a sweep needs apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub runs: usize,
    pub methods: Vec<Method>,
    pub kernel: RbmKernel,
    pub x0: f64,
    pub t0: f64,
    pub t_first: f64,
    pub t_end: f64,
    #[serde(rename = "L")]
    pub degree: usize,
    pub shots: u64,
    pub quad_tol: f64,
    /// Use the noise-free backend for the transport method.
    pub exact_backend: bool,
    pub lqae_eps: f64,
    pub low_depth_mode: LowDepthMode,
    pub classical_target_rmse: f64,
    pub classical_mode: ClassicalMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ns: vec![8, 11, 16, 22, 32, 45, 64],
            runs: 10,
            methods: Method::ALL.to_vec(),
            kernel: RbmKernel::on_unit_interval(0.5, 1.0),
            x0: 0.0,
            t0: 0.0,
            t_first: 0.2,
            t_end: 0.6,
            degree: 5,
            shots: 12,
            quad_tol: pipeline::DEFAULT_QUAD_TOL,
            exact_backend: false,
            lqae_eps: 0.0029,
            low_depth_mode: LowDepthMode::AllExpectations,
            classical_target_rmse: 0.0004,
            classical_mode: ClassicalMode::Analytic,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(OsdeError::domain(
                "ns must be a non-empty list of positive integers",
            ));
        }
        if self.runs == 0 {
            return Err(OsdeError::domain("runs must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(OsdeError::domain("at least one method is required"));
        }
        if !(self.classical_target_rmse > 0.0) {
            return Err(OsdeError::domain("classical_target_rmse must be positive"));
        }
        if let ClassicalMode::Sampled { paths: 0 } = self.classical_mode {
            return Err(OsdeError::domain("classical paths must be at least 1"));
        }
        for &n in &self.ns {
            self.pipeline_config(n).validate()?;
        }
        Ok(())
    }

    /// The transport configuration for `n` steps.
    pub fn pipeline_config(&self, n: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::demo(n);
        cfg.times = pipeline::demo_times(n, self.t0, self.t_first, self.t_end);
        cfg.degree = self.degree;
        cfg.x0 = vec![self.x0];
        cfg.kernel = self.kernel;
        cfg.quad_tol = self.quad_tol;
        cfg.backend = if self.exact_backend {
            QaeBackend::Exact
        } else {
            QaeBackend::Rqae {
                eps: cfg.epsilon_schedule().0,
                shots: self.shots,
            }
        };
        cfg
    }
}

/// One benchmark cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub run: usize,
    pub seed: u64,
    pub q_hat: f64,
    pub abs_err: f64,
    /// Transition-oracle queries under the configured low-depth mode.
    pub queries_up_units: u64,
    /// Transition-oracle queries when every time step's expectation is needed.
    pub queries_up_all: u64,
    /// Grover applications (or classical transition samples).
    pub queries_raw: u64,
    /// Deepest circuit in transition-oracle units.
    pub max_depth: u64,
    /// Deepest circuit in Grover applications (classical: path length).
    pub max_depth_raw: u64,
    /// Empty unless the cell failed.
    pub error: String,
}

impl ExperimentRecord {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

/// `N ⌈q(1 − q)/rmse²⌉`: paths needed for the target RMSE times the
/// transition samples per path.
pub fn classical_reference(q: f64, n: usize, target_rmse: f64) -> Result<u64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(OsdeError::domain(format!("q must lie in (0, 1), got {q}")));
    }
    if !(target_rmse > 0.0) {
        return Err(OsdeError::domain("target RMSE must be positive"));
    }
    let paths = (q * (1.0 - q) / (target_rmse * target_rmse)).ceil() as u64;
    Ok(n as u64 * paths)
}

/// Fraction of simulated paths ending above `x0`, and the number of
/// transition samples drawn (`n_paths · N`).
pub fn sample_classical_mc<R: Rng + ?Sized>(
    kernel: &RbmKernel,
    n: usize,
    times: &[f64],
    x0: f64,
    n_paths: u64,
    rng: &mut R,
) -> Result<(f64, u64)> {
    if n_paths == 0 {
        return Err(OsdeError::domain("need at least one path"));
    }
    if times.len() != n + 1 {
        return Err(OsdeError::domain(format!(
            "expected {} times for N = {n}, got {}",
            n + 1,
            times.len()
        )));
    }
    kernel.validate()?;
    let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|&h| !(h > 0.0)) {
        return Err(OsdeError::domain("times must increase strictly"));
    }
    let mut above = 0u64;
    for _ in 0..n_paths {
        let x = steps.iter().fold(x0, |x, &h| kernel.sample_step(x, h, rng));
        above += (x > x0) as u64;
    }
    Ok((above as f64 / n_paths as f64, n_paths * n as u64))
}

/// `Pr(X(t_end) > x0)` for each `N`, each computed once.
pub fn frozen_references(cfg: &SweepConfig) -> Result<BTreeMap<usize, f64>> {
    cfg.ns
        .iter()
        .map(|&n| {
            let times = pipeline::demo_times(n, cfg.t0, cfg.t_first, cfg.t_end);
            let t_end = *times.last().expect("at least two times");
            let q = cfg
                .kernel
                .exceed_probability(cfg.x0, cfg.t0, t_end, REFERENCE_TOL)?;
            Ok((n, q))
        })
        .collect()
}

struct Cell {
    method: Method,
    n: usize,
    run: usize,
    seed: u64,
}

struct CellResult {
    q_hat: f64,
    up_units: u64,
    up_all: u64,
    raw: u64,
    depth: u64,
    depth_raw: u64,
}

/// Runs every `(method, N, run)` cell. Cells are independent and run in
/// parallel; a failed cell is kept with its error message.
pub fn run_sweep(cfg: &SweepConfig, master_seed: u64) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let references = frozen_references(cfg)?;

    let ns: BTreeSet<usize> = cfg.ns.iter().copied().collect();
    let transports: BTreeMap<usize, Transport<'_, RbmKernel>> = ns
        .iter()
        .map(|&n| (n, Transport::new(&cfg.kernel, cfg.degree, cfg.quad_tol)))
        .collect();
    let configs: BTreeMap<usize, PipelineConfig> =
        ns.iter().map(|&n| (n, cfg.pipeline_config(n))).collect();

    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.ns {
            for run in 0..cfg.runs {
                let seed = seed::derive_seed(master_seed, &[method.tag(), n as u64, run as u64]);
                cells.push(Cell {
                    method,
                    n,
                    run,
                    seed,
                });
            }
        }
    }

    let records = cells
        .par_iter()
        .map(|c| {
            let q_ref = references[&c.n];
            let outcome = match c.method {
                Method::Proposed => run_proposed(&configs[&c.n], &transports[&c.n], c.seed),
                Method::LowDepth => run_low_depth(cfg, c.n, q_ref, c.seed),
                Method::ClassicalMC => run_classical(cfg, c.n, q_ref, c.seed),
            };
            match outcome {
                Ok(r) => ExperimentRecord {
                    method: c.method,
                    n: c.n,
                    run: c.run,
                    seed: c.seed,
                    q_hat: r.q_hat,
                    abs_err: (r.q_hat - q_ref).abs(),
                    queries_up_units: r.up_units,
                    queries_up_all: r.up_all,
                    queries_raw: r.raw,
                    max_depth: r.depth,
                    max_depth_raw: r.depth_raw,
                    error: String::new(),
                },
                Err(e) => ExperimentRecord {
                    method: c.method,
                    n: c.n,
                    run: c.run,
                    seed: c.seed,
                    q_hat: 0.0,
                    abs_err: 0.0,
                    queries_up_units: 0,
                    queries_up_all: 0,
                    queries_raw: 0,
                    max_depth: 0,
                    max_depth_raw: 0,
                    error: e.to_string(),
                },
            }
        })
        .collect();
    Ok(records)
}

fn run_proposed(
    cfg: &PipelineConfig,
    transport: &Transport<'_, RbmKernel>,
    seed: u64,
) -> Result<CellResult> {
    let traj = pipeline::run_with(cfg, transport, seed)?;
    // One transition oracle per Grover application; every time step's
    // density comes out of the same run.
    Ok(CellResult {
        q_hat: traj.exceed_probability()?,
        up_units: traj.total_queries,
        up_all: traj.total_queries,
        raw: traj.total_queries,
        depth: traj.max_depth,
        depth_raw: traj.max_depth,
    })
}

fn run_low_depth(cfg: &SweepConfig, n: usize, q_ref: f64, seed: u64) -> Result<CellResult> {
    let beta = qae::choose_beta(n as u64, cfg.lqae_eps)?;
    let mut rng = seed::stream(seed);
    let o = qae::lqae_simulate(q_ref, cfg.lqae_eps, beta, cfg.shots, &mut rng)?;
    let n = n as u64;
    let single = o.total_queries * n;
    let all = single * n;
    Ok(CellResult {
        q_hat: o.estimate,
        up_units: match cfg.low_depth_mode {
            LowDepthMode::Single => single,
            LowDepthMode::AllExpectations => all,
        },
        up_all: all,
        raw: o.total_queries,
        depth: o.max_depth * n,
        depth_raw: o.max_depth,
    })
}

fn run_classical(cfg: &SweepConfig, n: usize, q_ref: f64, seed: u64) -> Result<CellResult> {
    let (q_hat, trials) = match cfg.classical_mode {
        ClassicalMode::Analytic => (
            q_ref,
            classical_reference(q_ref, n, cfg.classical_target_rmse)?,
        ),
        ClassicalMode::Sampled { paths } => {
            let times = pipeline::demo_times(n, cfg.t0, cfg.t_first, cfg.t_end);
            let mut rng = seed::stream(seed);
            sample_classical_mc(&cfg.kernel, n, &times, cfg.x0, paths, &mut rng)?
        }
    };
    Ok(CellResult {
        q_hat,
        up_units: trials,
        up_all: trials,
        raw: trials,
        depth: n as u64,
        depth_raw: n as u64,
    })
}

/// Aggregates of one `(method, N)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub runs: usize,
    pub rmse: f64,
    pub mean_queries: f64,
    pub mean_queries_all: f64,
    pub mean_queries_raw: f64,
    pub mean_depth: f64,
    pub mean_depth_raw: f64,
}

/// Log-log least-squares slope with its standard error (NaN when fewer than
/// three points leave no residual degrees of freedom).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    pub queries: Slope,
    pub queries_all: Slope,
    pub queries_raw: Slope,
    pub depth: Slope,
    pub depth_raw: Slope,
    pub rmse: Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub cells: Vec<CellSummary>,
    pub fits: Vec<MethodFit>,
}

impl ScalingSummary {
    pub fn fit(&self, method: Method) -> Option<&MethodFit> {
        self.fits.iter().find(|f| f.method == method)
    }

    pub fn cell(&self, method: Method, n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }
}

/// Ordinary least squares of `ln y` on `ln x`. Non-positive values make the
/// slope NaN.
pub fn loglog_slope(points: &[(f64, f64)]) -> Slope {
    let nan = Slope {
        slope: f64::NAN,
        std_err: f64::NAN,
    };
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return nan;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return nan;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let std_err = if logs.len() > 2 {
        let ssr: f64 = logs
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum();
        (ssr / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Slope { slope, std_err }
}

/// Per-cell RMSE and means, then log-log fits per method. Failed records are
/// skipped. `classical_target_rmse` stands in for the RMSE of analytic
/// classical cells.
pub fn summarize(
    records: &[ExperimentRecord],
    classical_target_rmse: Option<f64>,
) -> Result<ScalingSummary> {
    let mut groups: BTreeMap<(Method, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.failed()) {
        groups.entry((r.method, r.n)).or_default().push(r);
    }

    let cells: Vec<CellSummary> = groups
        .iter()
        .map(|(&(method, n), rs)| {
            let k = rs.len() as f64;
            let mean =
                |f: &dyn Fn(&ExperimentRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / k;
            let rmse = match (method, classical_target_rmse) {
                (Method::ClassicalMC, Some(t)) => t,
                _ => mean(&|r| r.abs_err * r.abs_err).sqrt(),
            };
            CellSummary {
                method,
                n,
                runs: rs.len(),
                rmse,
                mean_queries: mean(&|r| r.queries_up_units as f64),
                mean_queries_all: mean(&|r| r.queries_up_all as f64),
                mean_queries_raw: mean(&|r| r.queries_raw as f64),
                mean_depth: mean(&|r| r.max_depth as f64),
                mean_depth_raw: mean(&|r| r.max_depth_raw as f64),
            }
        })
        .collect();

    let methods: BTreeSet<Method> = cells.iter().map(|c| c.method).collect();
    if methods.is_empty() {
        return Err(OsdeError::domain("no successful records to summarize"));
    }
    let mut fits = Vec::new();
    for method in methods {
        let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.method == method).collect();
        if mine.len() < 2 {
            return Err(OsdeError::domain(format!(
                "method {method} has {} distinct N; at least 2 are needed for a fit",
                mine.len()
            )));
        }
        let pts = |f: &dyn Fn(&CellSummary) -> f64| -> Vec<(f64, f64)> {
            mine.iter().map(|c| (c.n as f64, f(c))).collect()
        };
        fits.push(MethodFit {
            method,
            queries: loglog_slope(&pts(&|c| c.mean_queries)),
            queries_all: loglog_slope(&pts(&|c| c.mean_queries_all)),
            queries_raw: loglog_slope(&pts(&|c| c.mean_queries_raw)),
            depth: loglog_slope(&pts(&|c| c.mean_depth)),
            depth_raw: loglog_slope(&pts(&|c| c.mean_depth_raw)),
            rmse: loglog_slope(&pts(&|c| c.rmse)),
        });
    }
    Ok(ScalingSummary { cells, fits })
}
