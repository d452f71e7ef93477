//! Density transport through a time grid.
//!
//! Starting from a point mass at `x0`, each step estimates the Legendre
//! coefficients of the next density. For every nonzero index `l` the squared
//! amplitude
//!
//! ```text
//! b_l = ∫∫ f̂_i(x) p(x' | x) (1 + P_l(x')) / 2 dx dx'
//! ```
//!
//! is handed to a QAE backend, and the estimate `b̂_l` becomes the coefficient
//! `â_l = (2 b̂_l − 1) C(l)`. The zeroth coefficient is pinned to `2^-d`.
//!
//! `b_l` is linear in the previous coefficients, `b_l = Σ_k a_k T_{k,l}`, so
//! for a time-homogeneous kernel one transfer matrix per step length serves
//! every step and every run. [`coefficient_target`] keeps the direct double
//! integral for cross-checks.
//!
//! Only `d = 1` is supported by the transport itself.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{density_mean_coeff, LegendreSeries};
use crate::error::{OsdeError, Result};
use crate::legendre::{self, MultiIndex};
use crate::qae::{QaeBackend, QaeOutcome};
use crate::quad;
use crate::rbm::{RbmKernel, TransitionKernel};
use crate::seed;

/// Points per axis of the grid on which each density's minimum is checked.
pub const BONA_FIDE_GRID: usize = 201;

/// Default absolute quadrature tolerance.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

/// Largest Gauss–Legendre rule used for the outer transfer integral.
const MAX_TRANSFER_NODES: usize = 1024;

/// How the per-coefficient accuracy is derived from the run parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsSchedule {
    /// Error budget `eps` split across steps and coefficients, with the
    /// matching failure probability.
    Theorem { eps: f64 },
    /// `2^-10 / √N`, no failure probability.
    Demo,
    /// Fixed per-coefficient accuracy and failure probability.
    Manual { eps: f64, delta: f64 },
}

impl EpsSchedule {
    /// `(ε′, δ′)` for `n` steps at degree `degree` in dimension `d`.
    pub fn resolve(&self, n: usize, degree: usize, d: usize) -> (f64, Option<f64>) {
        match *self {
            EpsSchedule::Theorem { eps } => {
                let l = degree as f64 + 0.5;
                let lg = ((2 * degree + 1) as f64).ln() + 0.5;
                let common = l.powi(d as i32) * lg.powf(d as f64 / 2.0);
                let nf = n as f64;
                let eps_prime = eps / (4.0 * (2.0 * nf).sqrt() * common);
                let delta_prime = eps / (8.0 * std::f64::consts::SQRT_2 * nf * common);
                (eps_prime, Some(delta_prime))
            }
            EpsSchedule::Demo => (2f64.powi(-10) / (n as f64).sqrt(), None),
            EpsSchedule::Manual { eps, delta } => (eps, Some(delta)),
        }
    }
}

/// Parameters of one transport run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// `t_0 < t_1 < … < t_N`.
    pub times: Vec<f64>,
    #[serde(rename = "L")]
    pub degree: usize,
    pub d: usize,
    pub x0: Vec<f64>,
    pub kernel: RbmKernel,
    pub backend: QaeBackend,
    pub quad_tol: f64,
    pub eps_schedule: EpsSchedule,
}

/// `n` equidistant times from `first` to `last`, preceded by `t0`.
pub fn demo_times(n: usize, t0: f64, first: f64, last: f64) -> Vec<f64> {
    let mut times = vec![t0];
    if n == 1 {
        times.push(last);
    } else {
        let h = (last - first) / (n - 1) as f64;
        times.extend((0..n).map(|i| {
            if i == n - 1 {
                last
            } else {
                first + i as f64 * h
            }
        }));
    }
    times
}

impl PipelineConfig {
    /// The reference setup: drift 0.5, unit volatility on `[-1, 1]`, start at
    /// 0, `N` equidistant times from 0.2 to 0.6, degree 5, random-depth
    /// estimation with 12 shots per round.
    pub fn demo(n: usize) -> Self {
        let (eps, _) = EpsSchedule::Demo.resolve(n.max(1), 5, 1);
        PipelineConfig {
            times: demo_times(n, 0.0, 0.2, 0.6),
            degree: 5,
            d: 1,
            x0: vec![0.0],
            kernel: RbmKernel::on_unit_interval(0.5, 1.0),
            backend: QaeBackend::Rqae { eps, shots: 12 },
            quad_tol: DEFAULT_QUAD_TOL,
            eps_schedule: EpsSchedule::Demo,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(OsdeError::domain("need at least one time step (two times)"));
        }
        if let Some(w) = self.times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(OsdeError::domain(format!(
                "times must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
        if self.degree < 1 {
            return Err(OsdeError::domain("degree L must be at least 1"));
        }
        check_dim(self.d)?;
        if self.x0.len() != self.d {
            return Err(OsdeError::domain(format!(
                "x0 has {} entries, expected {}",
                self.x0.len(),
                self.d
            )));
        }
        if !self.x0.iter().all(|&x| legendre::in_domain(x)) {
            return Err(OsdeError::domain(format!(
                "x0 = {:?} outside [-1, 1]",
                self.x0
            )));
        }
        if !(self.quad_tol > 0.0) {
            return Err(OsdeError::domain("quad_tol must be positive"));
        }
        self.kernel.validate()?;
        self.backend.validate()?;
        match self.eps_schedule {
            EpsSchedule::Theorem { eps } if !(eps > 0.0 && eps < 1.0) => Err(OsdeError::domain(
                format!("schedule eps must lie in (0, 1), got {eps}"),
            )),
            EpsSchedule::Manual { eps, delta }
                if !(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0) =>
            {
                Err(OsdeError::domain("manual eps and delta must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// `(ε′, δ′)` per coefficient estimate.
    pub fn epsilon_schedule(&self) -> (f64, Option<f64>) {
        self.eps_schedule
            .resolve(self.n_steps(), self.degree, self.d)
    }

    /// The backend with its accuracy set by the schedule.
    pub fn effective_backend(&self) -> QaeBackend {
        self.backend.with_eps(self.epsilon_schedule().0)
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d != 1 {
        return Err(OsdeError::domain(format!(
            "density transport is implemented for d = 1 only, got d = {d}"
        )));
    }
    Ok(())
}

/// Where a step starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    Series(LegendreSeries),
}

impl InitialState {
    fn dim(&self) -> usize {
        match self {
            InitialState::Point(x) => x.len(),
            InitialState::Series(s) => s.dim(),
        }
    }
}

/// Runs `kernel.density` inside a quadrature closure, parking the first
/// error so the caller can surface it.
struct Guarded<'a, K: ?Sized> {
    kernel: &'a K,
    failure: RefCell<Option<OsdeError>>,
}

impl<'a, K: TransitionKernel + ?Sized> Guarded<'a, K> {
    fn new(kernel: &'a K) -> Self {
        Guarded {
            kernel,
            failure: RefCell::new(None),
        }
    }

    fn p(&self, x: f64, s: f64, y: f64, s_next: f64) -> f64 {
        match self.kernel.density(x, s, y, s_next) {
            Ok(v) => v,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    }

    fn finish<T>(self, r: Result<T>) -> Result<T> {
        match self.failure.into_inner() {
            Some(e) => Err(e),
            None => r,
        }
    }
}

/// `b_l` by direct quadrature, clamped to `[0, 1]`.
///
/// Returns the clamped value and whether clamping was needed.
pub fn coefficient_target<K: TransitionKernel + ?Sized>(
    prev: &InitialState,
    kernel: &K,
    s: f64,
    s_next: f64,
    l: &MultiIndex,
    quad_tol: f64,
) -> Result<(f64, bool)> {
    check_dim(prev.dim())?;
    if l.dim() != 1 {
        return Err(OsdeError::domain("index dimension does not match d = 1"));
    }
    if l.is_zero() {
        return Err(OsdeError::domain("the zeroth coefficient is not estimated"));
    }
    let deg = l.entries()[0];
    let g = Guarded::new(kernel);
    let raw = match prev {
        InitialState::Point(x0) => {
            let x0 = x0[0];
            let r = quad::integrate_1d(
                |y| g.p(x0, s, y, s_next) * 0.5 * (1.0 + legendre::eval_p(deg, y)),
                -1.0,
                1.0,
                quad_tol,
            );
            g.finish(r)?.value
        }
        InitialState::Series(f) => {
            let r = quad::integrate_2d(
                |x, y| {
                    let fx = f.eval(&[x]).unwrap_or(0.0);
                    fx * g.p(x, s, y, s_next) * 0.5 * (1.0 + legendre::eval_p(deg, y))
                },
                (-1.0, 1.0),
                (-1.0, 1.0),
                quad_tol,
            );
            g.finish(r)?.value
        }
    };
    Ok(clamp_target(raw))
}

fn clamp_target(b: f64) -> (f64, bool) {
    let c = b.clamp(0.0, 1.0);
    (c, c != b)
}

/// `g_j(x) = ∫ p(y | x) P_j(y) dy` for `j = 0..=degree`.
fn kernel_moments<K: TransitionKernel + ?Sized>(
    kernel: &K,
    x: f64,
    s: f64,
    s_next: f64,
    degree: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let g = Guarded::new(kernel);
    let mut out = Vec::with_capacity(degree + 1);
    for j in 0..=degree {
        let r = quad::integrate_1d(
            |y| g.p(x, s, y, s_next) * legendre::eval_p(j, y),
            -1.0,
            1.0,
            tol,
        );
        match r {
            Ok(r) => out.push(r.value),
            Err(e) => return g.finish(Err(e)),
        }
    }
    g.finish(Ok(out))
}

/// Moments `M_{k,j} = ∫∫ P_k(x) p(y | x) P_j(y) dx dy`, `0 <= k, j <= L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    degree: usize,
    moments: Vec<f64>,
}

impl TransferMatrix {
    /// Inner integrals adaptively, outer by a Gauss–Legendre rule doubled
    /// until the moments settle to within `tol`.
    pub fn compute<K: TransitionKernel + ?Sized>(
        kernel: &K,
        s: f64,
        s_next: f64,
        degree: usize,
        tol: f64,
    ) -> Result<Self> {
        let size = degree + 1;
        let with_rule = |n: usize| -> Result<Vec<f64>> {
            let (nodes, weights) = legendre::gauss_legendre(n);
            let mut m = vec![0.0; size * size];
            let mut pk = Vec::new();
            for (&x, &w) in nodes.iter().zip(&weights) {
                let g = kernel_moments(kernel, x, s, s_next, degree, tol / 10.0)?;
                legendre::eval_all(degree, x, &mut pk);
                for k in 0..size {
                    for j in 0..size {
                        m[k * size + j] += w * pk[k] * g[j];
                    }
                }
            }
            Ok(m)
        };
        let mut n = degree + 32;
        let mut moments = with_rule(n)?;
        loop {
            let refined = with_rule(2 * n)?;
            n *= 2;
            let (worst, diff) = refined
                .iter()
                .zip(&moments)
                .map(|(a, b)| (a - b).abs())
                .enumerate()
                .fold(
                    (0, 0.0f64),
                    |acc, (i, e)| if e > acc.1 { (i, e) } else { acc },
                );
            moments = refined;
            if diff < tol {
                return Ok(TransferMatrix { degree, moments });
            }
            if 2 * n > MAX_TRANSFER_NODES {
                return Err(OsdeError::Projection {
                    index: vec![worst / size, worst % size],
                    reason: format!("transfer moment still moving by {diff:.3e} at {n} nodes"),
                });
            }
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn moment(&self, k: usize, j: usize) -> f64 {
        self.moments[k * (self.degree + 1) + j]
    }

    /// Unclamped `b_l`, `l = 1..=L`, for a density with coefficients `a`.
    pub fn targets(&self, a: &[f64]) -> Vec<f64> {
        (1..=self.degree)
            .map(|l| {
                a.iter()
                    .enumerate()
                    .map(|(k, ak)| ak * 0.5 * (self.moment(k, 0) + self.moment(k, l)))
                    .sum()
            })
            .collect()
    }
}

/// A kernel together with a cache of its transfer matrices.
///
/// For a time-homogeneous kernel matrices are keyed by the step length,
/// rounded to 1e-12 so that equidistant grids built by floating-point
/// arithmetic share one entry.
pub struct Transport<'k, K: TransitionKernel + ?Sized> {
    kernel: &'k K,
    degree: usize,
    quad_tol: f64,
    cache: Mutex<HashMap<(i64, i64), Arc<TransferMatrix>>>,
}

impl<'k, K: TransitionKernel + ?Sized> Transport<'k, K> {
    pub fn new(kernel: &'k K, degree: usize, quad_tol: f64) -> Self {
        Transport {
            kernel,
            degree,
            quad_tol,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn kernel(&self) -> &K {
        self.kernel
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn matrix(&self, s: f64, s_next: f64) -> Result<Arc<TransferMatrix>> {
        let q = |t: f64| (t * 1e12).round() as i64;
        let key = if self.kernel.is_time_homogeneous() {
            (0, q(s_next - s))
        } else {
            (q(s), q(s_next))
        };
        if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(TransferMatrix::compute(
            self.kernel,
            s,
            s_next,
            self.degree,
            self.quad_tol,
        )?);
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&m));
        Ok(m)
    }

    /// Unclamped `b_l` for `l = 1..=L`.
    pub fn targets(&self, prev: &InitialState, s: f64, s_next: f64) -> Result<Vec<f64>> {
        check_dim(prev.dim())?;
        match prev {
            InitialState::Point(x0) => {
                let g = kernel_moments(self.kernel, x0[0], s, s_next, self.degree, self.quad_tol)?;
                Ok((1..=self.degree).map(|l| 0.5 * (g[0] + g[l])).collect())
            }
            InitialState::Series(f) => {
                if f.degree() != self.degree {
                    return Err(OsdeError::domain(format!(
                        "series degree {} differs from transport degree {}",
                        f.degree(),
                        self.degree
                    )));
                }
                Ok(self.matrix(s, s_next)?.targets(f.coeffs()))
            }
        }
    }
}

/// One coefficient estimate inside a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    /// The degree `l`.
    pub index: usize,
    /// `b_l` after clamping.
    pub target: f64,
    pub clamped: bool,
    pub b_hat: f64,
    pub total_queries: u64,
    pub max_depth: u64,
}

/// Output of one transport step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the produced density, `1..=N`.
    pub i: usize,
    pub t: f64,
    pub density: LegendreSeries,
    pub estimates: Vec<CoefficientEstimate>,
    pub total_queries: u64,
    pub max_depth: u64,
    pub min_on_grid: f64,
    pub argmin: f64,
    pub bona_fide: bool,
}

/// One transport step from `prev` at time `s` to time `s_next`.
///
/// The estimate for degree `l` draws from its own stream seeded by
/// `(step_seed, l)`.
pub fn step<K: TransitionKernel + ?Sized>(
    transport: &Transport<'_, K>,
    prev: &InitialState,
    s: f64,
    s_next: f64,
    backend: &QaeBackend,
    step_seed: u64,
) -> Result<(LegendreSeries, Vec<CoefficientEstimate>)> {
    let targets = transport.targets(prev, s, s_next)?;
    let estimates: Vec<CoefficientEstimate> = targets
        .par_iter()
        .enumerate()
        .map(|(pos, &raw)| {
            let l = pos + 1;
            let (target, clamped) = clamp_target(raw);
            let mut rng = seed::stream(seed::derive_seed(step_seed, &[l as u64]));
            let QaeOutcome {
                estimate,
                total_queries,
                max_depth,
                ..
            } = backend.estimate(target, &mut rng)?;
            Ok(CoefficientEstimate {
                index: l,
                target,
                clamped,
                b_hat: estimate,
                total_queries,
                max_depth,
            })
        })
        .collect::<Result<_>>()?;

    let mut coeffs = vec![density_mean_coeff(1); transport.degree() + 1];
    for e in &estimates {
        coeffs[e.index] = (2.0 * e.b_hat - 1.0) * (e.index as f64 + 0.5);
    }
    Ok((
        LegendreSeries::density(1, transport.degree(), coeffs)?,
        estimates,
    ))
}

/// The estimated densities `f̂_1..f̂_N` with their resource ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTrajectory {
    pub config: PipelineConfig,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub total_queries: u64,
    pub max_depth: u64,
}

impl DensityTrajectory {
    pub fn densities(&self) -> impl Iterator<Item = &LegendreSeries> {
        self.steps.iter().map(|s| &s.density)
    }

    pub fn final_density(&self) -> Option<&LegendreSeries> {
        self.steps.last().map(|s| &s.density)
    }

    /// `∫_{x0}^{1} f̂_N`, the estimated probability of ending above the start.
    pub fn exceed_probability(&self) -> Result<f64> {
        let f = self
            .final_density()
            .ok_or_else(|| OsdeError::domain("trajectory has no densities"))?;
        f.interval_probability(&self.config.x0, &[1.0])
    }
}

/// A run that stopped early; `partial` holds the completed steps.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub step: usize,
    pub error: OsdeError,
    pub partial: Box<DensityTrajectory>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed: {}", self.step, self.error)
    }
}

impl std::error::Error for RunFailure {}

impl From<RunFailure> for OsdeError {
    fn from(r: RunFailure) -> Self {
        r.error
    }
}

/// Runs the full transport for `cfg` with its own kernel.
pub fn run(cfg: &PipelineConfig, seed: u64) -> std::result::Result<DensityTrajectory, RunFailure> {
    let transport = Transport::new(&cfg.kernel, cfg.degree, cfg.quad_tol);
    run_with(cfg, &transport, seed)
}

/// Runs the transport with an explicit kernel and matrix cache; the kernel
/// stored in `cfg` is ignored.
pub fn run_with<K: TransitionKernel + ?Sized>(
    cfg: &PipelineConfig,
    transport: &Transport<'_, K>,
    seed: u64,
) -> std::result::Result<DensityTrajectory, RunFailure> {
    let mut traj = DensityTrajectory {
        config: cfg.clone(),
        seed,
        steps: Vec::new(),
        total_queries: 0,
        max_depth: 0,
    };
    let fail = |step: usize, error: OsdeError, traj: &DensityTrajectory| RunFailure {
        step,
        error,
        partial: Box::new(traj.clone()),
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(0, e, &traj));
    }
    if transport.degree() != cfg.degree {
        let e = OsdeError::domain("transport degree differs from the configured degree");
        return Err(fail(0, e, &traj));
    }

    let backend = cfg.effective_backend();
    let mut prev = InitialState::Point(cfg.x0.clone());
    for (i, w) in cfg.times.windows(2).enumerate() {
        let step_seed = seed::derive_seed(seed, &[i as u64]);
        let (density, estimates) = match step(transport, &prev, w[0], w[1], &backend, step_seed) {
            Ok(v) => v,
            Err(e) => return Err(fail(i + 1, e, &traj)),
        };
        let (min_on_grid, argmin) = match density.min_on_grid(BONA_FIDE_GRID) {
            Ok((v, at)) => (v, at[0]),
            Err(e) => return Err(fail(i + 1, e, &traj)),
        };
        let total_queries = estimates.iter().map(|e| e.total_queries).sum();
        let max_depth = estimates.iter().map(|e| e.max_depth).max().unwrap_or(0);
        traj.total_queries += total_queries;
        traj.max_depth = traj.max_depth.max(max_depth);
        let density = density.with_time_index(i + 1);
        traj.steps.push(StepRecord {
            i: i + 1,
            t: w[1],
            density: density.clone(),
            estimates,
            total_queries,
            max_depth,
            min_on_grid,
            argmin,
            bona_fide: min_on_grid >= 0.0,
        });
        prev = InitialState::Series(density);
    }
    Ok(traj)
}

/// Coefficients `c_{l,l′} = C(l) ∫∫ P_{l′}(x) p(y | x) P_l(y)` for
/// `l ∈ {0..=L}`, `l′ ∈ {1..=L}`, with each row's absolute sum.
///
/// Rows summing to at most one mean estimation errors do not grow when
/// carried through a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCoefficients {
    pub degree: usize,
    /// `rows[l][l′ − 1]`.
    pub rows: Vec<Vec<f64>>,
    pub row_abs_sums: Vec<f64>,
}

pub fn transfer_coefficients<K: TransitionKernel + ?Sized>(
    kernel: &K,
    s: f64,
    s_next: f64,
    degree: usize,
    quad_tol: f64,
) -> Result<TransferCoefficients> {
    let m = TransferMatrix::compute(kernel, s, s_next, degree, quad_tol)?;
    let rows: Vec<Vec<f64>> = (0..=degree)
        .map(|l| {
            (1..=degree)
                .map(|lp| (l as f64 + 0.5) * m.moment(lp, l))
                .collect()
        })
        .collect();
    let row_abs_sums = rows
        .iter()
        .map(|r| r.iter().map(|c| c.abs()).sum())
        .collect();
    Ok(TransferCoefficients {
        degree,
        rows,
        row_abs_sums,
    })
}
