//! Classical simulation of maximum-likelihood amplitude estimation.
//!
//! A schedule of Grover powers is sampled exactly: a shot at angle
//! multiplier `m` returns 1 with probability `sin²(m θ)`, `θ = arcsin √a`.
//! Two schedules are provided:
//!
//! - random depth ([`rqae_simulate`]): round `i` draws its multiplier
//!   uniformly from `2^i ..= 2^(i+1)` (the last round stops at `⌈1/ε⌉`)
//! - low depth ([`lqae_simulate`]): round `k` uses `2⌊k^((1-β)/2β)⌋ + 1`
//!
//! Both read out the likelihood-maximizing amplitude with [`mle_readout`].
//! Depth and query counts are in Grover-application units, with the
//! multiplier itself taken as the depth of a shot.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OsdeError, Result};

/// Smallest probability admitted inside a logarithm.
const PROB_FLOOR: f64 = 1e-300;

/// Minimum number of points in the likelihood grid over `θ ∈ [0, π/2]`.
pub const MIN_GRID_POINTS: usize = 10_000;

/// Grid points per unit of the largest multiplier.
pub const GRID_POINTS_PER_MULT: usize = 8;

/// Golden-section stopping width in `θ`.
const THETA_TOL: f64 = 1e-12;

/// Shots taken at one angle multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub mult: u64,
    pub shots: u64,
    pub ones: u64,
}

/// An amplitude estimate with its resource ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaeOutcome {
    pub estimate: f64,
    pub total_queries: u64,
    pub max_depth: u64,
    pub rounds: Vec<Round>,
}

impl QaeOutcome {
    fn from_rounds(rounds: Vec<Round>) -> Result<Self> {
        let estimate = mle_readout(&rounds)?;
        let (total_queries, max_depth) = ledger(&rounds);
        Ok(QaeOutcome {
            estimate,
            total_queries,
            max_depth,
            rounds,
        })
    }

    /// Whether the stored totals agree with the recorded rounds.
    pub fn ledger_is_consistent(&self) -> bool {
        ledger(&self.rounds) == (self.total_queries, self.max_depth)
    }
}

/// `(Σ shots·mult, max mult)` over the rounds.
pub fn ledger(rounds: &[Round]) -> (u64, u64) {
    rounds.iter().fold((0, 0), |(q, d), r| {
        (
            q + r.shots * r.mult,
            if r.shots > 0 { d.max(r.mult) } else { d },
        )
    })
}

/// Which estimator turns an amplitude into a [`QaeOutcome`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QaeBackend {
    /// Returns the amplitude itself at zero cost.
    Exact,
    /// Random-depth schedule with accuracy `eps` and `shots` per round.
    Rqae { eps: f64, shots: u64 },
    /// Low-depth schedule with accuracy `eps`, depth exponent `beta`.
    Lqae { eps: f64, beta: f64, shots: u64 },
}

impl QaeBackend {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QaeBackend::Exact => Ok(()),
            QaeBackend::Rqae { eps, shots } => {
                check_eps(eps)?;
                check_shots(shots)
            }
            QaeBackend::Lqae { eps, beta, shots } => {
                check_eps(eps)?;
                check_beta(beta)?;
                check_shots(shots)
            }
        }
    }

    pub fn estimate<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Result<QaeOutcome> {
        match *self {
            QaeBackend::Exact => exact_backend(a),
            QaeBackend::Rqae { eps, shots } => rqae_simulate(a, eps, shots, rng),
            QaeBackend::Lqae { eps, beta, shots } => lqae_simulate(a, eps, beta, shots, rng),
        }
    }

    /// The same backend with its accuracy replaced (no-op for `Exact`).
    pub fn with_eps(self, new_eps: f64) -> Self {
        match self {
            QaeBackend::Exact => QaeBackend::Exact,
            QaeBackend::Rqae { shots, .. } => QaeBackend::Rqae {
                eps: new_eps,
                shots,
            },
            QaeBackend::Lqae { beta, shots, .. } => QaeBackend::Lqae {
                eps: new_eps,
                beta,
                shots,
            },
        }
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(OsdeError::domain(format!(
            "amplitude must lie in [0, 1], got {a}"
        )));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OsdeError::domain(format!(
            "eps must lie in (0, 1), got {eps}"
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(OsdeError::domain(format!(
            "beta must lie in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

fn check_shots(shots: u64) -> Result<()> {
    if shots == 0 {
        return Err(OsdeError::domain("at least one shot per round is required"));
    }
    Ok(())
}

/// Noise-free limit: the estimate is `a`, no queries are spent.
pub fn exact_backend(a: f64) -> Result<QaeOutcome> {
    check_amplitude(a)?;
    Ok(QaeOutcome {
        estimate: a,
        total_queries: 0,
        max_depth: 0,
        rounds: Vec::new(),
    })
}

/// `⌊log₂(1/ε)⌋`, exact at powers of two.
fn floor_log2_inv(eps: f64) -> u32 {
    let inv = 1.0 / eps;
    let mut k = inv.log2().floor().max(0.0) as u32;
    while k > 0 && 2f64.powi(k as i32) > inv {
        k -= 1;
    }
    while 2f64.powi(k as i32 + 1) <= inv {
        k += 1;
    }
    k
}

/// Round layout of the random-depth schedule: `(rounds, ⌈1/ε⌉)`.
pub fn rqae_schedule(eps: f64) -> Result<(u32, u64)> {
    check_eps(eps)?;
    let k = floor_log2_inv(eps);
    let ceil_inv = (1.0 / eps).ceil() as u64;
    let rounds = if (1u64 << k) < ceil_inv { k + 1 } else { k };
    Ok((rounds.max(1), ceil_inv))
}

/// Inclusive multiplier range of round `i >= 1` in a schedule of `rounds`.
pub fn rqae_range(i: u32, rounds: u32, ceil_inv: u64) -> (u64, u64) {
    let lo = 1u64 << i;
    let hi = if i + 1 < rounds {
        1u64 << (i + 1)
    } else {
        ceil_inv
    };
    (lo, hi.max(lo))
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p
}

/// Random-depth amplitude estimation of `a` to accuracy `eps` with `shots`
/// shots per round.
pub fn rqae_simulate<R: Rng + ?Sized>(
    a: f64,
    eps: f64,
    shots: u64,
    rng: &mut R,
) -> Result<QaeOutcome> {
    check_amplitude(a)?;
    check_shots(shots)?;
    let (rounds, ceil_inv) = rqae_schedule(eps)?;
    let theta = a.sqrt().asin();

    let mut counts: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut record = |mult: u64, one: bool| {
        let e = counts.entry(mult).or_insert((0, 0));
        e.0 += 1;
        e.1 += one as u64;
    };

    for _ in 0..shots {
        record(1, bernoulli(a, rng));
    }
    for i in 1..rounds {
        let (lo, hi) = rqae_range(i, rounds, ceil_inv);
        for _ in 0..shots {
            let m = rng.gen_range(lo..=hi);
            let p = (m as f64 * theta).sin().powi(2);
            record(m, bernoulli(p, rng));
        }
    }

    let rounds = counts
        .into_iter()
        .map(|(mult, (shots, ones))| Round { mult, shots, ones })
        .collect();
    QaeOutcome::from_rounds(rounds)
}

/// `⌈v⌉`, treating values within 1e-9 (relative) of an integer as that
/// integer so that `ε^(-2β)` lands on `N` when `β` is derived from `N`.
fn ceil_tolerant(v: f64) -> u64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) {
        r as u64
    } else {
        v.ceil() as u64
    }
}

fn floor_tolerant(v: f64) -> u64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) {
        r as u64
    } else {
        v.floor() as u64
    }
}

/// Multipliers `2⌊k^((1-β)/2β)⌋ + 1` for `k = 1..=K` of the low-depth schedule.
pub fn lqae_schedule(eps: f64, beta: f64) -> Result<Vec<u64>> {
    check_eps(eps)?;
    check_beta(beta)?;
    let k_total = ceil_tolerant(eps.powf(-2.0 * beta).max((1.0 / eps).ln())).max(1);
    let exponent = (1.0 - beta) / (2.0 * beta);
    Ok((1..=k_total)
        .map(|k| 2 * floor_tolerant((k as f64).powf(exponent)) + 1)
        .collect())
}

/// Low-depth amplitude estimation of `a`.
pub fn lqae_simulate<R: Rng + ?Sized>(
    a: f64,
    eps: f64,
    beta: f64,
    shots: u64,
    rng: &mut R,
) -> Result<QaeOutcome> {
    check_amplitude(a)?;
    check_shots(shots)?;
    let schedule = lqae_schedule(eps, beta)?;
    let theta = a.sqrt().asin();
    let rounds = schedule
        .into_iter()
        .map(|mult| {
            let p = (mult as f64 * theta).sin().powi(2);
            let ones = (0..shots).filter(|_| bernoulli(p, rng)).count() as u64;
            Round { mult, shots, ones }
        })
        .collect();
    QaeOutcome::from_rounds(rounds)
}

/// `β = ln √N / ln(1/ε)`; errors when this leaves `(0, 1]`.
pub fn choose_beta(n: u64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let beta = (n as f64).sqrt().ln() / (1.0 / eps).ln();
    if beta > 1.0 {
        return Err(OsdeError::domain(format!(
            "beta would exceed 1: eps = {eps} must not exceed 1/sqrt(N) = {}",
            1.0 / (n as f64).sqrt()
        )));
    }
    if !(beta > 0.0) {
        return Err(OsdeError::domain(format!(
            "beta must be positive; N = {n} is too small"
        )));
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy)]
struct Term {
    mult: f64,
    ones: f64,
    zeros: f64,
}

fn log_likelihood(terms: &[Term], theta: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let (s, c) = (t.mult * theta).sin_cos();
            let mut ll = 0.0;
            if t.ones > 0.0 {
                ll += t.ones * (s * s).max(PROB_FLOOR).ln();
            }
            if t.zeros > 0.0 {
                ll += t.zeros * (c * c).max(PROB_FLOOR).ln();
            }
            ll
        })
        .sum()
}

/// Index of the largest log-likelihood on the uniform grid of `n` points
/// over `[0, π/2]`; first index wins ties.
///
/// Sines and cosines advance by rotation and are resynchronized every 256
/// points. Single-shot terms, the bulk of a random-depth schedule, are
/// multiplied together and logged in batches.
fn grid_argmax(terms: &[Term], n: usize) -> usize {
    const RESYNC: usize = 256;
    const SMALL: f64 = 1e-150;
    let step = FRAC_PI_2 / (n - 1) as f64;

    // single-shot terms first, then the rest
    let mut order: Vec<&Term> = terms.iter().filter(|t| t.ones + t.zeros == 1.0).collect();
    let singles = order.len();
    order.extend(terms.iter().filter(|t| t.ones + t.zeros != 1.0));
    let mult: Vec<f64> = order.iter().map(|t| t.mult).collect();
    let is_one: Vec<bool> = order.iter().map(|t| t.ones > 0.0).collect();
    let (sr, cr): (Vec<f64>, Vec<f64>) = mult.iter().map(|m| (m * step).sin_cos()).unzip();
    let mut sv = vec![0.0; mult.len()];
    let mut cv = vec![1.0; mult.len()];

    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..n {
        if j % RESYNC == 0 {
            let theta = j as f64 * step;
            for k in 0..mult.len() {
                (sv[k], cv[k]) = (mult[k] * theta).sin_cos();
            }
        }
        let mut acc = 0.0;
        let mut prod = 1.0;
        for k in 0..singles {
            let v = if is_one[k] {
                sv[k] * sv[k]
            } else {
                cv[k] * cv[k]
            };
            if v < SMALL {
                acc += v.max(PROB_FLOOR).ln();
            } else {
                prod *= v;
                if prod < SMALL {
                    acc += prod.ln();
                    prod = 1.0;
                }
            }
        }
        for (k, t) in order.iter().enumerate().skip(singles) {
            if t.ones > 0.0 {
                acc += t.ones * (sv[k] * sv[k]).max(PROB_FLOOR).ln();
            }
            if t.zeros > 0.0 {
                acc += t.zeros * (cv[k] * cv[k]).max(PROB_FLOOR).ln();
            }
        }
        let ll = acc + prod.ln();
        if ll > best.1 {
            best = (j, ll);
        }
        for k in 0..mult.len() {
            let (s, c) = (sv[k], cv[k]);
            sv[k] = s * cr[k] + c * sr[k];
            cv[k] = c * cr[k] - s * sr[k];
        }
    }
    best.0
}

/// `dℓ/dθ`, with the same flooring as [`log_likelihood`] (floored factors
/// contribute nothing).
fn score(terms: &[Term], theta: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let (s, c) = (t.mult * theta).sin_cos();
            let mut d = 0.0;
            if t.ones > 0.0 && s * s > PROB_FLOOR {
                d += 2.0 * t.mult * t.ones * c / s;
            }
            if t.zeros > 0.0 && c * c > PROB_FLOOR {
                d -= 2.0 * t.mult * t.zeros * s / c;
            }
            d
        })
        .sum()
}

/// Bisection on the score inside `[θ − w, θ + w] ∩ [lo, hi]`. Comparing
/// likelihood values stalls near `√ε_mach` in `θ`; the score's sign change
/// pins the maximum to rounding level. `None` when there is no sign change.
fn polish(terms: &[Term], theta: f64, lo: f64, hi: f64) -> Option<f64> {
    let w = 1e-6;
    let (mut a, mut b) = ((theta - w).max(lo), (theta + w).min(hi));
    if !(score(terms, a) > 0.0 && score(terms, b) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if score(terms, mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// Maximizes `f` on `[lo, hi]` by golden-section search.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Amplitude maximizing `∏ p_k^{ones_k} (1 − p_k)^{shots_k − ones_k}`,
/// `p_k = sin²(mult_k · arcsin √a)`.
///
/// A uniform grid over `θ ∈ [0, π/2]` (at least 10⁴ points, and 8 per unit
/// of the largest multiplier) brackets the global maximum, which
/// golden-section search then refines to 1e-12 in `θ`. A final bisection on
/// the score removes the flat-top error of comparing likelihood values.
pub fn mle_readout(rounds: &[Round]) -> Result<f64> {
    if rounds.iter().all(|r| r.shots == 0) {
        return Err(OsdeError::domain("likelihood needs at least one shot"));
    }
    if let Some(r) = rounds.iter().find(|r| r.ones > r.shots || r.mult == 0) {
        return Err(OsdeError::domain(format!("malformed round {r:?}")));
    }
    let terms: Vec<Term> = rounds
        .iter()
        .filter(|r| r.shots > 0)
        .map(|r| Term {
            mult: r.mult as f64,
            ones: r.ones as f64,
            zeros: (r.shots - r.ones) as f64,
        })
        .collect();
    let max_mult = rounds.iter().map(|r| r.mult).max().unwrap_or(1) as usize;
    let n = MIN_GRID_POINTS.max(GRID_POINTS_PER_MULT * max_mult);
    let step = FRAC_PI_2 / (n - 1) as f64;

    let j = grid_argmax(&terms, n);
    let theta_at = |i: usize| {
        if i == n - 1 {
            FRAC_PI_2
        } else {
            i as f64 * step
        }
    };
    let lo = theta_at(j.saturating_sub(1));
    let hi = theta_at((j + 1).min(n - 1));
    let ll = |t: f64| log_likelihood(&terms, t);
    let golden = golden_max(ll, lo, hi, THETA_TOL);
    let refined = polish(&terms, golden, lo, hi).unwrap_or(golden);

    // Grid point and bracket ends first, so exact endpoints win ties.
    let theta = [theta_at(j), lo, hi, refined]
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, t| {
            let v = ll(t);
            if v > best.1 {
                (t, v)
            } else {
                best
            }
        })
        .0;
    Ok(theta.sin().powi(2).clamp(0.0, 1.0))
}
