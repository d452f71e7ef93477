//! Two-sided reflected Brownian motion `dX = μ dt + σ dW` on `[lower, upper]`.
//!
//! The transition density is the image-sum solution of the Fokker–Planck
//! equation with reflecting (zero-flux) boundaries. Two of its sums run over
//! all integers and two over the non-negative integers; all four are
//! truncated at `n_c`.

use std::f64::consts::{PI, SQRT_2};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OsdeError, Result};
use crate::quad;

/// Substeps per call of [`RbmKernel::sample_step`].
pub const SAMPLE_SUBSTEPS: usize = 32;

/// Slack on the boundary checks of the transition density.
const BOUNDARY_SLACK: f64 = 1e-12;

static FLOOR_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a truncated density came out negative and was floored
/// at zero, process-wide.
pub fn floor_event_count() -> u64 {
    FLOOR_EVENTS.load(Ordering::Relaxed)
}

/// Standard normal CDF `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `ln(1 − Φ(z)) = ln Φ(−z)`, computed without cancellation.
fn ln_normal_sf(z: f64) -> f64 {
    (0.5 * libm::erfc(z / SQRT_2)).ln()
}

/// A one-dimensional transition density `p(x', s' | x, s)` on `[-1, 1]`.
pub trait TransitionKernel: Sync {
    fn density(&self, x: f64, s: f64, x_next: f64, s_next: f64) -> Result<f64>;

    /// Whether the density depends on `(s, s')` only through `s' − s`.
    fn is_time_homogeneous(&self) -> bool {
        false
    }
}

/// The memoryless kernel `p ≡ 1/2` on `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UniformKernel;

impl TransitionKernel for UniformKernel {
    fn density(&self, _x: f64, s: f64, _x_next: f64, s_next: f64) -> Result<f64> {
        if !(s_next > s) {
            return Err(OsdeError::domain(format!(
                "need s' > s, got s = {s}, s' = {s_next}"
            )));
        }
        Ok(0.5)
    }

    fn is_time_homogeneous(&self) -> bool {
        true
    }
}

/// Parameters of a reflected Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmKernel {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "default_lower")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    #[serde(default = "default_truncation")]
    pub n_c: u32,
}

fn default_lower() -> f64 {
    -1.0
}

fn default_upper() -> f64 {
    1.0
}

fn default_truncation() -> u32 {
    5
}

impl RbmKernel {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64, n_c: u32) -> Result<Self> {
        let k = RbmKernel {
            mu,
            sigma,
            lower,
            upper,
            n_c,
        };
        k.validate()?;
        Ok(k)
    }

    /// Drift `μ`, volatility `σ` on `[-1, 1]` with `n_c = 5`.
    pub fn on_unit_interval(mu: f64, sigma: f64) -> Self {
        RbmKernel {
            mu,
            sigma,
            lower: -1.0,
            upper: 1.0,
            n_c: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(OsdeError::domain(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.lower < self.upper) {
            return Err(OsdeError::domain(format!(
                "need lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if !self.mu.is_finite() {
            return Err(OsdeError::domain("drift must be finite"));
        }
        Ok(())
    }

    /// The truncated image sum, before flooring at zero.
    pub fn raw_density(&self, x: f64, x_next: f64, dt: f64) -> f64 {
        let (mu, sigma) = (self.mu, self.sigma);
        let (lo, up) = (self.lower, self.upper);
        let var2 = 2.0 * sigma * sigma * dt;
        let sq = sigma * dt.sqrt();
        let norm = 1.0 / (sigma * (2.0 * PI * dt).sqrt());
        let k = 2.0 * mu / (sigma * sigma);
        let nc = self.n_c as i64;

        let mut images = 0.0;
        for n in -nc..=nc {
            let nf = n as f64;
            let shift = x_next + 2.0 * nf * (up - lo) - x - mu * dt;
            images += (k * nf * (lo - up) - shift * shift / var2).exp();

            let mirror = 2.0 * nf * up - 2.0 * (nf + 1.0) * lo + x + x_next - mu * dt;
            images += (-k * (nf * up - (nf + 1.0) * lo + x) - mirror * mirror / var2).exp();
        }
        let mut total = norm * images;

        for n in 0..=nc {
            let nf = n as f64;
            let z_up = (mu * dt + 2.0 * nf * up - 2.0 * (nf + 1.0) * lo + x + x_next) / sq;
            let a_up = k * (nf * up - (nf + 1.0) * lo + x_next);
            total -= k * (a_up + ln_normal_sf(z_up)).exp();

            let z_lo = (mu * dt - 2.0 * (nf + 1.0) * up + 2.0 * nf * lo + x + x_next) / sq;
            let a_lo = k * (nf * lo - (nf + 1.0) * up + x_next);
            total += k * (a_lo + ln_normal_sf(-z_lo)).exp();
        }
        total
    }

    /// `p(x', s' | x, s)`, floored at zero.
    pub fn transition_density(&self, x: f64, s: f64, x_next: f64, s_next: f64) -> Result<f64> {
        if !(s_next > s) {
            return Err(OsdeError::domain(format!(
                "need s' > s, got s = {s}, s' = {s_next}"
            )));
        }
        for (name, v) in [("x", x), ("x'", x_next)] {
            if v < self.lower - BOUNDARY_SLACK || v > self.upper + BOUNDARY_SLACK {
                return Err(OsdeError::domain(format!(
                    "{name} = {v} outside [{}, {}]",
                    self.lower, self.upper
                )));
            }
        }
        Ok(self.floored_density(x, x_next, s_next - s))
    }

    fn floored_density(&self, x: f64, x_next: f64, dt: f64) -> f64 {
        let raw = self.raw_density(x, x_next, dt);
        if raw < 0.0 {
            FLOOR_EVENTS.fetch_add(1, Ordering::Relaxed);
            return 0.0;
        }
        raw
    }

    /// `Pr(X(t_end) > x0 | X(t0) = x0)`.
    pub fn exceed_probability(&self, x0: f64, t0: f64, t_end: f64, tol: f64) -> Result<f64> {
        // validates the time order and x0
        self.transition_density(x0, t0, x0, t_end)?;
        let dt = t_end - t0;
        let r = quad::integrate_1d(|x| self.floored_density(x0, x, dt), x0, self.upper, tol)?;
        Ok(r.value)
    }

    /// One approximate draw from `p(·, dt | x, 0)`: Euler–Maruyama over
    /// [`SAMPLE_SUBSTEPS`] substeps, mirroring at the boundaries after each.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: f64, dt: f64, rng: &mut R) -> f64 {
        let h = dt / SAMPLE_SUBSTEPS as f64;
        let scale = self.sigma * h.sqrt();
        let mut y = x;
        for _ in 0..SAMPLE_SUBSTEPS {
            let z: f64 = rng.sample(StandardNormal);
            y += self.mu * h + scale * z;
            y = self.reflect(y);
        }
        y
    }

    fn reflect(&self, mut y: f64) -> f64 {
        loop {
            if y > self.upper {
                y = 2.0 * self.upper - y;
            } else if y < self.lower {
                y = 2.0 * self.lower - y;
            } else {
                return y;
            }
        }
    }
}

impl TransitionKernel for RbmKernel {
    fn density(&self, x: f64, s: f64, x_next: f64, s_next: f64) -> Result<f64> {
        self.transition_density(x, s, x_next, s_next)
    }

    fn is_time_homogeneous(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo() -> RbmKernel {
        RbmKernel::on_unit_interval(0.5, 1.0)
    }

    /// Stationary density of the reflected process, from the zero-flux
    /// condition `μ π − (σ²/2) π' = 0`.
    fn stationary(k: &RbmKernel, x: f64) -> f64 {
        let c = 2.0 * k.mu / (k.sigma * k.sigma);
        c * (c * x).exp() / ((c * k.upper).exp() - (c * k.lower).exp())
    }

    /// Φ via the Taylor series of erf, accurate for moderate |z|.
    fn cdf_series(z: f64) -> f64 {
        let y = z / SQRT_2;
        let mut term = y;
        let mut sum = y;
        for n in 1..200 {
            term *= -y * y / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        0.5 + sum / PI.sqrt()
    }

    #[test]
    fn cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-13);
        for z in [-3.0, -1.3, -0.2, 0.4, 1.0, 2.5] {
            assert_abs_diff_eq!(normal_cdf(z), cdf_series(z), epsilon = 1e-12);
        }
    }

    #[test]
    fn cdf_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z: f64 = rng.gen_range(-8.0..8.0);
            assert_abs_diff_eq!(normal_cdf(-z), 1.0 - normal_cdf(z), epsilon = 1e-15);
        }
    }

    #[test]
    fn reflection_symmetry_without_drift() {
        let k = RbmKernel::on_unit_interval(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let y: f64 = rng.gen_range(-1.0..=1.0);
            let a = k.transition_density(x, 0.0, y, 0.2).unwrap();
            let b = k.transition_density(-x, 0.0, -y, 0.2).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn short_horizon_matches_free_gaussian() {
        let k = demo();
        let dt = 0.01;
        let free = {
            let m = k.mu * dt;
            let v = k.sigma * k.sigma * dt;
            (-(0.0 - m) * (0.0 - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
        };
        assert_abs_diff_eq!(
            k.transition_density(0.0, 0.0, 0.0, dt).unwrap(),
            free,
            epsilon = 1e-6
        );
    }

    #[test]
    fn long_horizon_matches_stationary() {
        let k = demo();
        for x in [-0.8, 0.0, 0.5] {
            for i in 0..=40 {
                let y = -1.0 + i as f64 * 0.05;
                let p = k.transition_density(x, 0.0, y, 10.0).unwrap();
                assert_abs_diff_eq!(p, stationary(&k, y), epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn normalization() {
        let k = demo();
        for dt in [0.05, 0.2, 0.6] {
            for x in [-1.0, -0.3, 0.0, 0.9] {
                let m = quad::integrate_1d(
                    |y| k.transition_density(x, 0.0, y, dt).unwrap(),
                    -1.0,
                    1.0,
                    1e-11,
                )
                .unwrap();
                assert_abs_diff_eq!(m.value, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_times_and_points() {
        let k = demo();
        assert!(k.transition_density(0.0, 0.3, 0.0, 0.3).is_err());
        assert!(k.transition_density(0.0, 0.3, 0.0, 0.1).is_err());
        assert!(k.transition_density(1.5, 0.0, 0.0, 0.1).is_err());
        assert!(RbmKernel::new(0.0, 0.0, -1.0, 1.0, 5).is_err());
        assert!(RbmKernel::new(0.0, 1.0, 1.0, -1.0, 5).is_err());
    }

    #[test]
    fn exceed_probability_symmetric_case() {
        let k = RbmKernel::on_unit_interval(0.0, 1.0);
        for t in [0.1, 0.6, 3.0] {
            assert_abs_diff_eq!(
                k.exceed_probability(0.0, 0.0, t, 1e-12).unwrap(),
                0.5,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn exceed_probability_demo_value() {
        // Frozen from an independent high-resolution quadrature of the image
        // sum (tolerance 1e-13 absolute).
        let q = demo().exceed_probability(0.0, 0.0, 0.6, 1e-10).unwrap();
        assert_abs_diff_eq!(q, 0.649_604_767_419_927_7, epsilon = 1e-9);
    }

    #[test]
    fn truncation_converges() {
        let k5 = demo();
        let k8 = RbmKernel { n_c: 8, ..k5 };
        for dt in [0.04, 0.2, 0.6] {
            for i in 0..=20 {
                let x = -1.0 + 0.1 * i as f64;
                for j in 0..=20 {
                    let y = -1.0 + 0.1 * j as f64;
                    let a = k5.transition_density(x, 0.0, y, dt).unwrap();
                    let b = k8.transition_density(x, 0.0, y, dt).unwrap();
                    assert!((a - b).abs() < 1e-8, "dt={dt} x={x} y={y}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn non_negative_on_grid() {
        let k = demo();
        for dt in [0.0125, 0.05, 0.2, 0.6] {
            for i in 0..100 {
                for j in 0..100 {
                    let x = -1.0 + 2.0 * i as f64 / 99.0;
                    let y = -1.0 + 2.0 * j as f64 / 99.0;
                    assert!(k.raw_density(x, y, dt) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let k = demo();
        let (t1, t2) = (0.2, 0.45);
        for &z in &[-0.7, 0.0, 0.4, 0.95] {
            let composed = quad::integrate_1d(
                |y| {
                    k.transition_density(0.0, 0.0, y, t1).unwrap()
                        * k.transition_density(y, t1, z, t2).unwrap()
                },
                -1.0,
                1.0,
                1e-11,
            )
            .unwrap();
            let direct = k.transition_density(0.0, 0.0, z, t2).unwrap();
            assert_abs_diff_eq!(composed.value, direct, epsilon = 1e-4);
        }
    }

    #[test]
    fn samples_stay_in_domain_and_match_mean() {
        let k = demo();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let dt = 0.2;
        let draws: Vec<f64> = (0..n).map(|_| k.sample_step(0.0, dt, &mut rng)).collect();
        assert!(draws.iter().all(|y| (-1.0..=1.0).contains(y)));

        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let oracle = quad::integrate_1d(
            |y| y * k.transition_density(0.0, 0.0, y, dt).unwrap(),
            -1.0,
            1.0,
            1e-12,
        )
        .unwrap()
        .value;
        assert!(
            (mean - oracle).abs() <= 3.0 * se,
            "mean {mean} vs {oracle} (se {se})"
        );
    }

    #[test]
    fn zero_drift_samples_are_symmetric() {
        let k = RbmKernel::on_unit_interval(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let mut a: Vec<f64> = (0..n).map(|_| k.sample_step(0.0, 0.2, &mut rng)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| -k.sample_step(0.0, 0.2, &mut rng)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample Kolmogorov–Smirnov statistic
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        // critical value at p = 0.01: 1.628 * sqrt(2/n)
        assert!(d < 1.628 * (2.0 / n as f64).sqrt(), "KS statistic {d}");
    }
}
