//! Truncated Legendre series used as density estimates on `[-1, 1]^d`.

use serde::{Deserialize, Serialize};

use crate::error::{OsdeError, Result};
use crate::legendre::{self, MultiIndex, MultiIndexSet};
use crate::quad;

/// `Σ_l a_l P_l` over the full lattice `{0..=L}^d`, coefficients stored flat
/// in lexicographic index order.
///
/// A series flagged as a density has `a_0 = 2^-d`, hence unit total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesRepr", into = "SeriesRepr")]
pub struct LegendreSeries {
    d: usize,
    degree: usize,
    coeffs: Vec<f64>,
    is_density: bool,
    time_index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesRepr {
    d: usize,
    #[serde(rename = "L")]
    degree: usize,
    coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    is_density: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_index: Option<usize>,
}

impl TryFrom<SeriesRepr> for LegendreSeries {
    type Error = OsdeError;

    fn try_from(r: SeriesRepr) -> Result<Self> {
        let mut s = LegendreSeries::new(r.d, r.degree, r.coeffs)?;
        if r.is_density {
            let expected = density_mean_coeff(r.d);
            if s.coeffs[0] != expected {
                return Err(OsdeError::domain(format!(
                    "density series must have a_0 = {expected}, got {}",
                    s.coeffs[0]
                )));
            }
            s.is_density = true;
        }
        s.time_index = r.time_index;
        Ok(s)
    }
}

impl From<LegendreSeries> for SeriesRepr {
    fn from(s: LegendreSeries) -> Self {
        SeriesRepr {
            d: s.d,
            degree: s.degree,
            coeffs: s.coeffs,
            is_density: s.is_density,
            time_index: s.time_index,
        }
    }
}

/// `2^-d`, the zeroth coefficient of every probability density on `Ω_d`.
pub fn density_mean_coeff(d: usize) -> f64 {
    0.5f64.powi(d as i32)
}

impl LegendreSeries {
    pub fn new(d: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(OsdeError::domain("series dimension must be at least 1"));
        }
        let expected = (degree + 1).pow(d as u32);
        if coeffs.len() != expected {
            return Err(OsdeError::domain(format!(
                "series with d = {d}, L = {degree} needs {expected} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(LegendreSeries {
            d,
            degree,
            coeffs,
            is_density: false,
            time_index: None,
        })
    }

    /// Builds a density series; `coeffs[0]` is overwritten with `2^-d`.
    pub fn density(d: usize, degree: usize, mut coeffs: Vec<f64>) -> Result<Self> {
        if let Some(first) = coeffs.first_mut() {
            *first = density_mean_coeff(d);
        }
        let mut s = Self::new(d, degree, coeffs)?;
        s.is_density = true;
        Ok(s)
    }

    /// The uniform density `2^-d` on `Ω_d`.
    pub fn uniform(d: usize, degree: usize) -> Self {
        let mut coeffs = vec![0.0; (degree + 1).pow(d as u32)];
        coeffs[0] = density_mean_coeff(d);
        LegendreSeries {
            d,
            degree,
            coeffs,
            is_density: true,
            time_index: None,
        }
    }

    pub fn with_time_index(mut self, i: usize) -> Self {
        self.time_index = Some(i);
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_density(&self) -> bool {
        self.is_density
    }

    pub fn time_index(&self) -> Option<usize> {
        self.time_index
    }

    pub fn coeff(&self, l: &MultiIndex) -> Option<f64> {
        if l.dim() != self.d || l.max_degree() > self.degree {
            return None;
        }
        Some(self.coeffs[legendre::flat_position(l, self.degree)])
    }

    pub fn index_set(&self) -> MultiIndexSet {
        MultiIndexSet::full(self.d, self.degree)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(OsdeError::domain(format!(
                "point has dimension {} but series has dimension {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// `Σ_l a_l P_l(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let tables: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| {
                let mut t = Vec::with_capacity(self.degree + 1);
                legendre::eval_all(self.degree, xi, &mut t);
                t
            })
            .collect();
        let refs: Vec<&[f64]> = tables.iter().map(Vec::as_slice).collect();
        Ok(self.contract(&refs))
    }

    /// Sums `a_l ∏ table[i][l_i]` over the lattice.
    fn contract(&self, tables: &[&[f64]]) -> f64 {
        let side = self.degree + 1;
        if self.d == 1 {
            return self.coeffs.iter().zip(tables[0]).map(|(a, p)| a * p).sum();
        }
        let mut total = 0.0;
        for (flat, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let mut rest = flat;
            let mut basis = 1.0;
            for axis in (0..self.d).rev() {
                basis *= tables[axis][rest % side];
                rest /= side;
            }
            total += a * basis;
        }
        total
    }

    /// `∫_{Ω_d} f̂ = 2^d a_0`; every other basis function integrates to zero.
    pub fn total_mass(&self) -> f64 {
        2f64.powi(self.d as i32) * self.coeffs[0]
    }

    /// Minimum of the series over the uniform tensor grid with
    /// `points_per_axis` points per axis, endpoints included.
    pub fn min_on_grid(&self, points_per_axis: usize) -> Result<(f64, Vec<f64>)> {
        if points_per_axis < 2 {
            return Err(OsdeError::domain(format!(
                "grid needs at least 2 points per axis, got {points_per_axis}"
            )));
        }
        let last = (points_per_axis - 1) as f64;
        let axis: Vec<f64> = (0..points_per_axis)
            .map(|k| 2.0 * k as f64 / last - 1.0)
            .collect();
        let tables: Vec<Vec<f64>> = axis
            .iter()
            .map(|&x| {
                let mut t = Vec::new();
                legendre::eval_all(self.degree, x, &mut t);
                t
            })
            .collect();

        let mut best = (f64::INFINITY, vec![0.0; self.d]);
        let mut counter = vec![0usize; self.d];
        for _ in 0..points_per_axis.pow(self.d as u32) {
            let per_axis: Vec<&[f64]> = counter.iter().map(|&c| tables[c].as_slice()).collect();
            let v = self.contract(&per_axis);
            if v < best.0 {
                best = (v, counter.iter().map(|&c| axis[c]).collect());
            }
            for c in counter.iter_mut().rev() {
                *c += 1;
                if *c < points_per_axis {
                    break;
                }
                *c = 0;
            }
        }
        Ok(best)
    }

    /// `∫` of the series over the box `[lo, hi]`, using exact antiderivatives
    /// of each `P_l`.
    pub fn interval_probability(&self, lo: &[f64], hi: &[f64]) -> Result<f64> {
        self.check_point(lo)?;
        self.check_point(hi)?;
        for (&a, &b) in lo.iter().zip(hi) {
            if !(a <= b) {
                return Err(OsdeError::domain(format!(
                    "box bounds out of order: {a} > {b}"
                )));
            }
            if !legendre::in_domain(a) || !legendre::in_domain(b) {
                return Err(OsdeError::domain(format!(
                    "box [{a}, {b}] leaves the domain [-1, 1]"
                )));
            }
        }
        let tables: Vec<Vec<f64>> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                (0..=self.degree)
                    .map(|l| legendre::antiderivative(l, b) - legendre::antiderivative(l, a))
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = tables.iter().map(Vec::as_slice).collect();
        Ok(self.contract(&refs))
    }

    /// `∫ f̂ g` over `Ω_d` by adaptive quadrature (`d <= 2`).
    pub fn expectation<G: Fn(&[f64]) -> f64>(&self, g: G, quad_tol: f64) -> Result<f64> {
        self.expectation_with(g, quad_tol, false)
    }

    /// As [`expectation`](Self::expectation); with `clamp_to_zero` the
    /// negative parts of the series are replaced by zero first.
    pub fn expectation_with<G: Fn(&[f64]) -> f64>(
        &self,
        g: G,
        quad_tol: f64,
        clamp_to_zero: bool,
    ) -> Result<f64> {
        let density = |x: &[f64]| {
            let v = self.eval(x).expect("dimension checked");
            if clamp_to_zero {
                v.max(0.0)
            } else {
                v
            }
        };
        match self.d {
            1 => quad::integrate_1d(|x| density(&[x]) * g(&[x]), -1.0, 1.0, quad_tol)
                .map(|r| r.value),
            2 => quad::integrate_2d(
                |x, y| density(&[x, y]) * g(&[x, y]),
                (-1.0, 1.0),
                (-1.0, 1.0),
                quad_tol,
            )
            .map(|r| r.value),
            d => Err(OsdeError::domain(format!(
                "expectation supports d <= 2, got d = {d}"
            ))),
        }
    }

    /// `‖self − other‖²_{L2(Ω_d)}` from coefficients, by orthogonality.
    pub fn l2_distance_sq(&self, other: &LegendreSeries) -> Result<f64> {
        if self.d != other.d || self.degree != other.degree {
            return Err(OsdeError::domain("series shapes differ"));
        }
        Ok(self
            .index_set()
            .iter()
            .zip(self.coeffs.iter().zip(&other.coeffs))
            .map(|(l, (a, b))| (a - b).powi(2) / legendre::norm_const(l))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_1d(coeffs: &[f64]) -> LegendreSeries {
        LegendreSeries::new(1, coeffs.len() - 1, coeffs.to_vec()).unwrap()
    }

    /// Monomial coefficients of P_0..P_3.
    const MONOMIALS: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [-0.5, 0.0, 1.5, 0.0],
        [0.0, -1.5, 0.0, 2.5],
    ];

    #[test]
    fn eval_uniform() {
        let s = LegendreSeries::uniform(1, 4);
        assert_eq!(s.eval(&[0.3]).unwrap(), 0.5);
    }

    #[test]
    fn eval_at_right_endpoint() {
        assert_abs_diff_eq!(series_1d(&[0.5, 0.25]).eval(&[1.0]).unwrap(), 0.75);
    }

    #[test]
    fn eval_matches_monomial_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: f64 = rng.gen_range(-1.0..=1.0);
            let mut poly = [0.0; 4];
            for (l, al) in a.iter().enumerate() {
                for k in 0..4 {
                    poly[k] += al * MONOMIALS[l][k];
                }
            }
            let direct: f64 = poly
                .iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32))
                .sum();
            assert_abs_diff_eq!(series_1d(&a).eval(&[x]).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_dimension_mismatch() {
        assert!(LegendreSeries::uniform(2, 2).eval(&[0.1]).is_err());
    }

    #[test]
    fn masses() {
        assert_eq!(
            LegendreSeries::density(1, 3, vec![9.0, 0.1, 0.2, 0.3])
                .unwrap()
                .total_mass(),
            1.0
        );
        assert_abs_diff_eq!(series_1d(&[0.3, 1.0]).total_mass(), 0.6);
        let s2 = LegendreSeries::density(2, 2, vec![0.0, 0.1, -0.2, 0.05, 0.3, 0.0, 0.1, 0.0, 0.2])
            .unwrap();
        assert_eq!(s2.coeffs()[0], 0.25);
        assert_eq!(s2.total_mass(), 1.0);
    }

    #[test]
    fn grid_minimum() {
        let (v, _) = LegendreSeries::uniform(1, 2).min_on_grid(11).unwrap();
        assert_eq!(v, 0.5);
        let (v, x) = series_1d(&[0.5, 0.75]).min_on_grid(101).unwrap();
        assert_abs_diff_eq!(v, -0.25, epsilon = 1e-15);
        assert_eq!(x, vec![-1.0]);
        assert!(series_1d(&[0.5]).min_on_grid(1).is_err());
    }

    #[test]
    fn grid_minimum_2d() {
        // 0.25 + 0.1 P_1(x) P_1(y): minimum -> 0.15 at opposite corners
        let mut c = vec![0.0; 4];
        c[0] = 0.25;
        c[3] = 0.1;
        let s = LegendreSeries::new(2, 1, c).unwrap();
        let (v, x) = s.min_on_grid(5).unwrap();
        assert_abs_diff_eq!(v, 0.15, epsilon = 1e-15);
        assert_eq!(x, vec![-1.0, 1.0]);
    }

    #[test]
    fn interval_probabilities() {
        let u = LegendreSeries::uniform(1, 3);
        assert_abs_diff_eq!(
            u.interval_probability(&[0.0], &[1.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let s = LegendreSeries::density(1, 3, vec![0.0, 0.2, -0.1, 0.05]).unwrap();
        assert_abs_diff_eq!(
            s.interval_probability(&[-1.0], &[1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        let s = series_1d(&[0.5, 0.0, 0.5]);
        let direct = s.interval_probability(&[0.0], &[1.0]).unwrap();
        let oracle = quad::integrate_1d(|x| s.eval(&[x]).unwrap(), 0.0, 1.0, 1e-13).unwrap();
        assert_abs_diff_eq!(direct, oracle.value, epsilon = 1e-10);
        // ∫_0^1 P_2 = 0, so the value is 0.5
        assert_abs_diff_eq!(direct, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn interval_probability_2d_box() {
        let s = LegendreSeries::density(
            2,
            2,
            vec![0.0, 0.1, -0.05, 0.08, 0.02, 0.0, 0.03, 0.0, 0.01],
        )
        .unwrap();
        let direct = s.interval_probability(&[-0.3, 0.1], &[0.6, 0.9]).unwrap();
        let oracle = quad::integrate_2d(
            |x, y| s.eval(&[x, y]).unwrap(),
            (-0.3, 0.6),
            (0.1, 0.9),
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(direct, oracle.value, epsilon = 1e-10);
    }

    #[test]
    fn interval_probability_rejects_bad_boxes() {
        let u = LegendreSeries::uniform(1, 2);
        assert!(u.interval_probability(&[0.5], &[0.0]).is_err());
        assert!(u.interval_probability(&[0.0], &[1.5]).is_err());
    }

    #[test]
    fn expectations() {
        let u = LegendreSeries::uniform(1, 3);
        assert_abs_diff_eq!(u.expectation(|_| 1.0, 1e-12).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            u.expectation(|x| x[0], 1e-12).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn expectation_matches_riemann_sum() {
        let s = LegendreSeries::density(1, 4, vec![0.0, 0.3, 0.1, -0.05, 0.02]).unwrap();
        let payoff = |x: f64| 1.0 / (1.0 + (-20.0 * (x - 0.1)).exp());
        let q = s.expectation(|x| payoff(x[0]), 1e-12).unwrap();
        let n = 100_000;
        let h = 2.0 / n as f64;
        let riemann: f64 = (0..n)
            .map(|k| {
                let x = -1.0 + (k as f64 + 0.5) * h;
                s.eval(&[x]).unwrap() * payoff(x) * h
            })
            .sum();
        assert_abs_diff_eq!(q, riemann, epsilon = 1e-6);
    }

    #[test]
    fn clamped_expectation() {
        let s = series_1d(&[0.5, 0.75]);
        let raw = s.expectation(|_| 1.0, 1e-12).unwrap();
        let clamped = s.expectation_with(|_| 1.0, 1e-12, true).unwrap();
        assert_abs_diff_eq!(raw, 1.0, epsilon = 1e-12);
        // 0.5 + 0.75 x < 0 on [-1, -2/3); the clamped mass adds back that triangle
        assert_abs_diff_eq!(clamped, 1.0 + 0.5 * (1.0 / 3.0) * 0.25, epsilon = 1e-9);
    }

    #[test]
    fn perturbation_changes_l2_by_norm() {
        let base = LegendreSeries::density(1, 5, vec![0.0, 0.4, 0.1, 0.0, -0.1, 0.02]).unwrap();
        for l in 1..=5 {
            let delta = 0.037;
            let mut c = base.coeffs().to_vec();
            c[l] += delta;
            let moved = LegendreSeries::density(1, 5, c).unwrap();
            let q = quad::integrate_1d(
                |x| (moved.eval(&[x]).unwrap() - base.eval(&[x]).unwrap()).powi(2),
                -1.0,
                1.0,
                1e-13,
            )
            .unwrap();
            let c_l = l as f64 + 0.5;
            assert_abs_diff_eq!(q.value.sqrt(), delta / c_l.sqrt(), epsilon = 1e-8);
            assert_abs_diff_eq!(
                moved.l2_distance_sq(&base).unwrap(),
                q.value,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn json_shape() {
        let s = LegendreSeries::density(1, 2, vec![0.0, 0.1, 0.2])
            .unwrap()
            .with_time_index(3);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"d":1,"L":2,"coeffs":[0.5,0.1,0.2],"is_density":true,"time_index":3}"#
        );
        let back: LegendreSeries = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let plain = series_1d(&[0.3, 0.1]);
        assert_eq!(
            serde_json::to_string(&plain).unwrap(),
            r#"{"d":1,"L":1,"coeffs":[0.3,0.1]}"#
        );
    }

    #[test]
    fn json_validation() {
        assert!(serde_json::from_str::<LegendreSeries>(r#"{"d":1,"L":2,"coeffs":[0.5]}"#).is_err());
        assert!(serde_json::from_str::<LegendreSeries>(
            r#"{"d":1,"L":1,"coeffs":[0.4,0.1],"is_density":true}"#
        )
        .is_err());
        assert!(
            serde_json::from_str::<LegendreSeries>(r#"{"d":1,"L":0,"coeffs":[0.5],"x":1}"#)
                .is_err()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn full_box_equals_mass(d in 1usize..=2, degree in 0usize..=5,
                                    raw in proptest::collection::vec(-1.0f64..1.0, 36)) {
                let len = (degree + 1).pow(d as u32);
                let s = LegendreSeries::new(d, degree, raw[..len].to_vec()).unwrap();
                let lo = vec![-1.0; d];
                let hi = vec![1.0; d];
                let p = s.interval_probability(&lo, &hi).unwrap();
                prop_assert!((p - s.total_mass()).abs() < 1e-12);
            }
        }
    }
}
