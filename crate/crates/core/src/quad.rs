//! Adaptive Gauss–Kronrod integration in one and two dimensions.
//!
//! The 1D integrator is a global adaptive bisection scheme driven by the
//! 7-point Gauss / 15-point Kronrod embedded pair. After an initial cut into
//! equal pieces, the piece with the largest error estimate is split until
//! the summed estimate drops below the requested absolute tolerance. The 2D integrator applies the 1D one
//! iteratively (outer over `x`, inner over `y`).

use std::cell::{Cell, RefCell};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{OsdeError, Result};

/// Maximum bisection depth of any single subinterval.
pub const MAX_DEPTH: u32 = 30;

/// Equal pieces the interval is cut into before adaptive refinement, so
/// that a narrow feature cannot fall between the nodes of a single rule.
pub const INITIAL_SEGMENTS: usize = 8;

/// Hard cap on the number of live subintervals.
const MAX_INTERVALS: usize = 20_000;

// Kronrod abscissae on [0, 1); odd positions are the Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Outcome of a quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    depth: u32,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        // Largest error first; ties broken by position for determinism.
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

/// Single application of the 15-point Kronrod rule with error estimate.
/// Returns `(value, error, resabs)`.
fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let f_center = f(center);

    let mut res_gauss = f_center * WG[3];
    let mut res_kronrod = f_center * WGK[7];
    let mut res_abs = res_kronrod.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];

    for j in 0..3 {
        let k = 2 * j + 1;
        let dx = half * XGK[k];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[k] = f1;
        fv2[k] = f2;
        res_gauss += WG[j] * (f1 + f2);
        res_kronrod += WGK[k] * (f1 + f2);
        res_abs += WGK[k] * (f1.abs() + f2.abs());
    }
    for j in 0..4 {
        let k = 2 * j;
        let dx = half * XGK[k];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[k] = f1;
        fv2[k] = f2;
        res_kronrod += WGK[k] * (f1 + f2);
        res_abs += WGK[k] * (f1.abs() + f2.abs());
    }

    let mean = 0.5 * res_kronrod;
    let mut res_asc = WGK[7] * (f_center - mean).abs();
    for k in 0..7 {
        res_asc += WGK[k] * ((fv1[k] - mean).abs() + (fv2[k] - mean).abs());
    }

    let abs_half = half.abs();
    let value = res_kronrod * half;
    res_abs *= abs_half;
    res_asc *= abs_half;

    let mut err = ((res_kronrod - res_gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err, res_abs)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    if !(a <= b) {
        return Err(OsdeError::domain(format!(
            "integration bounds out of order: [{a}, {b}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(OsdeError::domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_error_estimate: 0.0,
            evaluations: 1,
        });
    }

    let mut evaluations = 0;
    let mut total_error = 0.0;
    let mut total_abs = 0.0;
    let mut heap = BinaryHeap::new();
    let width = (b - a) / INITIAL_SEGMENTS as f64;
    for k in 0..INITIAL_SEGMENTS {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == INITIAL_SEGMENTS {
            b
        } else {
            lo + width
        };
        let (value, error, res_abs) = gk15(&f, lo, hi);
        evaluations += 15;
        total_error += error;
        total_abs += res_abs;
        heap.push(Segment {
            lo,
            hi,
            value,
            error,
            depth: 0,
        });
    }

    // Roundoff floor: refinement below this cannot make progress.
    let floor = |abs: f64| 50.0 * f64::EPSILON * abs;

    // Written so that a NaN error keeps refining and then fails.
    while !(total_error <= tol.max(floor(total_abs))) {
        let worst = heap.pop().expect("heap holds at least one segment");
        if !worst.error.is_finite() || worst.depth >= MAX_DEPTH || heap.len() + 2 > MAX_INTERVALS {
            return Err(OsdeError::Quadrature {
                lo: worst.lo,
                hi: worst.hi,
                error: worst.error,
            });
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        let (v1, e1, a1) = gk15(&f, worst.lo, mid);
        let (v2, e2, a2) = gk15(&f, mid, worst.hi);
        evaluations += 30;

        total_error += e1 + e2 - worst.error;
        total_abs += a1 + a2;

        for (lo, hi, value, error) in [(worst.lo, mid, v1, e1), (mid, worst.hi, v2, e2)] {
            heap.push(Segment {
                lo,
                hi,
                value,
                error,
                depth: worst.depth + 1,
            });
        }
    }

    // Re-sum to shed the drift of the running totals.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Ok(QuadResult {
        value,
        abs_error_estimate: error,
        evaluations,
    })
}

/// Integrates `f(x, y)` over `[x_lo, x_hi] × [y_lo, y_hi]` by iterated 1D
/// quadrature; the inner integrals run at `tol / 10`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    (x_lo, x_hi): (f64, f64),
    (y_lo, y_hi): (f64, f64),
    tol: f64,
) -> Result<QuadResult> {
    if !(y_lo <= y_hi) {
        return Err(OsdeError::domain(format!(
            "inner bounds out of order: [{y_lo}, {y_hi}]"
        )));
    }
    let inner_tol = tol / 10.0;
    let failure: RefCell<Option<OsdeError>> = RefCell::new(None);
    let inner_evals = Cell::new(0usize);
    let inner_error = Cell::new(0.0f64);

    let outer = integrate_1d(
        |x| {
            if failure.borrow().is_some() {
                return 0.0;
            }
            match integrate_1d(|y| f(x, y), y_lo, y_hi, inner_tol) {
                Ok(r) => {
                    inner_evals.set(inner_evals.get() + r.evaluations);
                    inner_error.set(inner_error.get().max(r.abs_error_estimate));
                    r.value
                }
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            }
        },
        x_lo,
        x_hi,
        tol,
    )?;

    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(QuadResult {
        value: outer.value,
        abs_error_estimate: outer.abs_error_estimate + inner_error.get() * (x_hi - x_lo),
        evaluations: inner_evals.get(),
    })
}
