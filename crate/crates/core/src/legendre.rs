//! Legendre polynomials, tensorized bases on `[-1, 1]^d`, and projection of
//! functions onto truncated Legendre series.

use serde::{Deserialize, Serialize};

use crate::density::LegendreSeries;
use crate::error::{OsdeError, Result};

/// Slack allowed on `|x| <= 1` before a point counts as out of domain.
const DOMAIN_SLACK: f64 = 1e-12;

/// Largest per-axis Gauss–Legendre rule tried by [`project`].
const MAX_PROJECTION_NODES: usize = 2048;

/// Evaluates `P_l(x)` by the Bonnet recurrence
/// `(k + 1) P_{k+1} = (2k + 1) x P_k - k P_{k-1}`.
///
/// Points outside `[-1, 1]` are evaluated as-is; see [`eval_p_checked`].
pub fn eval_p(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for k in 1..l {
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// A value of `P_l(x)` together with a flag marking `x` outside `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub out_of_domain: bool,
}

/// Like [`eval_p`], but takes a signed degree and flags out-of-domain points.
pub fn eval_p_checked(l: i64, x: f64) -> Result<Flagged> {
    let l = usize::try_from(l)
        .map_err(|_| OsdeError::domain(format!("Legendre degree must be non-negative, got {l}")))?;
    Ok(Flagged {
        value: eval_p(l, x),
        out_of_domain: !in_domain(x),
    })
}

pub fn in_domain(x: f64) -> bool {
    x.abs() <= 1.0 + DOMAIN_SLACK
}

/// `P_0(x), ..., P_degree(x)` in one pass of the recurrence.
pub fn eval_all(degree: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if degree == 0 {
        return;
    }
    out.push(x);
    for k in 1..degree {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
}

/// `∫_{-1}^{x} P_l(t) dt`, exact.
///
/// Uses `∫ P_l = (P_{l+1} - P_{l-1}) / (2l + 1)` for `l >= 1`, which vanishes
/// at `x = -1`.
pub fn antiderivative(l: usize, x: f64) -> f64 {
    if l == 0 {
        x + 1.0
    } else {
        (eval_p(l + 1, x) - eval_p(l - 1, x)) / (2.0 * l as f64 + 1.0)
    }
}

/// Degree label of a tensorized Legendre polynomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: Vec<usize>) -> Self {
        MultiIndex(entries)
    }

    /// Builds an index from signed entries, rejecting negative degrees.
    pub fn from_signed(entries: &[i64]) -> Result<Self> {
        entries
            .iter()
            .map(|&l| {
                usize::try_from(l).map_err(|_| {
                    OsdeError::domain(format!("multi-index entries must be non-negative, got {l}"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(MultiIndex)
    }

    pub fn zeros(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&l| l == 0)
    }

    pub fn max_degree(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

/// `P_l(x) = ∏ P_{l_i}(x_i)`.
pub fn eval_tensor(l: &MultiIndex, x: &[f64]) -> Result<f64> {
    if l.dim() != x.len() {
        return Err(OsdeError::domain(format!(
            "multi-index has dimension {} but point has dimension {}",
            l.dim(),
            x.len()
        )));
    }
    Ok(l.0.iter().zip(x).map(|(&li, &xi)| eval_p(li, xi)).product())
}

/// Normalization constant `C(l) = ∏ (l_i + 1/2)`; `1 / C(l)` is the squared
/// `L2(Ω_d)` norm of `P_l`.
pub fn norm_const(l: &MultiIndex) -> f64 {
    l.0.iter().map(|&li| li as f64 + 0.5).product()
}

/// The index lattice `{0..=L}^d`, or the same lattice without the zero index.
///
/// Members are in lexicographic order with the first axis most significant,
/// so the flat position of `l` is `Σ l_i (L+1)^(d-1-i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    d: usize,
    degree: usize,
    members: Vec<MultiIndex>,
}

impl MultiIndexSet {
    /// `Λ_L = {0..=degree}^d`.
    pub fn full(d: usize, degree: usize) -> Self {
        let side = degree + 1;
        let count = side.pow(d as u32);
        let members = (0..count)
            .map(|mut flat| {
                let mut entries = vec![0; d];
                for slot in entries.iter_mut().rev() {
                    *slot = flat % side;
                    flat /= side;
                }
                MultiIndex(entries)
            })
            .collect();
        MultiIndexSet { d, degree, members }
    }

    /// `Λ'_L = Λ_L \ {0}`.
    pub fn nonzero(d: usize, degree: usize) -> Self {
        let mut set = Self::full(d, degree);
        set.members.retain(|l| !l.is_zero());
        set
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.members.iter()
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }
}

impl<'a> IntoIterator for &'a MultiIndexSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// Flat position of `l` inside `MultiIndexSet::full(l.dim(), degree)`.
pub fn flat_position(l: &MultiIndex, degree: usize) -> usize {
    l.0.iter().fold(0, |acc, &li| acc * (degree + 1) + li)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = p_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = p_and_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn p_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    let nf = n as f64;
    (cur, nf * (x * cur - prev) / (x * x - 1.0))
}

/// Coefficients `C(l) ∫ P_l f` over `Λ_L` from a fixed tensor rule.
fn project_with_rule<F: Fn(&[f64]) -> f64>(
    f: &F,
    d: usize,
    degree: usize,
    nodes: &[f64],
    weights: &[f64],
) -> Vec<f64> {
    let set = MultiIndexSet::full(d, degree);
    let n = nodes.len();
    // Per-node table of P_0..P_L.
    let mut table = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for &x in nodes {
        eval_all(degree, x, &mut buf);
        table.push(buf.clone());
    }

    let mut sums = vec![0.0; set.len()];
    let mut point = vec![0.0; d];
    let mut counter = vec![0usize; d];
    let total = n.pow(d as u32);
    for _ in 0..total {
        let mut w = 1.0;
        for (axis, &c) in counter.iter().enumerate() {
            point[axis] = nodes[c];
            w *= weights[c];
        }
        let fw = f(&point) * w;
        for (slot, l) in sums.iter_mut().zip(set.iter()) {
            let basis: f64 = l
                .entries()
                .iter()
                .zip(&counter)
                .map(|(&li, &c)| table[c][li])
                .product();
            *slot += fw * basis;
        }
        for c in counter.iter_mut().rev() {
            *c += 1;
            if *c < n {
                break;
            }
            *c = 0;
        }
    }
    sums.iter_mut()
        .zip(set.iter())
        .for_each(|(s, l)| *s *= norm_const(l));
    sums
}

/// Projects `f` onto `span{P_l : l ∈ Λ_L}`.
///
/// The per-axis Gauss–Legendre rule starts at `degree + 16` nodes and doubles
/// until successive coefficient vectors agree to within `quad_tol`.
pub fn project<F: Fn(&[f64]) -> f64>(
    f: F,
    d: usize,
    degree: usize,
    quad_tol: f64,
) -> Result<LegendreSeries> {
    if d == 0 {
        return Err(OsdeError::domain("dimension must be at least 1"));
    }
    if !(quad_tol > 0.0) {
        return Err(OsdeError::domain(format!(
            "quadrature tolerance must be positive, got {quad_tol}"
        )));
    }
    let mut n = degree + 16;
    let (nodes, weights) = gauss_legendre(n);
    let mut coeffs = project_with_rule(&f, d, degree, &nodes, &weights);
    loop {
        let next_n = 2 * n;
        let (nodes, weights) = gauss_legendre(next_n);
        let refined = project_with_rule(&f, d, degree, &nodes, &weights);
        let (worst, diff) = refined
            .iter()
            .zip(&coeffs)
            .map(|(a, b)| (a - b).abs())
            .enumerate()
            .fold(
                (0, 0.0f64),
                |acc, (i, e)| if e > acc.1 { (i, e) } else { acc },
            );
        coeffs = refined;
        n = next_n;
        if diff < quad_tol {
            return LegendreSeries::new(d, degree, coeffs);
        }
        if 2 * n > MAX_PROJECTION_NODES {
            let index = MultiIndexSet::full(d, degree).members()[worst].clone();
            return Err(OsdeError::Projection {
                index: index.entries().to_vec(),
                reason: format!("coefficient still moving by {diff:.3e} at {n} nodes per axis"),
            });
        }
    }
}
