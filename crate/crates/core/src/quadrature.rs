//! One-dimensional Gaussian expectations `E[f(Z)]`, `Z ~ N(0, 1)`.
//!
//! Two independent rules are available: Gauss–Hermite in probabilists'
//! scaling, and globally adaptive Gauss–Kronrod (7/15) subdivision on
//! `[−12, 12]`, where the truncated Gaussian mass is below 1e−30 relative to
//! any integrand used here.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::error::{domain, FwerError, Result};
use crate::special::log_std_normal_pdf;

pub const TRUNCATION: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    GaussHermite,
    AdaptiveSubdivision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    /// Node count of the Gauss–Hermite rule.
    pub node_count: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Interval budget of the adaptive rule.
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::adaptive()
    }
}

impl QuadratureSpec {
    pub fn gauss_hermite(node_count: usize) -> Self {
        Self {
            method: QuadratureMethod::GaussHermite,
            node_count,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 0,
        }
    }

    pub fn adaptive() -> Self {
        Self {
            method: QuadratureMethod::AdaptiveSubdivision,
            node_count: 201,
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_subdivisions: 4000,
        }
    }

    pub fn with_tolerances(self, abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(domain("quadrature tolerances must be positive"));
        }
        match self.method {
            QuadratureMethod::GaussHermite
                if !(32..=MAX_HERMITE_NODES).contains(&self.node_count) =>
            {
                Err(domain(format!(
                    "Gauss-Hermite node count must lie in [32, {}], got {}",
                    MAX_HERMITE_NODES, self.node_count
                )))
            }
            QuadratureMethod::AdaptiveSubdivision if self.max_subdivisions == 0 => Err(domain(
                "adaptive quadrature needs a positive subdivision budget",
            )),
            _ => Ok(()),
        }
    }

    fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// Nodes and weights with `Σ wᵢ f(zᵢ) ≈ E[f(Z)]` for standard normal `Z`.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// Roots of the orthonormal Hermite polynomial (weight `e^{−t²}`) are
    /// bracketed by a sign scan finer than the smallest root spacing and
    /// polished by safeguarded Newton steps; nodes are rescaled by `z = √2·t`.
    pub fn new(n: usize) -> Self {
        assert!((1..=MAX_HERMITE_NODES).contains(&n));
        let mut positive = Vec::with_capacity(n / 2 + 1);
        let top = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
        let step = std::f64::consts::PI / (2.0 * n as f64 + 1.0).sqrt() / 16.0;
        // Odd degree has a root at 0; start the scan just past it.
        let mut lo = if n % 2 == 1 { step * 0.5 } else { 0.0 };
        let mut f_lo = hermite_pair(n, lo).0;
        while lo < top && positive.len() < n / 2 {
            let hi = lo + step;
            let f_hi = hermite_pair(n, hi).0;
            if f_lo == 0.0 || f_lo.signum() != f_hi.signum() {
                positive.push(polish_root(n, lo, hi));
            }
            lo = hi;
            f_lo = f_hi;
        }
        assert_eq!(positive.len(), n / 2, "Hermite root scan lost roots");

        let mut roots: Vec<f64> = positive.iter().map(|t| -t).collect();
        if n % 2 == 1 {
            roots.push(0.0);
        }
        roots.extend(positive.iter().copied());
        roots.sort_by(f64::total_cmp);

        let scale = std::f64::consts::PI.sqrt().recip();
        let (nodes, weights) = roots
            .into_iter()
            .map(|t| {
                let pp = hermite_pair(n, t).1;
                (std::f64::consts::SQRT_2 * t, 2.0 / (pp * pp) * scale)
            })
            .unzip();
        Self { nodes, weights }
    }

    /// Cached rule of the given size.
    pub fn cached(n: usize) -> Arc<Self> {
        static RULES: OnceLock<Mutex<HashMap<usize, Arc<GaussHermiteRule>>>> = OnceLock::new();
        let cache = RULES.get_or_init(Default::default);
        if let Some(rule) = cache.lock().unwrap().get(&n) {
            return Arc::clone(rule);
        }
        let rule = Arc::new(Self::new(n));
        cache.lock().unwrap().entry(n).or_insert(rule).clone()
    }

    fn apply(&self, f: &impl Fn(f64, f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&z, &w)| w * f(z, 0.0))
            .sum()
    }
}

/// Orthonormal Hermite value and derivative `(h_n(t), h_n′(t))`.
fn hermite_pair(n: usize, t: f64) -> (f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = t * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

fn polish_root(n: usize, mut lo: f64, mut hi: f64) -> f64 {
    let sign_lo = hermite_pair(n, lo).0.signum();
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, df) = hermite_pair(n, t);
        if f == 0.0 {
            return t;
        }
        if f.signum() == sign_lo {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / df;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-16 * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

/// Above this size the recurrence overflows near the outermost roots.
pub const MAX_HERMITE_NODES: usize = 600;

/// Computes `E[g(Z)]`. The integrand is called as `f(z, log_density)` and
/// must return `g(z)·exp(log_density)`; passing the log density in lets the
/// caller fold it into a single exponential. Gauss–Hermite calls pass 0.
///
/// `breakpoints` are locations of rapid change (ignored by Gauss–Hermite).
pub fn expectation(
    spec: &QuadratureSpec,
    breakpoints: &[f64],
    f: impl Fn(f64, f64) -> f64,
) -> Result<Integral> {
    spec.validate()?;
    match spec.method {
        QuadratureMethod::GaussHermite => gauss_hermite(spec, &f),
        QuadratureMethod::AdaptiveSubdivision => adaptive(spec, breakpoints, &f),
    }
}

fn gauss_hermite(spec: &QuadratureSpec, f: &impl Fn(f64, f64) -> f64) -> Result<Integral> {
    let fine = GaussHermiteRule::cached(spec.node_count).apply(f);
    let coarse = GaussHermiteRule::cached(spec.node_count.div_ceil(2)).apply(f);
    let error = (fine - coarse).abs();
    let tolerance = spec.tolerance(fine);
    if !fine.is_finite() || error > tolerance {
        return Err(FwerError::NonConvergence {
            estimate: fine,
            error,
            tolerance,
            evaluations: spec.node_count,
        });
    }
    Ok(Integral { value: fine, error })
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for `XGK[1]`, `XGK[3]`, `XGK[5]`, `XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn kronrod_panel(lo: f64, hi: f64, f: &impl Fn(f64, f64) -> f64) -> Panel {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |z: f64| f(z, log_std_normal_pdf(z));
    let fc = eval(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &wk)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let pair = eval(center - half * x) + eval(center + half * x);
        kronrod += wk * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Panel {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

fn adaptive(
    spec: &QuadratureSpec,
    breakpoints: &[f64],
    f: &impl Fn(f64, f64) -> f64,
) -> Result<Integral> {
    let mut edges = vec![-TRUNCATION, TRUNCATION];
    edges.extend(
        breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite() && b.abs() < TRUNCATION),
    );
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap: BinaryHeap<Panel> = edges
        .windows(2)
        .map(|w| kronrod_panel(w[0], w[1], f))
        .collect();
    let mut panels = heap.len();
    loop {
        // Summation in a fixed order keeps results independent of heap layout.
        let mut all: Vec<Panel> = heap.iter().copied().collect();
        all.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let value: f64 = all.iter().map(|p| p.value).sum();
        let error: f64 = all.iter().map(|p| p.error).sum();
        let tolerance = spec.tolerance(value);
        if !value.is_finite() {
            return Err(FwerError::NonConvergence {
                estimate: value,
                error,
                tolerance,
                evaluations: panels,
            });
        }
        if error <= tolerance {
            return Ok(Integral { value, error });
        }
        if panels >= spec.max_subdivisions {
            return Err(FwerError::NonConvergence {
                estimate: value,
                error,
                tolerance,
                evaluations: panels,
            });
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            return Err(FwerError::NonConvergence {
                estimate: value,
                error,
                tolerance,
                evaluations: panels,
            });
        }
        heap.push(kronrod_panel(worst.lo, mid, f));
        heap.push(kronrod_panel(mid, worst.hi, f));
        panels += 1;
    }
}
