//! Standard normal primitives with relative accuracy in the far tails.
//!
//! The upper tail `Q(x) = Φ(−x)` is never formed as `1 − Φ(x)`. For moderate
//! arguments it comes from the odd power series of `Φ(x) − 1/2`; beyond
//! [`SERIES_LIMIT`] it is `φ(x)·R(x)` with the Mills ratio `R` evaluated by
//! its continued fraction. The Gaussian factor `exp(−x²/2)` is split so that
//! the squared argument is formed exactly.

use crate::error::{domain, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// ln(√(2π))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this argument the continued fraction converges in a few dozen terms
/// and the series would lose digits to cancellation.
const SERIES_LIMIT: f64 = 2.5;

/// `exp(−x²/2)` with the square split into an exactly representable head and
/// a small correction.
fn exp_neg_half_sq(x: f64) -> f64 {
    let x = x.abs();
    let head = (x * 16.0).trunc() / 16.0;
    let tail = (x - head) * (x + head);
    (-0.5 * head * head).exp() * (-0.5 * tail).exp()
}

/// `Σ x^(2k+1) / (2k+1)!!`, so that `Φ(x) = 1/2 + φ(x)·S(x)`.
fn odd_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    while term.abs() > 1e-17 * sum.abs() {
        term *= x2 / (2.0 * k + 1.0);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Mills ratio `Q(x)/φ(x)` via the continued fraction
/// `1/(x + 1/(x + 2/(x + 3/(x + …))))`, modified Lentz evaluation.
fn mills_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Mills ratio `Φ(−x)/φ(x)` for `x ≥ 0`.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < SERIES_LIMIT {
        upper_tail(x) / std_normal_pdf(x)
    } else {
        mills_continued_fraction(x)
    }
}

/// `Φ(−x)` for `x ≥ 0`.
fn upper_tail(x: f64) -> f64 {
    if x < SERIES_LIMIT {
        0.5 - std_normal_pdf(x) * odd_series(x)
    } else {
        std_normal_pdf(x) * mills_continued_fraction(x)
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp_neg_half_sq(x)
}

pub fn log_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal distribution function `Φ(x)`.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= 0.0 {
        1.0 - upper_tail(x)
    } else {
        upper_tail(-x)
    }
}

/// Survival function `Φ(−x) = 1 − Φ(x)`, accurate in relative terms for
/// large positive `x`.
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// `ln Φ(x)`. Stays finite far below the point where `Φ(x)` underflows.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= 0.0 {
        (-upper_tail(x)).ln_1p()
    } else if -x < SERIES_LIMIT {
        upper_tail(-x).ln()
    } else {
        log_std_normal_pdf(x) + mills_continued_fraction(-x).ln()
    }
}

/// Lower-tail inverse for `0 < p ≤ 1/2`: rational initial guess followed by
/// Halley polishing against the accurate tail.
fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let mut x = initial_quantile(p);
    for _ in 0..8 {
        // x ≤ 0 here, so Φ(x) = Q(−x) keeps relative accuracy.
        let err = upper_tail(-x) - p;
        let u = err / std_normal_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

/// Acklam's rational approximation (relative error about 1e−9).
fn initial_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn check_open_unit(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{what} must lie in (0, 1), got {p}")))
    }
}

/// Inverse distribution function `Φ⁻¹(p)` for `0 < p < 1`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    check_open_unit(p, "probability")?;
    Ok(if p <= 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    })
}

/// `Φ⁻¹(1 − q)` without forming `1 − q`, so that tiny upper-tail masses keep
/// their relative precision.
pub fn std_normal_upper_quantile(q: f64) -> Result<f64> {
    check_open_unit(q, "tail probability")?;
    Ok(if q <= 0.5 {
        -lower_quantile(q)
    } else {
        lower_quantile(1.0 - q)
    })
}

/// `x·Φ(−x)/φ(x)`, which tends to 1 from below as `x → ∞`.
pub fn mills_ratio_check(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(domain(format!("Mills ratio check needs x > 0, got {x}")));
    }
    Ok(x * mills_ratio(x))
}
