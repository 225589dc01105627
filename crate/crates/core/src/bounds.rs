//! Closed-form FWER bounds and the chord-inverting corrected level.

use serde::Serialize;

use crate::error::{domain, Result};

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(domain(format!("correlation must lie in [0, 1], got {rho}")))
    }
}

fn check_level(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{what} must lie in (0, 1), got {p}")))
    }
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        Err(domain("number of tests must be positive"))
    } else {
        Ok(())
    }
}

/// `1 − (1 − α_n)ⁿ` through `expm1`/`ln_1p`.
pub fn independence_fwer(n: u64, alpha_n: f64) -> f64 {
    -(n as f64 * (-alpha_n).ln_1p()).exp_m1()
}

/// Chord through `(0, 1 − (1 − α_n)ⁿ)` and `(1, α_n)`.
///
/// Written as `ρ·α_n + (1 − ρ)·(1 − (1 − α_n)ⁿ)` so both endpoints are
/// reproduced exactly.
pub fn line_bound(rho: f64, n: u64, alpha_n: f64) -> Result<f64> {
    check_rho(rho)?;
    check_n(n)?;
    check_level(alpha_n, "per-test level")?;
    Ok(rho * alpha_n + (1.0 - rho) * independence_fwer(n, alpha_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplifiedBound {
    /// `α_n(n − (n − 1)ρ)`, unclipped.
    pub value: f64,
    pub exceeds_one: bool,
}

pub fn simplified_bound(rho: f64, n: u64, alpha_n: f64) -> Result<SimplifiedBound> {
    check_rho(rho)?;
    check_n(n)?;
    check_level(alpha_n, "per-test level")?;
    let n = n as f64;
    let value = alpha_n * (n - (n - 1.0) * rho);
    Ok(SimplifiedBound {
        value,
        exceeds_one: value > 1.0,
    })
}

/// Large-`n` bound `α(1 − ρ)`. Note it is zero at `ρ = 1`, below the true
/// FWER `α_n` there.
pub fn asymptotic_bound(rho: f64, alpha: f64) -> Result<f64> {
    check_rho(rho)?;
    check_level(alpha, "family level")?;
    Ok(alpha * (1.0 - rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSet {
    pub endpoint_rho0: f64,
    pub endpoint_rho1: f64,
    pub line_value: f64,
    pub simplified_value: f64,
    pub simplified_exceeds_one: bool,
    /// `α(1 − ρ)` with `α = n·α_n`.
    pub asymptotic_value: f64,
}

impl BoundSet {
    pub fn evaluate(n: u64, alpha_n: f64, rho: f64) -> Result<Self> {
        let simplified = simplified_bound(rho, n, alpha_n)?;
        Ok(Self {
            endpoint_rho0: independence_fwer(n, alpha_n),
            endpoint_rho1: alpha_n,
            line_value: line_bound(rho, n, alpha_n)?,
            simplified_value: simplified.value,
            simplified_exceeds_one: simplified.exceeds_one,
            asymptotic_value: n as f64 * alpha_n * (1.0 - rho),
        })
    }
}

/// Largest per-test level `a*` whose chord bound stays at or below
/// `alpha_target`.
///
/// The chord is increasing in `a`, is at most `alpha_target` at the
/// Bonferroni level `alpha_target/n` (it never exceeds `n·a`), and is at
/// least `a`, so `a*` always lies in `[alpha_target/n, alpha_target]` and
/// bisection on that bracket cannot fail. At `ρ = 0` the closed form
/// `1 − (1 − α)^{1/n}` is returned.
pub fn corrected_bonferroni_level(alpha_target: f64, rho: f64, n: u64) -> Result<f64> {
    check_level(alpha_target, "target family level")?;
    check_n(n)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!(
            "corrected level needs correlation in [0, 1), got {rho}; \
             at correlation 1 all statistics coincide and the single-test level applies"
        )));
    }
    if rho == 0.0 {
        return Ok(-((-alpha_target).ln_1p() / n as f64).exp_m1());
    }
    let chord = |a: f64| rho * a + (1.0 - rho) * independence_fwer(n, a);
    let mut lo = alpha_target / n as f64;
    let mut hi = alpha_target;
    if chord(hi) <= alpha_target {
        return Ok(hi);
    }
    while hi - lo > 1e-13 * lo {
        let mid = 0.5 * (lo + hi);
        if chord(mid) <= alpha_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `alpha_target / (n(1 − ρ))`: the per-test level that makes the
/// asymptotic bound equal the target. Labeled convenience only; the chord
/// inversion above is the finite-`n` construction.
pub fn asymptotic_rescaled_level(alpha_target: f64, rho: f64, n: u64) -> Result<f64> {
    check_level(alpha_target, "target family level")?;
    check_n(n)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!(
            "rescaled level needs correlation in [0, 1), got {rho}"
        )));
    }
    Ok(alpha_target / (n as f64 * (1.0 - rho)))
}
