//! Non-rejection probability `H(ρ) = E[Φⁿ(d(Z))]`, its first two derivatives
//! in `ρ`, and the diagnostics built on them.
//!
//! Every integrand is assembled in log space, `(n − k)·ln Φ(d) + ln φ(d) +
//! ln φ(z)`, and exponentiated once: `Φⁿ(d)` underflows for most `z` when
//! `n` is in the thousands.
//!
//! Differentiating under the integral,
//!
//! ```text
//! H′(ρ) = E[n Φ^{n−1}(d) φ(d) G]
//! H″(ρ) = E[n Φ^{n−2}(d) φ(d) (a G² + b G + c Φ(d) / (4ρ(1−ρ)^{3/2}))]
//! ```
//!
//! with `G = ∂d/∂ρ`, `a = (n−1)φ(d) − dΦ(d)` and
//! `b = (4ρ−1)Φ(d) / (2ρ(1−ρ))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FwerError, Result};
use crate::model::{coefficients_with_form, t_factor, z0_solve, AForm, ModelConfig, PINNED_A_FORM};
use crate::quadrature::{expectation, Integral, QuadratureSpec};
use crate::special::{
    log_std_normal_cdf, log_std_normal_pdf, mills_ratio, mills_ratio_check, std_normal_pdf,
    std_normal_sf,
};

/// Leading factor of the curvature integrand. Twice the coefficient `n/2`
/// that is sometimes quoted; only `n` agrees with finite differences.
const CURVATURE_PREFACTOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactResult {
    pub h: f64,
    pub fwer: f64,
    pub quad_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDerivativeBreakdown {
    /// `a G²` contribution.
    pub term1: f64,
    /// `b G` contribution.
    pub term2: f64,
    /// `c Φ(d) / (4ρ(1−ρ)^{3/2})` contribution.
    pub term3: f64,
    /// Integral of the full integrand (not the sum of the terms).
    pub total: f64,
    pub quad_error_estimate: f64,
}

/// Breakpoints for the adaptive rule: the transition point of `Φⁿ(d(z))`.
fn transition_points(config: &ModelConfig) -> Vec<f64> {
    z0_solve(config).map(|z0| vec![z0]).unwrap_or_default()
}

/// `ln Φ(d(z))` and `d(z)` for an interior correlation.
#[inline]
fn latent(config: &ModelConfig, z: f64) -> (f64, f64) {
    let rho = config.rho();
    let d = (config.cutoff() + rho.sqrt() * z) / (1.0 - rho).sqrt();
    (d, log_std_normal_cdf(d))
}

/// Non-rejection probability and FWER. The endpoints use closed forms:
/// `(1 − α_n)ⁿ` at `ρ = 0` and `1 − α_n` at `ρ = 1`.
pub fn h_exact(config: &ModelConfig, spec: &QuadratureSpec) -> Result<ExactResult> {
    let n = config.n() as f64;
    let alpha_n = config.alpha_n();
    if config.rho() == 0.0 {
        let log_h = n * (-alpha_n).ln_1p();
        return Ok(ExactResult {
            h: log_h.exp(),
            fwer: -log_h.exp_m1(),
            quad_error_estimate: 0.0,
        });
    }
    if config.rho() == 1.0 {
        return Ok(ExactResult {
            h: 1.0 - alpha_n,
            fwer: alpha_n,
            quad_error_estimate: 0.0,
        });
    }
    // The FWER integrand 1 − Φⁿ(d) keeps relative accuracy when the FWER is small.
    let fwer = expectation(spec, &transition_points(config), |z, lw| {
        let (_, log_cdf) = latent(config, z);
        -(n * log_cdf).exp_m1() * lw.exp()
    })?;
    let value = fwer.value.clamp(0.0, 1.0);
    Ok(ExactResult {
        h: 1.0 - value,
        fwer: value,
        quad_error_estimate: fwer.error,
    })
}

/// `H′(ρ)` on the open interval.
pub fn h_prime(config: &ModelConfig, spec: &QuadratureSpec) -> Result<Integral> {
    config.require_interior()?;
    let n = config.n() as f64;
    let rho = config.rho();
    let cutoff = config.cutoff();
    let g_scale = 1.0 / (2.0 * (1.0 - rho).powf(1.5));
    expectation(spec, &transition_points(config), |z, lw| {
        let (d, log_cdf) = latent(config, z);
        let g = (cutoff + z / rho.sqrt()) * g_scale;
        n * ((n - 1.0) * log_cdf + log_std_normal_pdf(d) + lw).exp() * g
    })
}

/// `H″(ρ)` with its three terms integrated separately.
pub fn h_second(config: &ModelConfig, spec: &QuadratureSpec) -> Result<SecondDerivativeBreakdown> {
    h_second_with_form(config, spec, PINNED_A_FORM)
}

pub fn h_second_with_form(
    config: &ModelConfig,
    spec: &QuadratureSpec,
    form: AForm,
) -> Result<SecondDerivativeBreakdown> {
    config.require_interior()?;
    let n = config.n() as f64;
    let rho = config.rho();
    let cutoff = config.cutoff();
    let third_scale = cutoff / (4.0 * rho * (1.0 - rho).powf(1.5));
    let breaks = transition_points(config);

    // Returns (weight, a G², b G, third) at z.
    let parts = |z: f64, lw: f64| {
        let k = coefficients_with_form(z, config, form).expect("interior correlation");
        let (_, log_cdf) = latent(config, z);
        let weight =
            CURVATURE_PREFACTOR * n * ((n - 2.0) * log_cdf + log_std_normal_pdf(k.d) + lw).exp();
        let cdf = 1.0 - k.alpha1;
        (weight, k.a * k.g * k.g, k.b * k.g, third_scale * cdf)
    };

    let term = |pick: fn((f64, f64, f64, f64)) -> f64| {
        expectation(spec, &breaks, |z, lw| {
            let p = parts(z, lw);
            if p.0 == 0.0 {
                0.0
            } else {
                p.0 * pick(p)
            }
        })
    };
    let t1 = term(|p| p.1)?;
    let t2 = term(|p| p.2)?;
    let t3 = term(|p| p.3)?;
    let total = term(|p| p.1 + p.2 + p.3)?;
    Ok(SecondDerivativeBreakdown {
        term1: t1.value,
        term2: t2.value,
        term3: t3.value,
        total: total.value,
        quad_error_estimate: t1.error + t2.error + t3.error + total.error,
    })
}

/// `E[(n/2) (1 − α₁)^{n−2} φ(d) G² |a − d(nα₁ − 1)|]`, the gap between the
/// `a G²` term and its large-`d` surrogate, with `α₁ = Φ(−d)`.
pub fn lemma2_residual(config: &ModelConfig, spec: &QuadratureSpec) -> Result<Integral> {
    config.require_interior()?;
    let n = config.n() as f64;
    let rho = config.rho();
    let cutoff = config.cutoff();
    let g_scale = 1.0 / (2.0 * (1.0 - rho).powf(1.5));
    expectation(spec, &transition_points(config), |z, lw| {
        let (d, log_cdf) = latent(config, z);
        let g = (cutoff + z / rho.sqrt()) * g_scale;
        let weight = 0.5 * n * ((n - 2.0) * log_cdf + log_std_normal_pdf(d) + lw).exp();
        if weight == 0.0 {
            return 0.0;
        }
        // |a − d(nα₁ − 1)| = (n − 1)|φ(d) − dα₁|
        weight * g * g * (n - 1.0) * tail_gap(d)
    })
}

/// `|φ(d) − d·Φ(−d)|`, factored as `φ(d)·(1 − d·R(d))` for positive `d`
/// where the difference cancels.
fn tail_gap(d: f64) -> f64 {
    if d <= 0.0 {
        std_normal_pdf(d) - d * std_normal_sf(d)
    } else {
        std_normal_pdf(d) * (1.0 - d * mills_ratio(d)).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityRow {
    pub rho: f64,
    pub fwer: f64,
    pub h_second_total: f64,
    pub quad_error_estimate: f64,
    /// `FWER″ = −H″ ≥ 0`.
    pub fwer_convex: bool,
}

/// FWER and curvature over a grid of correlations under Bonferroni calibration.
/// Each point is evaluated independently; failures are returned in place.
pub fn convexity_scan(
    n: u64,
    alpha: f64,
    rho_grid: &[f64],
    spec: &QuadratureSpec,
) -> Vec<Result<ConvexityRow>> {
    rho_grid
        .par_iter()
        .map(|&rho| {
            let config = ModelConfig::bonferroni(n, alpha, rho)?;
            let exact = h_exact(&config, spec)?;
            let second = h_second(&config, spec)?;
            Ok(ConvexityRow {
                rho,
                fwer: exact.fwer,
                h_second_total: second.total,
                quad_error_estimate: exact.quad_error_estimate + second.quad_error_estimate,
                fwer_convex: -second.total >= 0.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub n: u64,
    pub cutoff: f64,
    pub cutoff_sq_over_log_n: f64,
    pub mills_ratio: f64,
    pub z0: f64,
    /// `z₀ + c·T(ρ)`.
    pub z0_plus_c_t: f64,
    /// `z₀ + c·√ρ·T(ρ)`; `−c·√ρ·T(ρ)` is the limit of `z₀` when `d(z₀) ≈ c`.
    pub z0_plus_c_sqrt_rho_t: f64,
}

/// Cutoff growth, Mills ratio and transition point along a ladder of `n`
/// with `α_n = α/n`.
pub fn asymptotic_diagnostics(n_list: &[u64], alpha: f64, rho: f64) -> Result<Vec<AsymptoticRow>> {
    n_list
        .iter()
        .map(|&n| {
            if n < 2 {
                return Err(FwerError::Domain(format!(
                    "diagnostics need n >= 2, got {n}"
                )));
            }
            let config = ModelConfig::bonferroni(n, alpha, rho)?;
            let c = config.cutoff();
            let z0 = z0_solve(&config)?;
            let t = t_factor(rho);
            Ok(AsymptoticRow {
                n,
                cutoff: c,
                cutoff_sq_over_log_n: c * c / (n as f64).ln(),
                mills_ratio: mills_ratio_check(c)?,
                z0,
                z0_plus_c_t: z0 + c * t,
                z0_plus_c_sqrt_rho_t: z0 + c * rho.sqrt() * t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub n: u64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub h_second_total: f64,
    pub lemma2_residual: f64,
}

/// Curvature terms and the surrogate residual along a ladder of `n`.
pub fn lemma_ladder(
    n_list: &[u64],
    alpha: f64,
    rho: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<LadderRow>> {
    n_list
        .par_iter()
        .map(|&n| {
            let config = ModelConfig::bonferroni(n, alpha, rho)?;
            let second = h_second(&config, spec)?;
            let residual = lemma2_residual(&config, spec)?;
            Ok(LadderRow {
                n,
                term1: second.term1,
                term2: second.term2,
                term3: second.term3,
                h_second_total: second.total,
                lemma2_residual: residual.value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adaptive() -> QuadratureSpec {
        QuadratureSpec::adaptive()
    }

    #[test]
    fn independence_endpoint() {
        let c = ModelConfig::bonferroni(10_000, 0.05, 0.0).unwrap();
        let r = h_exact(&c, &adaptive()).unwrap();
        assert!((r.fwer - 0.048_770_694_403_352_97).abs() < 1e-16);
        assert!((r.fwer + r.h - 1.0).abs() < 1e-15);
    }

    #[test]
    fn comonotone_endpoint() {
        for n in [1, 7, 10_000] {
            let c = ModelConfig::new(n, 1.0, 0.01).unwrap();
            assert_eq!(h_exact(&c, &adaptive()).unwrap().fwer, 0.01);
        }
    }

    #[test]
    fn single_hypothesis_has_no_rho_dependence() {
        let c = ModelConfig::new(1, 0.4, 0.03).unwrap();
        let r = h_exact(&c, &adaptive()).unwrap();
        assert!((r.fwer - 0.03).abs() < 1e-13);
        assert!(h_prime(&c, &adaptive()).unwrap().value.abs() < 1e-13);
    }

    #[test]
    fn derivatives_reject_endpoints() {
        for rho in [0.0, 1.0] {
            let c = ModelConfig::bonferroni(100, 0.05, rho).unwrap();
            assert!(h_prime(&c, &adaptive()).is_err());
            assert!(h_second(&c, &adaptive()).is_err());
            assert!(lemma2_residual(&c, &adaptive()).is_err());
        }
    }

    #[test]
    fn breakdown_terms_sum_to_total() {
        let c = ModelConfig::bonferroni(1000, 0.1, 0.35).unwrap();
        let s = h_second(&c, &adaptive()).unwrap();
        assert!((s.term1 + s.term2 + s.term3 - s.total).abs() < 1e-10);
    }

    #[test]
    fn lemma2_residual_small_n() {
        let c = ModelConfig::bonferroni(2, 0.05, 0.5).unwrap();
        let r = lemma2_residual(&c, &adaptive()).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0);
    }

    #[test]
    fn asymptotic_rows_reject_small_n() {
        assert!(asymptotic_diagnostics(&[1], 0.05, 0.5).is_err());
        assert!(asymptotic_diagnostics(&[100], 0.05, 0.0).is_err());
    }
}
