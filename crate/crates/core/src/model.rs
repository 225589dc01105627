//! The equicorrelated one-sided testing problem and the scalar quantities of
//! its one-dimensional representation.
//!
//! Under the global null, `X_k = θ + Z_k` with `θ ~ N(0, ρ)` shared and
//! `Z_k ~ N(0, 1 − ρ)` independent. Conditioning on the standardized latent
//! `z = −θ/√ρ` gives the standardized cutoff
//! `d(z) = (c + √ρ·z)/√(1 − ρ)` and
//! `P(no rejection) = E[Φⁿ(d(Z))]` with `Z ~ N(0, 1)`.

use serde::Serialize;

use crate::error::{domain, FwerError, Result};
use crate::special::{std_normal_cdf, std_normal_pdf, std_normal_sf, std_normal_upper_quantile};

/// Relative tolerance for `alpha_n = Φ(−c)` when both are supplied.
const CONSISTENCY_TOL: f64 = 1e-12;

/// One testing problem: `n` one-sided tests at per-test size `alpha_n`
/// (equivalently cutoff `c`, rejecting when `X_i > c`) with common
/// correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConfig {
    n: u64,
    rho: f64,
    alpha_n: f64,
    cutoff: f64,
}

impl ModelConfig {
    /// Builds the problem from the per-test size; the cutoff is derived.
    pub fn new(n: u64, rho: f64, alpha_n: f64) -> Result<Self> {
        validate_n_rho(n, rho)?;
        let cutoff = cutoff_from_level(alpha_n)?;
        Ok(Self {
            n,
            rho,
            alpha_n,
            cutoff,
        })
    }

    /// Bonferroni calibration: per-test size `alpha / n` for family target `alpha`.
    pub fn bonferroni(n: u64, alpha: f64, rho: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!(
                "family level must lie in (0, 1), got {alpha}"
            )));
        }
        if n == 0 {
            return Err(domain("number of hypotheses must be positive"));
        }
        Self::new(n, rho, alpha / n as f64)
    }

    /// Builds the problem from the rejection cutoff; the per-test size is derived.
    pub fn with_cutoff(n: u64, rho: f64, cutoff: f64) -> Result<Self> {
        validate_n_rho(n, rho)?;
        if !cutoff.is_finite() {
            return Err(domain(format!("cutoff must be finite, got {cutoff}")));
        }
        let alpha_n = std_normal_sf(cutoff);
        if !(alpha_n > 0.0 && alpha_n < 1.0) {
            return Err(domain(format!(
                "cutoff {cutoff} gives a degenerate per-test size"
            )));
        }
        Ok(Self {
            n,
            rho,
            alpha_n,
            cutoff,
        })
    }

    /// Accepts both encodings and checks that they agree.
    pub fn from_parts(n: u64, rho: f64, alpha_n: f64, cutoff: f64) -> Result<Self> {
        let cfg = Self::with_cutoff(n, rho, cutoff)?;
        if ((cfg.alpha_n - alpha_n) / alpha_n).abs() > CONSISTENCY_TOL {
            return Err(domain(format!(
                "per-test size {alpha_n} is inconsistent with cutoff {cutoff} (Φ(−c) = {})",
                cfg.alpha_n
            )));
        }
        Ok(Self { alpha_n, ..cfg })
    }

    /// Same problem at another correlation.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        validate_n_rho(self.n, rho)?;
        Ok(Self { rho, ..*self })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha_n(&self) -> f64 {
        self.alpha_n
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn representation(&self) -> ExchangeableRepresentation {
        ExchangeableRepresentation::from_rho(self.rho)
    }

    pub(crate) fn require_interior(&self) -> Result<()> {
        if self.rho > 0.0 && self.rho < 1.0 {
            Ok(())
        } else {
            Err(domain(format!(
                "correlation must lie in the open interval (0, 1) here, got {}",
                self.rho
            )))
        }
    }
}

fn validate_n_rho(n: u64, rho: f64) -> Result<()> {
    if n == 0 {
        return Err(domain("number of hypotheses must be positive"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(domain(format!("correlation must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

/// Variance split of the shared and idiosyncratic components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeableRepresentation {
    pub theta_variance: f64,
    pub z_variance: f64,
}

impl ExchangeableRepresentation {
    pub fn from_rho(rho: f64) -> Self {
        Self {
            theta_variance: rho,
            z_variance: 1.0 - rho,
        }
    }

    /// Loadings `(√ρ, √(1 − ρ))` applied to standard normal draws.
    pub fn loadings(&self) -> (f64, f64) {
        (self.theta_variance.sqrt(), self.z_variance.sqrt())
    }
}

/// Which expression is used for the `a` coefficient of the curvature integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AForm {
    /// `a = (n − 1)φ(d) − d·Φ(d)`, the derivative of `Φ^{n−1}(d)φ(d)` in `d`
    /// divided by `Φ^{n−2}(d)φ(d)`.
    CdfWeighted,
    /// `a = (n − 1)φ(d) − d·Φ(−d)`.
    TailWeighted,
}

/// The form that agrees with finite differences of the quadrature integral.
pub const PINNED_A_FORM: AForm = AForm::CdfWeighted;

/// Coefficients of the curvature integrand at one latent value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBundle {
    pub d: f64,
    pub g: f64,
    pub a: f64,
    pub b: f64,
    /// `Φ(−d)`, the conditional per-test rejection probability.
    pub alpha1: f64,
}

/// `c = Φ⁻¹(1 − alpha_n)`.
pub fn cutoff_from_level(alpha_n: f64) -> Result<f64> {
    std_normal_upper_quantile(alpha_n)
}

/// Standardized cutoff `(c + √ρ·z)/√(1 − ρ)` given the latent value `z`.
pub fn d_transform(z: f64, config: &ModelConfig) -> Result<f64> {
    let rho = config.rho;
    if rho >= 1.0 {
        return Err(domain("d-transform is singular at rho = 1"));
    }
    Ok((config.cutoff + rho.sqrt() * z) / (1.0 - rho).sqrt())
}

/// `∂d/∂ρ = (c + z/√ρ) / (2(1 − ρ)^{3/2})`.
pub fn g_factor(z: f64, config: &ModelConfig) -> Result<f64> {
    config.require_interior()?;
    let rho = config.rho;
    Ok((config.cutoff + z / rho.sqrt()) / (2.0 * (1.0 - rho).powf(1.5)))
}

pub fn coefficients(z: f64, config: &ModelConfig) -> Result<CoefficientBundle> {
    coefficients_with_form(z, config, PINNED_A_FORM)
}

pub fn coefficients_with_form(
    z: f64,
    config: &ModelConfig,
    form: AForm,
) -> Result<CoefficientBundle> {
    config.require_interior()?;
    let rho = config.rho;
    let d = d_transform(z, config)?;
    let g = g_factor(z, config)?;
    let pdf = std_normal_pdf(d);
    let cdf = std_normal_cdf(d);
    let alpha1 = std_normal_sf(d);
    let weight = match form {
        AForm::CdfWeighted => cdf,
        AForm::TailWeighted => alpha1,
    };
    let a = (config.n as f64 - 1.0) * pdf - d * weight;
    let b = (4.0 * rho - 1.0) * cdf / (2.0 * rho * (1.0 - rho));
    Ok(CoefficientBundle { d, g, a, b, alpha1 })
}

/// `T(ρ) = 1/(1 + √(1 − ρ))`, in `[1/2, 1]` on `[0, 1]`.
pub fn t_factor(rho: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&rho), "rho = {rho}");
    1.0 / (1.0 + (1.0 - rho).sqrt())
}

/// Latent value where the conditional rejection probability `Φ(−d(z₀))`
/// equals `1/n`: `z₀ = (√(1 − ρ)·Φ⁻¹(1 − 1/n) − c)/√ρ`.
pub fn z0_solve(config: &ModelConfig) -> Result<f64> {
    config.require_interior()?;
    if config.n < 2 {
        return Err(FwerError::Domain("z0 needs at least two hypotheses".into()));
    }
    let rho = config.rho;
    let target = std_normal_upper_quantile(1.0 / config.n as f64)?;
    Ok(((1.0 - rho).sqrt() * target - config.cutoff) / rho.sqrt())
}
