//! Model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// SABR parameters with an optional mean reversion on the volatility factor.
///
/// ```text
/// dF = V F^β dW₁
/// dV = ν V dW₂ + κ (V̄ − V) dt,   ⟨dW₁ dW₂⟩ = ρ dt,   V(0) = α
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SabrParams {
    pub f0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub rho: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub vbar: f64,
}

impl SabrParams {
    /// Plain SABR parameters (no mean reversion), validated.
    pub fn new(f0: f64, alpha: f64, beta: f64, nu: f64, rho: f64) -> Result<Self> {
        let p = Self {
            f0,
            alpha,
            beta,
            nu,
            rho,
            kappa: 0.0,
            vbar: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Adds mean reversion `κ (V̄ − V) dt` to the volatility process.
    pub fn with_mean_reversion(mut self, kappa: f64, vbar: f64) -> Result<Self> {
        self.kappa = kappa;
        self.vbar = vbar;
        self.validate()?;
        Ok(self)
    }

    /// The parameter set used in the published comparison:
    /// F₀ = 4, α = 0.3, β = 0.7, ν = 0.4, ρ = −0.5.
    pub fn reference() -> Self {
        Self {
            f0: 4.0,
            alpha: 0.3,
            beta: 0.7,
            nu: 0.4,
            rho: -0.5,
            kappa: 0.0,
            vbar: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return Err(invalid("f0", format!("must be positive, got {}", self.f0)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(
                "alpha",
                format!("must be positive, got {}", self.alpha),
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(
                "beta",
                format!("must lie in [0, 1], got {}", self.beta),
            ));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(invalid(
                "nu",
                format!("must be non-negative, got {}", self.nu),
            ));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(invalid(
                "rho",
                format!("must lie in (-1, 1), got {}", self.rho),
            ));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid(
                "kappa",
                format!("must be non-negative, got {}", self.kappa),
            ));
        }
        if self.kappa > 0.0 && !(self.vbar > 0.0 && self.vbar.is_finite()) {
            return Err(invalid(
                "vbar",
                format!("must be positive when kappa > 0, got {}", self.vbar),
            ));
        }
        Ok(())
    }

    pub fn has_mean_reversion(&self) -> bool {
        self.kappa > 0.0
    }

    /// Same parameters with the mean reversion switched off.
    pub fn without_mean_reversion(&self) -> Self {
        Self {
            kappa: 0.0,
            vbar: 0.0,
            ..*self
        }
    }

    /// Order-0 at-the-money volatility, the local volatility α F₀^(β−1).
    pub fn atm_local_vol(&self) -> f64 {
        self.alpha * self.f0.powf(self.beta - 1.0)
    }
}
