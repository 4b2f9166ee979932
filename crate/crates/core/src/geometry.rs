//! Hyperbolic geometry of the SABR diffusion.
//!
//! After the change of variable `q = ∫ dF / F^β` and the time rescaling that
//! sets ν to one, the SABR metric is the Poincaré half-plane metric
//! `ds² = (dx² + dy²) / y²` in the coordinates
//!
//! ```text
//! x = (q − ρ V) / √(1 − ρ²),   y = V.
//! ```
//!
//! Geodesics are vertical lines and half circles centred on the real axis.
//! Everything in this module works in the rescaled units; [`Rescaling`]
//! carries what is needed to map results back.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::params::SabrParams;

/// Below this vol-of-vol the ν rescaling is not used.
pub const SMALL_NU: f64 = 1e-6;

const VERTICAL_TOL: f64 = 1e-12;

/// `q = ∫_{F₀}^{K} dF / F^β`.
///
/// Uses `expm1` so that β close to one reproduces `ln(K/F₀)` without
/// cancellation.
pub fn q_transform(f0: f64, k: f64, beta: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(invalid("f0", format!("must be positive, got {f0}")));
    }
    if !(k > 0.0) {
        return Err(invalid("strike", format!("must be positive, got {k}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid("beta", format!("must lie in [0, 1], got {beta}")));
    }
    Ok(q_unchecked(f0, k, beta))
}

pub(crate) fn q_unchecked(f0: f64, k: f64, beta: f64) -> f64 {
    let lm = (k / f0).ln();
    let e = 1.0 - beta;
    if e == 0.0 {
        lm
    } else {
        f0.powf(e) * (e * lm).exp_m1() / e
    }
}

/// Record of the ν rescaling `t → ν² t`, `α → α/ν`, `ν → 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub nu: f64,
    pub alpha_hat: f64,
    /// Mean-reversion speed in rescaled time, κ/ν².
    pub kappa_hat: f64,
    /// Mean-reversion level in rescaled units, V̄/ν.
    pub vbar_hat: f64,
}

impl Rescaling {
    /// Rescaled maturity ν² T.
    pub fn time(&self, t: f64) -> f64 {
        self.nu * self.nu * t
    }

    /// Physical volatility from a rescaled one.
    pub fn vol(&self, sigma_hat: f64) -> f64 {
        self.nu * sigma_hat
    }

    /// Physical σ₁/σ₀ (per unit time) from the rescaled ratio.
    pub fn ratio1(&self, r1_hat: f64) -> f64 {
        self.nu * self.nu * r1_hat
    }

    /// Physical σ₂/σ₀ (per unit time squared) from the rescaled ratio.
    pub fn ratio2(&self, r2_hat: f64) -> f64 {
        let n2 = self.nu * self.nu;
        n2 * n2 * r2_hat
    }
}

/// Moves to units where ν = 1.
pub fn rescale(params: &SabrParams) -> Result<Rescaling> {
    if params.nu < SMALL_NU {
        return Err(Error::DegenerateVolOfVol {
            nu: params.nu,
            threshold: SMALL_NU,
        });
    }
    let nu = params.nu;
    Ok(Rescaling {
        nu,
        alpha_hat: params.alpha / nu,
        kappa_hat: params.kappa / (nu * nu),
        vbar_hat: params.vbar / nu,
    })
}

/// Geodesic distance in the Poincaré half-plane.
///
/// `acosh(1 + δ)` is evaluated as `ln1p(δ + √(δ(2 + δ)))`, which is exact
/// at coincident points and never sees an argument below one.
pub fn hyperbolic_distance(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    let dx = x2 - x1;
    let dy = y2 - y1;
    let delta = (dx * dx + dy * dy) / (2.0 * y1 * y2);
    acosh1p(delta)
}

/// `acosh(1 + δ)` for `δ ≥ 0`; negative rounding noise is floored at zero.
pub(crate) fn acosh1p(delta: f64) -> f64 {
    let delta = delta.max(0.0);
    (delta + (delta * (2.0 + delta)).sqrt()).ln_1p()
}

/// Terminal volatility minimising the distance from `(0, α̂)` to the line
/// `q = const`.
pub fn vmin(alpha_hat: f64, q: f64, rho: f64) -> f64 {
    (alpha_hat * alpha_hat + 2.0 * rho * alpha_hat * q + q * q).sqrt()
}

/// Distance from `(q, V) = (0, α̂)` to the line `q = const`, i.e. the
/// distance at `V = vmin`.
pub fn min_distance(alpha_hat: f64, q: f64, rho: f64) -> f64 {
    let vm = vmin(alpha_hat, q, rho);
    let s = q + rho * alpha_hat;
    if q.abs() <= alpha_hat {
        // ratio − 1 = (vmin − α̂ + q) / ((1 + ρ) α̂)
        let dv = (2.0 * rho * alpha_hat * q + q * q) / (vm + alpha_hat);
        ((dv + q) / ((1.0 + rho) * alpha_hat)).ln_1p().abs()
    } else {
        // vmin + s = α̂²(1 − ρ²) / (vmin − s) is free of cancellation for s < 0
        let num = if s >= 0.0 {
            vm + s
        } else {
            alpha_hat * alpha_hat * (1.0 - rho * rho) / (vm - s)
        };
        (num / ((1.0 + rho) * alpha_hat)).ln().abs()
    }
}

/// The `acosh` form of [`min_distance`]; kept for cross-checks.
pub fn min_distance_acosh(alpha_hat: f64, q: f64, rho: f64) -> f64 {
    let vm = vmin(alpha_hat, q, rho);
    let arg = (vm - rho * q - rho * rho * alpha_hat) / ((1.0 - rho * rho) * alpha_hat);
    acosh1p(arg - 1.0)
}

/// Distance from `(0, α̂)` to `(q, V)` in the `(q, V)` chart.
pub fn distance_qv(alpha_hat: f64, q: f64, v: f64, rho: f64) -> f64 {
    let dv = v - alpha_hat;
    let delta = (q * q + dv * dv - 2.0 * rho * q * dv) / (2.0 * (1.0 - rho * rho) * alpha_hat * v);
    acosh1p(delta)
}

/// Half-plane coordinates of the point `(q, V)`.
pub fn to_half_plane(q: f64, v: f64, rho: f64) -> (f64, f64) {
    ((q - rho * v) / (1.0 - rho * rho).sqrt(), v)
}

/// Shape of the geodesic through two points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeodesicShape {
    Vertical,
    /// Half circle centred at `(center, 0)`; `t1`, `t2` are `tan(θ/2)` of the
    /// endpoints, θ being the polar angle around the centre.
    Arc {
        center: f64,
        radius: f64,
        t1: f64,
        t2: f64,
    },
}

impl GeodesicShape {
    pub fn is_vertical(&self) -> bool {
        matches!(self, GeodesicShape::Vertical)
    }
}

/// Circle through `(x1, y1)` and `(x2, y2)` orthogonal to the real axis.
pub fn geodesic_circle(x1: f64, y1: f64, x2: f64, y2: f64) -> GeodesicShape {
    geodesic_circle_offset(x1, y1, x2 - x1, y2 - y1)
}

/// [`geodesic_circle`] with the second point given as an offset
/// `(ξ, η)` from the first. Offsets keep full precision when the points
/// lie far from the origin and close to each other.
pub fn geodesic_circle_offset(x1: f64, y1: f64, xi: f64, eta: f64) -> GeodesicShape {
    let x2 = x1 + xi;
    if xi.abs() < VERTICAL_TOL * 1f64.max(x1.abs()).max(x2.abs()) {
        return GeodesicShape::Vertical;
    }
    // centre relative to x1
    let cr = 0.5 * xi + 0.5 * eta * (2.0 * y1 + eta) / xi;
    let radius = y1.hypot(cr);
    GeodesicShape::Arc {
        center: x1 + cr,
        radius,
        t1: half_angle_tan(-cr, y1, radius),
        t2: half_angle_tan(xi - cr, y1 + eta, radius),
    }
}

// tan(θ/2) = √((R − u)/(R + u)) with u = x − X, in a cancellation-free form.
fn half_angle_tan(u: f64, y: f64, radius: f64) -> f64 {
    if u >= 0.0 {
        y / (radius + u)
    } else {
        (radius - u) / y
    }
}

/// Point on a circular geodesic at arclength parameter `s = ln t`.
pub fn arc_point(center: f64, radius: f64, s: f64) -> (f64, f64) {
    (center - radius * s.tanh(), radius / s.cosh())
}

/// Van Vleck–Morette determinant of the hyperbolic plane, `d / sinh d`.
pub fn van_vleck(d: f64) -> f64 {
    if d < 1e-4 {
        let d2 = d * d;
        1.0 - d2 / 6.0 + 7.0 * d2 * d2 / 360.0
    } else {
        d / d.sinh()
    }
}

/// Geodesic from `(q, V) = (0, α̂)` to `(q, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicData {
    pub q: f64,
    pub rho: f64,
    pub alpha_hat: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub shape: GeodesicShape,
    pub d: f64,
    /// Distance-minimising terminal volatility for this `q` (independent of
    /// the end volatility actually used).
    pub vmin: f64,
}

impl GeodesicData {
    /// Geodesic ending at the distance-minimising volatility.
    pub fn at_vmin(alpha_hat: f64, q: f64, rho: f64) -> Self {
        let vm = vmin(alpha_hat, q, rho);
        let mut g = Self::to_point(alpha_hat, q, vm, rho);
        // the closed form is better conditioned than the chord formula
        g.d = min_distance(alpha_hat, q, rho);
        g
    }

    /// Geodesic ending at an arbitrary `(q, V)`.
    pub fn to_point(alpha_hat: f64, q: f64, v: f64, rho: f64) -> Self {
        let (x1, y1) = to_half_plane(0.0, alpha_hat, rho);
        let (x2, y2) = to_half_plane(q, v, rho);
        let shape = if q == 0.0 && v == alpha_hat {
            GeodesicShape::Vertical
        } else {
            geodesic_circle(x1, y1, x2, y2)
        };
        Self {
            q,
            rho,
            alpha_hat,
            x1,
            y1,
            x2,
            y2,
            shape,
            d: distance_qv(alpha_hat, q, v, rho),
            vmin: vmin(alpha_hat, q, rho),
        }
    }

    pub fn is_vertical(&self) -> bool {
        self.shape.is_vertical()
    }
}
