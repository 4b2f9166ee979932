//! Heat kernel coefficients `B`, `C̃` and `D̃` of the SABR model.
//!
//! All quantities are evaluated in ν-rescaled units at the terminal
//! volatility `V_min` that minimises the geodesic distance to the strike.
//! The connection is split into a pure gauge part `½ d ln C(F)` and a
//! remainder `A⁽¹⁾`; the integral `M⁽¹⁾` of the remainder along the geodesic
//! has a closed form through [`connection_g`], and so does the integral of
//! the potential `Q` through [`connection_h`]. The curvature part of `a₁` is
//! integrated numerically along the geodesic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    acosh1p, arc_point, geodesic_circle_offset, q_unchecked, rescale, GeodesicData, GeodesicShape,
    Rescaling,
};
use crate::params::SabrParams;
use crate::quadrature::GaussLegendre;

/// Below this `1 − β` the non-exact connection integral is computed by
/// quadrature of its derivative instead of the closed form.
pub const NEAR_LOGNORMAL: f64 = 1e-3;

/// Cancellation factor above which short arcs are integrated along their
/// chord instead of through the closed forms.
const CHORD_CANCELLATION: f64 = 100.0;

/// Highest Gauss–Legendre order tried before a path average is rejected.
const MAX_QUAD_ORDER: usize = 512;

/// Central-difference stencil for the V-derivatives of `M⁽¹⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// Second-order, three points.
    Three,
    /// Fourth-order, five points.
    Five,
}

/// Numerical settings of the coefficient assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Gauss–Legendre order of the geodesic quadratures (checked against
    /// twice this order).
    pub quad_order: usize,
    /// Largest accepted change between the two quadrature orders.
    pub quad_tol: f64,
    pub stencil: Stencil,
    /// `h = L·ε^p` for the first V-derivative of `M⁽¹⁾`, where
    /// `L = min(max(V_min, 1), F^(1−β)/(1−β))`.
    pub fd_first_exponent: f64,
    /// `h = L·ε^p` for the second V-derivative of `M⁽¹⁾`.
    pub fd_second_exponent: f64,
    /// Relative step (in units of `y`) of the fourth-order stencils used for
    /// the spatial derivatives of `M⁽¹⁾` inside the curvature integral.
    pub spatial_step: f64,
}

impl KernelConfig {
    /// Three-point stencils with the classical `ε^(1/3)`, `ε^(1/4)` steps.
    pub fn three_point() -> Self {
        Self {
            stencil: Stencil::Three,
            fd_first_exponent: 1.0 / 3.0,
            fd_second_exponent: 0.25,
            ..Self::default()
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            quad_order: 16,
            quad_tol: 1e-8,
            stencil: Stencil::Five,
            fd_first_exponent: 0.2,
            fd_second_exponent: 1.0 / 6.0,
            spatial_step: f64::EPSILON.powf(1.0 / 6.0),
        }
    }
}

/// `a = F₀^(1−β)`, `b = (1−β)√(1−ρ²)`, `c = (1−β)ρ`, so that along any path
/// `F^(1−β) = a + b x + c y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
}

impl ConnectionConstants {
    pub fn new(f0: f64, beta: f64, rho: f64) -> Self {
        let e = 1.0 - beta;
        Self {
            a: f0.powf(e),
            b: e * (1.0 - rho * rho).sqrt(),
            c: e * rho,
            beta,
        }
    }

    /// `F^(1−β)` at a half-plane point.
    pub fn f_pow(&self, x: f64, y: f64) -> f64 {
        self.a + self.b * x + self.c * y
    }
}

/// Relative width of the band around a vanishing discriminant treated as a
/// double root.
const DOUBLE_ROOT_TOL: f64 = 1e-10;

/// Series in `Δ/u²` are used below this ratio.
const TAIL_SERIES: f64 = 0.05;

/// Which primitive of `1/P(t)` applies, by the sign of
/// `Δ = (1−β)²R² − (a+bX)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Atan(f64),
    Double,
    Tanh(f64),
}

/// `P(t) = (1 + t²) F^(1−β)` along a circular geodesic:
/// `P(t) = (a+b(X−R)) t² + 2cR t + (a+b(X+R))`.
#[derive(Debug, Clone, Copy)]
struct ArcQuadratic {
    lead: f64,
    lin_half: f64,
    constant: f64,
    abx: f64,
    disc: f64,
    branch: Branch,
}

impl ArcQuadratic {
    fn new(consts: &ConnectionConstants, center: f64, radius: f64) -> Self {
        let abx = consts.a + consts.b * center;
        let e = 1.0 - consts.beta;
        let disc = (e * radius - abx) * (e * radius + abx);
        let branch = if disc.abs() < DOUBLE_ROOT_TOL * abx * abx {
            Branch::Double
        } else if disc < 0.0 {
            Branch::Atan((-disc).sqrt())
        } else {
            Branch::Tanh(disc.sqrt())
        };
        Self {
            lead: consts.a + consts.b * (center - radius),
            lin_half: consts.c * radius,
            constant: consts.a + consts.b * (center + radius),
            abx,
            disc,
            branch,
        }
    }

    fn p(&self, t: f64) -> f64 {
        (self.lead * t + 2.0 * self.lin_half) * t + self.constant
    }

    fn u(&self, t: f64) -> f64 {
        self.lead * t + self.lin_half
    }

    /// The substitution `u = A t + cR` needs `A` away from zero.
    fn is_degenerate(&self) -> bool {
        self.lead.abs() < 1e-8 * self.abx.abs().max(self.lin_half.abs())
    }

    /// Primitive of `1/P(t)` as printed, one expression per branch.
    fn inv_primitive(&self, t: f64) -> f64 {
        let u = self.u(t);
        match self.branch {
            Branch::Atan(e) => (u / e).atan() / e,
            Branch::Double => -1.0 / u,
            Branch::Tanh(s) => -tanh_ext_inv(u / s) / s,
        }
    }

    // ∫ du/(u² − Δ) normalised to vanish as |u| → ∞. Continuous in Δ through
    // zero; for Δ < 0 it jumps by π/√−Δ at u = 0, see `jump`.
    fn l_tail(&self, u: f64) -> f64 {
        let w = self.disc / (u * u);
        match self.branch {
            Branch::Double => -1.0 / u,
            _ if w.abs() <= TAIL_SERIES => {
                let mut sum = 0.0;
                let mut pow = 1.0;
                for n in 0..60 {
                    let term = pow / (2 * n + 1) as f64;
                    sum += term;
                    if term.abs() < 1e-17 * sum.abs() {
                        break;
                    }
                    pow *= w;
                }
                -sum / u
            }
            Branch::Atan(e) => -(e / u).atan() / e,
            Branch::Tanh(s) => {
                if u.abs() > s {
                    -(s / u).atanh() / s
                } else {
                    -(u / s).atanh() / s
                }
            }
        }
    }

    // ∫ du/(u² − Δ)² normalised to vanish as |u| → ∞.
    fn s2_tail(&self, u: f64) -> f64 {
        let w = self.disc / (u * u);
        let u3 = u * u * u;
        match self.branch {
            Branch::Double => -1.0 / (3.0 * u3),
            _ if w.abs() <= TAIL_SERIES => {
                let mut sum = 0.0;
                let mut pow = 1.0;
                for n in 0..60 {
                    let term = (n + 1) as f64 * pow / (2 * n + 3) as f64;
                    sum += term;
                    if term.abs() < 1e-17 * sum.abs() {
                        break;
                    }
                    pow *= w;
                }
                -sum / u3
            }
            _ => -(u / (u * u - self.disc) + self.l_tail(u)) / (2.0 * self.disc),
        }
    }

    // Offset restoring continuity of the tail primitives across u = 0.
    fn jump(&self, u1: f64, u2: f64) -> f64 {
        match self.branch {
            Branch::Atan(e) if u1.signum() != u2.signum() => {
                0.5 * (u2.signum() - u1.signum()) * std::f64::consts::PI / e
            }
            _ => 0.0,
        }
    }

    /// `∫ dt / P(t)` between `t1` and `t2`.
    fn inv_integral(&self, t1: f64, t2: f64) -> f64 {
        let (u1, u2) = (self.u(t1), self.u(t2));
        self.l_tail(u2) - self.l_tail(u1) + self.jump(u1, u2)
    }

    /// `∫ t dt / P(t)²` between `t1` and `t2`.
    fn t_over_p2_integral(&self, t1: f64, t2: f64) -> f64 {
        let (u1, u2) = (self.u(t1), self.u(t2));
        // t/P² dt = (u − cR) du / (u² − Δ)²
        let first = 0.5 / (self.lead * self.p(t1)) - 0.5 / (self.lead * self.p(t2));
        let mut s2 = self.s2_tail(u2) - self.s2_tail(u1);
        let jump = self.jump(u1, u2);
        if jump != 0.0 {
            s2 -= jump / (2.0 * self.disc);
        }
        first - self.lin_half * s2
    }

    /// `G(t₂) − G(t₁)`.
    fn g_increment(&self, t1: f64, t2: f64) -> f64 {
        ((t2 - t1) / (1.0 + t1 * t2)).atan() - self.abx * self.inv_integral(t1, t2)
    }

    fn h(&self, t: f64) -> f64 {
        (self.constant + self.lin_half * t) / self.p(t) + self.lin_half * self.inv_primitive(t)
    }

    fn g(&self, t: f64) -> f64 {
        t.atan() - self.abx * self.inv_primitive(t)
    }
}

/// `½ ln |(1 + z)/(1 − z)|`, the extension of `atanh` outside `]−1, 1[`.
pub fn tanh_ext_inv(z: f64) -> f64 {
    0.5 * ((1.0 + z) / (1.0 - z)).abs().ln()
}

/// `G(t)`, whose increment between the endpoints gives the non-exact part of
/// the connection integral for β < 1.
pub fn connection_g(t: f64, consts: &ConnectionConstants, center: f64, radius: f64) -> f64 {
    ArcQuadratic::new(consts, center, radius).g(t)
}

/// `H(t)`, whose increment divided by twice the discriminant gives
/// `∫ t dt / P(t)²`, hence the integral of `Q` along the geodesic.
pub fn connection_h(t: f64, consts: &ConnectionConstants, center: f64, radius: f64) -> f64 {
    ArcQuadratic::new(consts, center, radius).h(t)
}

/// Discriminant `(1−β)²R² − (a+bX)²` selecting the branch of `G` and `H`.
pub fn discriminant(consts: &ConnectionConstants, center: f64, radius: f64) -> f64 {
    ArcQuadratic::new(consts, center, radius).disc
}

/// Curvature (metric) part of `a₁`: `−⅛ [1 + (coth d − 1/d)/d]`.
pub fn a1_r(d: f64) -> f64 {
    -0.125 * (1.0 + coth_term(d))
}

/// `(coth d − 1/d)/d`, equal to 1/3 at zero.
pub(crate) fn coth_term(d: f64) -> f64 {
    if d < 1e-3 {
        let d2 = d * d;
        1.0 / 3.0 - d2 / 45.0 + 2.0 * d2 * d2 / 945.0
    } else {
        (1.0 / d.tanh() - 1.0 / d) / d
    }
}

/// Derivatives of `B = ½ d²` in the terminal volatility at `V_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BLadder {
    /// `d''`; infinite exactly at the money.
    pub ddpp: f64,
    pub bpp: f64,
    pub b3_over_bpp: f64,
    pub b4_over_bpp: f64,
}

/// `d''`, `B'' = d d''`, `B⁽³⁾/B''` and `B⁽⁴⁾/B''` at `V = V_min`.
pub fn b_derivative_ladder(geo: &GeodesicData) -> BLadder {
    let d = geo.d;
    let vm = geo.vmin;
    let g = geo.alpha_hat * (1.0 - geo.rho * geo.rho) * vm;
    let delta = crate::geometry::van_vleck(d);
    // d''·(coth d − 1/d) = coth_term(d)·Δ(d)/g stays finite at d = 0
    let ddpp_coth = coth_term(d) * delta / g;
    BLadder {
        ddpp: if d == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (g * d.sinh())
        },
        bpp: delta / g,
        b3_over_bpp: -3.0 / vm,
        b4_over_bpp: 12.0 / (vm * vm) - 3.0 * ddpp_coth,
    }
}

/// Building blocks of `C̃` and `D̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParts {
    /// Full connection integral `M`.
    pub m: f64,
    /// Non-gauge part `M⁽¹⁾` (including the mean-reversion shift).
    pub m1: f64,
    pub m1p: f64,
    pub m1pp: f64,
    pub a1q: f64,
    pub a1r: f64,
    pub a1a: f64,
    pub ladder: BLadder,
    /// Mean-reversion shift of `M` (zero without mean reversion).
    pub delta_m: f64,
    /// Mean-reversion shift of `a₁^(Q)` (zero without mean reversion).
    pub delta_a1q: f64,
}

/// Heat kernel coefficients at one strike, in rescaled units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCoefficients {
    pub strike: f64,
    pub geodesic: GeodesicData,
    pub b: f64,
    pub ctilde: f64,
    /// `C̃ + ln α̂ + ½β ln(F₀K) = −½ ln(V_min/α̂) + M⁽¹⁾`, free of the large
    /// logarithms that cancel against the proxy when `ν` is small.
    pub ctilde_local: f64,
    pub dtilde: f64,
    pub parts: KernelParts,
}

/// Shift of `M` and `a₁^(Q)` caused by mean reversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanReversionAdjustment {
    pub delta_m: f64,
    pub delta_a1q: f64,
}

/// Kernel coefficient assembly for one parameter set.
#[derive(Debug, Clone)]
pub struct SabrKernel {
    params: SabrParams,
    scaling: Rescaling,
    consts: ConnectionConstants,
    config: KernelConfig,
    rule: GaussLegendre,
    rule_check: GaussLegendre,
    start: (f64, f64),
}

impl SabrKernel {
    pub fn new(params: &SabrParams) -> Result<Self> {
        Self::with_config(params, KernelConfig::default())
    }

    pub fn with_config(params: &SabrParams, config: KernelConfig) -> Result<Self> {
        params.validate()?;
        let scaling = rescale(params)?;
        let consts = ConnectionConstants::new(params.f0, params.beta, params.rho);
        let sr = (1.0 - params.rho * params.rho).sqrt();
        let start = (-params.rho * scaling.alpha_hat / sr, scaling.alpha_hat);
        Ok(Self {
            params: *params,
            scaling,
            consts,
            config,
            rule: GaussLegendre::new(config.quad_order),
            rule_check: GaussLegendre::new(2 * config.quad_order),
            start,
        })
    }

    pub fn params(&self) -> &SabrParams {
        &self.params
    }

    pub fn scaling(&self) -> &Rescaling {
        &self.scaling
    }

    pub fn constants(&self) -> &ConnectionConstants {
        &self.consts
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    /// Starting point `(x₁, y₁)` of every geodesic.
    pub fn start(&self) -> (f64, f64) {
        self.start
    }

    fn sqrt_one_minus_rho2(&self) -> f64 {
        (1.0 - self.params.rho * self.params.rho).sqrt()
    }

    /// `q` of a strike.
    pub fn q(&self, strike: f64) -> f64 {
        q_unchecked(self.params.f0, strike, self.params.beta)
    }

    /// Geodesic from the initial state to `(K, V_min)`.
    pub fn geodesic(&self, strike: f64) -> GeodesicData {
        GeodesicData::at_vmin(self.scaling.alpha_hat, self.q(strike), self.params.rho)
    }

    /// Half-plane point of `(q, V)`.
    fn point(&self, q: f64, v: f64) -> (f64, f64) {
        ((q - self.params.rho * v) / self.sqrt_one_minus_rho2(), v)
    }

    /// `M⁽¹⁾` (SABR part only) from the start to a half-plane point.
    pub fn m1_sabr_to(&self, x: f64, y: f64) -> f64 {
        let (x1, y1) = self.start;
        self.m1_sabr_offset(x - x1, y - y1)
    }

    /// `M⁽¹⁾` (SABR part only) to the point offset by `(ξ, η)` from the
    /// start.
    pub fn m1_sabr_offset(&self, xi: f64, eta: f64) -> f64 {
        let beta = self.params.beta;
        let rho = self.params.rho;
        let (x1, y1) = self.start;
        if beta == 0.0 || rho == 0.0 && beta == 1.0 {
            return 0.0;
        }
        if beta == 1.0 {
            return 0.5 * rho * (rho * xi / self.sqrt_one_minus_rho2() - eta);
        }
        match geodesic_circle_offset(x1, y1, xi, eta) {
            GeodesicShape::Vertical => {
                // A ∝ dx vanishes, so M⁽¹⁾ = −(β/2) ln(F/F₀)
                let c = &self.consts;
                let rel = (c.b * xi + c.c * eta) / c.a;
                -0.5 * beta / (1.0 - beta) * rel.ln_1p()
            }
            GeodesicShape::Arc {
                center,
                radius,
                t1,
                t2,
            } => {
                let quad = ArcQuadratic::new(&self.consts, center, radius);
                let sr = self.sqrt_one_minus_rho2();
                if 1.0 - beta < NEAR_LOGNORMAL {
                    // G' = R(−b t² + 2c t + b)/((1 + t²) P) carries an explicit
                    // factor 1 − β which the closed form loses to cancellation
                    let dg = self.arc_integral(t1, t2, |t| {
                        radius * ((2.0 * rho - sr * t) * t + sr) / ((1.0 + t * t) * quad.p(t))
                    });
                    return -rho * beta / sr * dg;
                }
                if quad.is_degenerate() {
                    let dg = self.arc_integral(t1, t2, |t| {
                        radius * ((2.0 * rho - sr * t) * t + sr) / ((1.0 + t * t) * quad.p(t))
                    });
                    return -rho * beta / sr * dg;
                }
                -rho * beta / ((1.0 - beta) * sr) * quad.g_increment(t1, t2)
            }
        }
    }

    /// `∫ f(t) dt` over `[t1, t2]`, by Gauss–Legendre panels in `ln t`.
    fn arc_integral<F: Fn(f64) -> f64>(&self, t1: f64, t2: f64, f: F) -> f64 {
        let lo = t1.ln();
        let hi = t2.ln();
        let panels = ((hi - lo).abs() / 0.5).ceil().max(1.0) as usize;
        let w = (hi - lo) / panels as f64;
        (0..panels)
            .map(|i| {
                let a = lo + w * i as f64;
                self.rule.integrate(a, a + w, |s| {
                    let t = s.exp();
                    t * f(t)
                })
            })
            .sum()
    }

    /// Mean-reversion shift of the connection integral to a half-plane point.
    pub fn delta_m_to(&self, x: f64, y: f64) -> f64 {
        let (x1, y1) = self.start;
        self.delta_m_offset(x - x1, y - y1)
    }

    fn delta_m_offset(&self, xi: f64, eta: f64) -> f64 {
        let kappa = self.scaling.kappa_hat;
        if kappa == 0.0 {
            return 0.0;
        }
        let vbar = self.scaling.vbar_hat;
        let ah = self.scaling.alpha_hat;
        let rho = self.params.rho;
        let (x1, y1) = self.start;
        let y = y1 + eta;
        let exact = kappa * ((y / ah).ln() + vbar / y - vbar / ah);
        let along_x = match geodesic_circle_offset(x1, y1, xi, eta) {
            GeodesicShape::Vertical => 0.0,
            GeodesicShape::Arc { radius, t1, t2, .. } => {
                rho * kappa / self.sqrt_one_minus_rho2()
                    * (2.0 * (t2.atan() - t1.atan()) - vbar / radius * (t2 / t1).ln())
            }
        };
        exact + along_x
    }

    /// `M⁽¹⁾` including the mean-reversion shift.
    pub fn m1_to(&self, x: f64, y: f64) -> f64 {
        let (x1, y1) = self.start;
        self.m1_offset(x - x1, y - y1)
    }

    /// [`Self::m1_to`] at the point offset by `(ξ, η)` from the start.
    pub fn m1_offset(&self, xi: f64, eta: f64) -> f64 {
        self.m1_sabr_offset(xi, eta) + self.delta_m_offset(xi, eta)
    }

    /// `M⁽¹⁾` to `(q, V)`.
    pub fn m1_qv(&self, q: f64, v: f64) -> f64 {
        let (x, y) = self.point(q, v);
        self.m1_to(x, y)
    }

    /// Full connection integral `M = (β/2) ln(K/F₀) + M⁽¹⁾` to `(K, V)`.
    pub fn connection_m(&self, strike: f64, v: f64) -> f64 {
        let q = self.q(strike);
        if q == 0.0 && v == self.scaling.alpha_hat {
            return 0.0;
        }
        0.5 * self.params.beta * (strike / self.params.f0).ln() + self.m1_qv(q, v)
    }

    /// First and second derivatives of `M⁽¹⁾(q, V)` in `V` by central
    /// differences.
    pub fn m1_v_derivatives(&self, q: f64, v: f64) -> (f64, f64) {
        let (h1, h2) = self.m1_v_steps(q, v);
        self.m1_v_derivatives_with_steps(q, v, h1, h2)
    }

    /// Configured steps `(h₁, h₂)` of the first and second V-derivative.
    pub fn m1_v_steps(&self, q: f64, v: f64) -> (f64, f64) {
        let scale = self.v_step_scale(q, v);
        (
            scale * f64::EPSILON.powf(self.config.fd_first_exponent),
            scale * f64::EPSILON.powf(self.config.fd_second_exponent),
        )
    }

    /// Length over which `M⁽¹⁾` varies near `(q, V)`: `max(V, 1)`, capped
    /// by `F^(1−β)/(1−β)`.
    fn v_step_scale(&self, q: f64, v: f64) -> f64 {
        let e = 1.0 - self.params.beta;
        let (xi, eta) = self.qv_offset(q, v);
        let fp = self.f_pow_offset(xi, eta);
        if e > 0.0 && fp > 0.0 {
            v.max(1.0).min(fp / e)
        } else {
            v.max(1.0)
        }
    }

    /// As [`Self::m1_v_derivatives`] with explicit steps.
    pub fn m1_v_derivatives_with_steps(&self, q: f64, v: f64, h1: f64, h2: f64) -> (f64, f64) {
        self.v_stencil(|dv| self.m1_qv(q, v + dv), h1, h2)
    }

    /// Stencil derivatives at zero of `m(dv)`.
    fn v_stencil<M: Fn(f64) -> f64>(&self, m: M, h1: f64, h2: f64) -> (f64, f64) {
        let v = 0.0;
        match self.config.stencil {
            Stencil::Three => (
                (m(v + h1) - m(v - h1)) / (2.0 * h1),
                (m(v + h2) - 2.0 * m(v) + m(v - h2)) / (h2 * h2),
            ),
            Stencil::Five => (
                (8.0 * (m(v + h1) - m(v - h1)) - (m(v + 2.0 * h1) - m(v - 2.0 * h1))) / (12.0 * h1),
                (16.0 * (m(v + h2) + m(v - h2))
                    - (m(v + 2.0 * h2) + m(v - 2.0 * h2))
                    - 30.0 * m(v))
                    / (12.0 * h2 * h2),
            ),
        }
    }

    /// The scalar potential `Q` at a half-plane point (rescaled units).
    pub fn q_potential(&self, x: f64, y: f64) -> f64 {
        self.q_potential_sabr(x, y) + self.delta_q_potential(x, y)
    }

    fn q_at(&self, fp: f64, y: f64) -> f64 {
        let sabr = if self.params.beta == 0.0 {
            0.0
        } else {
            self.q_prefactor() * y * y / (fp * fp)
        };
        sabr + self.delta_q_at(fp, y)
    }

    fn q_potential_sabr(&self, x: f64, y: f64) -> f64 {
        let beta = self.params.beta;
        if beta == 0.0 {
            return 0.0;
        }
        let fp = self.consts.f_pow(x, y);
        self.q_prefactor() * y * y / (fp * fp)
    }

    fn q_prefactor(&self) -> f64 {
        let beta = self.params.beta;
        let rho2 = self.params.rho * self.params.rho;
        0.25 * beta * (1.0 - beta + beta / (2.0 * (1.0 - rho2)))
    }

    fn delta_q_potential(&self, x: f64, y: f64) -> f64 {
        self.delta_q_at(self.consts.f_pow(x, y), y)
    }

    fn delta_q_at(&self, fp: f64, y: f64) -> f64 {
        let kappa = self.scaling.kappa_hat;
        if kappa == 0.0 {
            return 0.0;
        }
        let vbar = self.scaling.vbar_hat;
        let rho = self.params.rho;
        let beta = self.params.beta;
        let one_m_r2 = 1.0 - rho * rho;
        let dv = y - vbar;
        0.5 * kappa * kappa * dv * dv / (y * y * one_m_r2) + 0.5 * kappa
            - kappa * vbar / y
            - 0.5 * rho * beta * kappa * dv / (one_m_r2 * fp)
    }

    /// `a₁^(Q) = −(1/d) ∫ Q ds` for the SABR potential, closed form.
    pub fn a1_q(&self, geo: &GeodesicData) -> f64 {
        let beta = self.params.beta;
        if beta == 0.0 {
            return 0.0;
        }
        let rho = self.params.rho;
        match geo.shape {
            GeodesicShape::Vertical => {
                if geo.d == 0.0 {
                    -self.q_potential_sabr(geo.x1, geo.y1)
                } else {
                    // integrate in s = ln y along the vertical line
                    let s2 = (geo.y2 / geo.y1).ln();
                    let x = geo.x1;
                    let y1 = geo.y1;
                    let total = self
                        .rule_check
                        .integrate(0.0, s2, |s| self.q_potential_sabr(x, y1 * s.exp()));
                    -total / s2
                }
            }
            GeodesicShape::Arc {
                center,
                radius,
                t1,
                t2,
            } => {
                if beta == 1.0 {
                    return -radius * (geo.x2 - geo.x1).abs() / (8.0 * (1.0 - rho * rho) * geo.d);
                }
                let quad = ArcQuadratic::new(&self.consts, center, radius);
                let di = if quad.is_degenerate() {
                    self.arc_integral(t1, t2, |t| t / quad.p(t).powi(2))
                } else {
                    quad.t_over_p2_integral(t1, t2)
                };
                -4.0 * self.q_prefactor() * radius * radius * di / (t2 / t1).ln()
            }
        }
    }

    /// Mean-reversion adjustments of `M` and `a₁^(Q)` along a geodesic.
    pub fn mean_reversion_adjustments(
        &self,
        geo: &GeodesicData,
    ) -> Result<MeanReversionAdjustment> {
        if self.scaling.kappa_hat == 0.0 {
            return Ok(MeanReversionAdjustment {
                delta_m: 0.0,
                delta_a1q: 0.0,
            });
        }
        let delta_m = self.delta_m_to(geo.x2, geo.y2);
        let delta_a1q = -self.path_average(geo, 1.0, |x, y| self.delta_q_potential(x, y))?;
        Ok(MeanReversionAdjustment { delta_m, delta_a1q })
    }

    /// Average of `f` over the geodesic in arclength, `(1/d) ∫ f ds`, with
    /// the order-doubling convergence check relative to `max(|result|,
    /// scale)`.
    fn path_average<F: Fn(f64, f64) -> f64>(&self, geo: &GeodesicData, scale: f64, f: F) -> Result<f64> {
        if geo.d == 0.0 {
            return Ok(f(geo.x1, geo.y1));
        }
        let d = geo.d;
        let point = |s: f64| path_point(geo, s);
        let lo = self.rule.integrate(0.0, d, |s| {
            let (x, y) = point(s);
            f(x, y)
        }) / d;
        let hi = self.rule_check.integrate(0.0, d, |s| {
            let (x, y) = point(s);
            f(x, y)
        }) / d;
        let accept = |lo: f64, hi: f64| hi.is_finite() && (hi - lo).abs() <= self.config.quad_tol * hi.abs().max(scale);
        if accept(lo, hi) {
            return Ok(hi);
        }
        // integrands with a sharp feature along the path: keep doubling
        let (mut prev, mut n) = (hi, 2 * self.rule_check.order());
        while n <= MAX_QUAD_ORDER {
            let next = GaussLegendre::new(n).integrate(0.0, d, |s| {
                let (x, y) = point(s);
                f(x, y)
            }) / d;
            if accept(prev, next) {
                return Ok(next);
            }
            prev = next;
            n *= 2;
        }
        Err(Error::Quadrature {
            estimate: prev,
            change: prev - lo,
        })
    }

    /// Non-gauge part of the connection 1-form at a half-plane point,
    /// `(A_x, A_y)`, and its divergence `∂ₓAₓ + ∂ᵧAᵧ`.
    pub fn a1_form(&self, x: f64, y: f64) -> (f64, f64, f64) {
        self.form_at(self.consts.f_pow(x, y), y)
    }

    fn form_at(&self, fp: f64, y: f64) -> (f64, f64, f64) {
        let beta = self.params.beta;
        let rho = self.params.rho;
        let sr = self.sqrt_one_minus_rho2();
        let cp = if beta == 0.0 { 0.0 } else { beta / fp };
        let mut ax = 0.5 * rho * rho / sr * cp;
        let mut ay = -0.5 * rho * cp;
        let mut div = 0.0;
        let kappa = self.scaling.kappa_hat;
        if kappa != 0.0 {
            let vbar = self.scaling.vbar_hat;
            let w = kappa * (y - vbar) / (y * y);
            ax -= rho / sr * w;
            ay += w;
            div += kappa * (2.0 * vbar - y) / (y * y * y);
        }
        (ax, ay, div)
    }

    /// `F^(1−β)` at an offset from the start, without the cancellation of
    /// `a + bx + cy` at large coordinates.
    fn f_pow_offset(&self, xi: f64, eta: f64) -> f64 {
        self.consts.a + self.consts.b * xi + self.consts.c * eta
    }

    /// Half the angle subtended by the geodesic arc to the offset `(ξ, η)`
    /// and the side of the chord it bulges to.
    fn chord_arc(&self, xi: f64, eta: f64) -> (f64, f64) {
        let (x1, y1) = self.start;
        match geodesic_circle_offset(x1, y1, xi, eta) {
            GeodesicShape::Vertical => (0.0, 0.0),
            GeodesicShape::Arc { center, radius, .. } => {
                let l = xi.hypot(eta);
                let half = (0.5 * l / radius).min(1.0).asin();
                // centre relative to the chord midpoint against the normal
                // (−η, ξ)/l
                let (cx, cy) = (center - x1 - 0.5 * xi, -y1 - 0.5 * eta);
                let side = if -eta * cx + xi * cy > 0.0 { -1.0 } else { 1.0 };
                (half, side)
            }
        }
    }

    /// Whether [`Self::m1_chord`] applies: a short arc along which
    /// `F^(1−β)` stays within a factor two of its start value.
    fn chord_applies(&self, xi: f64, eta: f64) -> bool {
        let c = &self.consts;
        let (half, _) = self.chord_arc(xi, eta);
        half <= 0.25 && xi.hypot(eta) * (c.b.abs() + c.c.abs()) <= 0.5 * c.a
    }

    /// Point and velocity along the arc to `(ξ, η)`, both as offsets from
    /// the start, for `s ∈ [0, 1]`.
    fn chord_path(&self, xi: f64, eta: f64) -> impl Fn(f64) -> (f64, f64, f64, f64) {
        let l = xi.hypot(eta);
        let (ux, uy) = (xi / l, eta / l);
        let (half, side) = self.chord_arc(xi, eta);
        move |s| {
            // γ(s) − γ(0) = l·sin(sθ)/sin θ · rot(u, side·(1−s)θ)
            let (sn, cs) = (side * (1.0 - s) * half).sin_cos();
            let (dx, dy) = (ux * cs - uy * sn, ux * sn + uy * cs);
            let (amp, damp) = if half == 0.0 {
                (s * l, l)
            } else {
                let k = l / half.sin();
                (k * (s * half).sin(), k * half * (s * half).cos())
            };
            let turn = amp * side * half;
            (amp * dx, amp * dy, damp * dx + turn * dy, damp * dy - turn * dx)
        }
    }

    /// `M⁽¹⁾` as the line integral of the connection form along the arc,
    /// parametrised from its chord so that the endpoint offset is exact.
    /// Accurate to rounding relative to `M⁽¹⁾` itself, where the closed form
    /// loses digits to coordinates far from the real axis.
    pub fn m1_chord(&self, xi: f64, eta: f64) -> f64 {
        if xi == 0.0 && eta == 0.0 {
            return 0.0;
        }
        let y1 = self.start.1;
        let path = self.chord_path(xi, eta);
        self.rule_check.integrate(0.0, 1.0, |s| {
            let (px, py, vx, vy) = path(s);
            let (ax, ay, _) = self.form_at(self.f_pow_offset(px, py), y1 + py);
            ax * vx + ay * vy
        })
    }

    /// `a₁^(Q)` by quadrature along the chord-parametrised arc to `(ξ, η)`.
    pub fn a1_q_chord(&self, xi: f64, eta: f64) -> f64 {
        let y1 = self.start.1;
        if xi == 0.0 && eta == 0.0 {
            return -self.q_at(self.consts.a, y1);
        }
        let path = self.chord_path(xi, eta);
        let num = self.rule_check.integrate(0.0, 1.0, |s| {
            let (px, py, vx, vy) = path(s);
            let y = y1 + py;
            vx.hypot(vy) / y * self.q_at(self.f_pow_offset(px, py), y)
        });
        let len = self.rule_check.integrate(0.0, 1.0, |s| {
            let (_, py, vx, vy) = path(s);
            vx.hypot(vy) / (y1 + py)
        });
        -num / len
    }

    /// Closed forms lose about `log₁₀` of this many digits to cancellation
    /// between the half-plane coordinates and `F^(1−β)`.
    fn cancellation(&self) -> f64 {
        let c = &self.consts;
        (c.b.abs() + c.c.abs()) * self.start.0.hypot(self.start.1) / c.a
    }

    /// Whether the coefficient assembly evaluates `M⁽¹⁾` and `a₁^(Q)` by
    /// chord quadrature instead of the closed forms.
    fn prefers_chord(&self, xi: f64, eta: f64) -> bool {
        self.params.beta != 1.0 && self.cancellation() > CHORD_CANCELLATION && self.chord_applies(xi, eta)
    }

    /// Offset from the start of the half-plane point of `(q, V)`.
    fn qv_offset(&self, q: f64, v: f64) -> (f64, f64) {
        self.q_eta_offset(q, v - self.scaling.alpha_hat)
    }

    fn q_eta_offset(&self, q: f64, eta: f64) -> (f64, f64) {
        ((q - self.params.rho * eta) / self.sqrt_one_minus_rho2(), eta)
    }

    /// Integrand of the connection part of `a₁`:
    /// `y² [−ΔM⁽¹⁾ + (∂ₓM⁽¹⁾ − Aₓ)² + (∂ᵧM⁽¹⁾ − Aᵧ)² + div A]`.
    pub fn curvature_integrand(&self, x: f64, y: f64) -> f64 {
        let fp = self.consts.f_pow(x, y);
        let e = 1.0 - self.params.beta;
        let mut scale = y;
        if e > 0.0 {
            scale = scale.min(0.5 * fp / e);
        }
        let h = scale * self.config.spatial_step;
        // stencil on offsets from the start, exact even when |x|, y ≫ h
        let (xi, eta) = (x - self.start.0, y - self.start.1);
        let chord = self.params.beta != 1.0 && self.chord_applies(xi, eta);
        let m = |dx: f64, dy: f64| {
            if chord {
                self.m1_chord(xi + dx, eta + dy)
            } else {
                self.m1_offset(xi + dx, eta + dy)
            }
        };
        let m0 = m(0.0, 0.0);
        let (mxp, mxm, mxp2, mxm2) = (m(h, 0.0), m(-h, 0.0), m(2.0 * h, 0.0), m(-2.0 * h, 0.0));
        let (myp, mym, myp2, mym2) = (m(0.0, h), m(0.0, -h), m(0.0, 2.0 * h), m(0.0, -2.0 * h));
        let dx = (8.0 * (mxp - mxm) - (mxp2 - mxm2)) / (12.0 * h);
        let dy = (8.0 * (myp - mym) - (myp2 - mym2)) / (12.0 * h);
        let dxx = (16.0 * (mxp + mxm) - (mxp2 + mxm2) - 30.0 * m0) / (12.0 * h * h);
        let dyy = (16.0 * (myp + mym) - (myp2 + mym2) - 30.0 * m0) / (12.0 * h * h);
        let (ax, ay, div) = self.form_at(self.f_pow_offset(xi, eta), y);
        y * y * (-(dxx + dyy) + (dx - ax).powi(2) + (dy - ay).powi(2) + div)
    }

    /// Connection part of `a₁`, `(1/2d) ∫ ds (curvature integrand)`.
    pub fn a1_a(&self, geo: &GeodesicData) -> Result<f64> {
        if self.params.beta == 1.0 && self.scaling.kappa_hat == 0.0 {
            return Ok(0.0);
        }
        if self.params.beta == 0.0 && self.scaling.kappa_hat == 0.0 {
            return Ok(0.0);
        }
        // the bracket of the integrand is a difference of terms of size
        // |A|², amplified by y²
        let (x1, y1) = self.start;
        let (ax, ay, _) = self.a1_form(x1, y1);
        let scale = (y1 * y1 * (ax * ax + ay * ay)).max(1.0);
        Ok(0.5 * self.path_average(geo, scale, |x, y| self.curvature_integrand(x, y))?)
    }

    /// `B`, `C̃`, `D̃` and their parts at one strike.
    pub fn coefficients(&self, strike: f64) -> Result<KernelCoefficients> {
        if !(strike > 0.0) {
            return Err(crate::error::invalid(
                "strike",
                format!("must be positive, got {strike}"),
            ));
        }
        let p = &self.params;
        let ah = self.scaling.alpha_hat;
        let sr = self.sqrt_one_minus_rho2();
        let geo = self.geodesic(strike);
        let q = geo.q;
        let vm = geo.vmin;
        let d = geo.d;

        let ladder = b_derivative_ladder(&geo);
        let mr = self.mean_reversion_adjustments(&geo)?;
        // V_min − α̂ without cancellation
        let dv = (2.0 * p.rho * ah + q) * q / (vm + ah);
        let (xi, eta) = self.q_eta_offset(q, dv);
        let chord = self.prefers_chord(xi, eta);
        let m1 = if geo.is_vertical() && d == 0.0 {
            0.0
        } else if chord {
            self.m1_chord(xi, eta)
        } else {
            self.m1_qv(q, vm)
        };
        let m = if q == 0.0 && d == 0.0 {
            0.0
        } else {
            0.5 * p.beta * (strike / p.f0).ln() + m1
        };
        let (m1p, m1pp) = if p.beta == 1.0 && self.scaling.kappa_hat == 0.0 {
            (-p.rho / (2.0 * (1.0 - p.rho * p.rho)), 0.0)
        } else if chord {
            let scale = self.v_step_scale(q, vm);
            let h1 = scale * f64::EPSILON.powf(self.config.fd_first_exponent);
            let h2 = scale * f64::EPSILON.powf(self.config.fd_second_exponent);
            self.v_stencil(|dv| self.m1_chord(xi - p.rho * dv / sr, eta + dv), h1, h2)
        } else {
            self.m1_v_derivatives(q, vm)
        };
        let a1q = if chord { self.a1_q_chord(xi, eta) } else { self.a1_q(&geo) } + mr.delta_a1q;
        let a1r = a1_r(d);
        let a1a = self.a1_a(&geo)?;

        let ctilde = -0.5 * (ah * p.f0.powf(p.beta) * vm * strike.powf(p.beta)).ln() + m1;
        let ctilde_local = -0.5 * (dv / ah).ln_1p() + m1;
        let dtilde = -a1q - a1a
            + 0.125
            + (m1pp - m1p * m1p + 3.0 * m1p / vm - 0.75 / (vm * vm)) / (2.0 * ladder.bpp);

        Ok(KernelCoefficients {
            strike,
            geodesic: geo,
            b: 0.5 * d * d,
            ctilde,
            ctilde_local,
            dtilde,
            parts: KernelParts {
                m,
                m1,
                m1p,
                m1pp,
                a1q,
                a1r,
                a1a,
                ladder,
                delta_m: mr.delta_m,
                delta_a1q: mr.delta_a1q,
            },
        })
    }
}

/// Point at arclength `s` from the start along a geodesic.
pub fn path_point(geo: &GeodesicData, s: f64) -> (f64, f64) {
    match geo.shape {
        GeodesicShape::Vertical => {
            let dir = if geo.y2 >= geo.y1 { 1.0 } else { -1.0 };
            (geo.x1, geo.y1 * (dir * s).exp())
        }
        GeodesicShape::Arc {
            center,
            radius,
            t1,
            t2,
        } => {
            let l1 = t1.ln();
            let dir = if t2 >= t1 { 1.0 } else { -1.0 };
            arc_point(center, radius, l1 + dir * s)
        }
    }
}

/// Geodesic distance between two half-plane points, re-exported for the
/// oracles that re-derive kernel quantities.
pub fn distance(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    let dx = x2 - x1;
    let dy = y2 - y1;
    acosh1p((dx * dx + dy * dy) / (2.0 * y1 * y2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> SabrKernel {
        SabrKernel::new(&SabrParams::reference()).unwrap()
    }

    #[test]
    fn a1_r_limits_and_monotonicity() {
        assert!((a1_r(0.0) + 1.0 / 6.0).abs() < 1e-15);
        assert!((a1_r(1e-3) - a1_r(1.0001e-3)).abs() < 1e-9);
        let d: f64 = 50.0;
        let expected = -0.125 * (1.0 + (1.0 / d.tanh() - 1.0 / d) / d);
        assert!((a1_r(d) - expected).abs() < 1e-15);
        assert!((a1_r(d) + 0.125 * (1.0 + 1.0 / d - 1.0 / (d * d))).abs() < 1e-15);
        let mut prev = a1_r(0.0);
        for i in 1..400 {
            let v = a1_r(0.05 * i as f64);
            assert!(v > prev);
            assert!(v < -0.125);
            prev = v;
        }
        // series and closed form agree at the switch point
        let d: f64 = 1e-3;
        let direct = (1.0 / d.tanh() - 1.0 / d) / d;
        assert!((coth_term(d) - direct).abs() < 1e-9);
    }

    #[test]
    fn atm_ctilde_reproduces_local_vol() {
        let k = reference();
        let p = k.params();
        let c = k.coefficients(p.f0).unwrap();
        assert_eq!(c.b, 0.0);
        let sigma0_hat = (-c.ctilde).exp() / p.f0;
        assert!((k.scaling().vol(sigma0_hat) - p.atm_local_vol()).abs() < 1e-14);
    }

    #[test]
    fn lognormal_uncorrelated_atm_ctilde() {
        let p = SabrParams::new(2.0, 0.25, 1.0, 0.5, 0.0).unwrap();
        let k = SabrKernel::new(&p).unwrap();
        let c = k.coefficients(2.0).unwrap();
        let ah = 0.5;
        assert!((c.ctilde + (ah * 2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn beta_one_closed_forms() {
        let p = SabrParams::new(4.0, 0.3, 1.0, 0.4, -0.5).unwrap();
        let k = SabrKernel::new(&p).unwrap();
        let c = k.coefficients(5.0).unwrap();
        assert_eq!(c.parts.a1a, 0.0);
        assert_eq!(c.parts.m1pp, 0.0);
        assert!((c.parts.m1p - 0.5 / (2.0 * 0.75)).abs() < 1e-15);
        assert!(c.parts.ladder.bpp > 0.0);
    }

    #[test]
    fn vertical_geodesic_has_zero_connection() {
        let k = reference();
        assert_eq!(k.connection_m(4.0, k.scaling().alpha_hat), 0.0);
        let p = SabrParams::new(4.0, 0.3, 1.0, 0.4, -0.5).unwrap();
        let k1 = SabrKernel::new(&p).unwrap();
        assert!(k1.connection_m(4.0, k1.scaling().alpha_hat).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_has_no_potential() {
        let p = SabrParams::new(4.0, 0.3, 0.0, 0.4, -0.5).unwrap();
        let k = SabrKernel::new(&p).unwrap();
        let c = k.coefficients(5.0).unwrap();
        assert_eq!(c.parts.a1q, 0.0);
        assert_eq!(c.parts.a1a, 0.0);
        assert_eq!(c.parts.m1, 0.0);
    }

    #[test]
    fn b_is_zero_only_at_the_money() {
        let k = reference();
        for &s in &[2.0, 3.5, 3.99, 4.01, 6.0] {
            let c = k.coefficients(s).unwrap();
            assert!(c.b > 0.0);
            assert!(c.parts.ladder.bpp > 0.0);
        }
        assert_eq!(k.coefficients(4.0).unwrap().b, 0.0);
    }

    #[test]
    fn mean_reversion_vanishes_at_zero_kappa() {
        let p = SabrParams::reference()
            .with_mean_reversion(0.0, 0.3)
            .unwrap();
        let k = SabrKernel::new(&p).unwrap();
        let geo = k.geodesic(5.0);
        let adj = k.mean_reversion_adjustments(&geo).unwrap();
        assert_eq!(adj.delta_m, 0.0);
        assert_eq!(adj.delta_a1q, 0.0);
        // V = α, K = F₀: the exact bracket ln(V/α) + V̄/V − V̄/α vanishes
        let p = SabrParams::reference()
            .with_mean_reversion(0.2, 0.25)
            .unwrap();
        let k = SabrKernel::new(&p).unwrap();
        let (x1, y1) = k.start();
        assert_eq!(k.delta_m_to(x1, y1), 0.0);
    }

    #[test]
    fn chord_integral_matches_closed_form() {
        let base = SabrParams::reference();
        let cases = [
            base,
            base.with_mean_reversion(0.3, 0.25).unwrap(),
            SabrParams::new(4.0, 0.3, 0.9995, 0.4, 0.6).unwrap(),
            SabrParams::new(1.0, 0.5, 0.2, 1.1, 0.3).unwrap(),
        ];
        for p in cases {
            let k = SabrKernel::new(&p).unwrap();
            let y1 = k.start().1;
            for &(xi, eta) in &[(0.3, 0.1), (-0.2, 0.05), (0.01, -0.3), (1e-13, 0.2), (-0.5, -0.2)] {
                let (xi, eta) = (xi * y1, eta * y1);
                let closed = k.m1_offset(xi, eta);
                let chord = k.m1_chord(xi, eta);
                assert!(
                    (closed - chord).abs() < 5e-12 * closed.abs().max(1e-3),
                    "{p:?} ({xi}, {eta}): {closed} vs {chord}"
                );
                if p.kappa == 0.0 {
                    let (x1, y1) = k.start();
                    let sr = (1.0 - p.rho * p.rho).sqrt();
                    let v = y1 + eta;
                    let q = sr * (x1 + xi) + p.rho * v;
                    let geo = GeodesicData::to_point(k.scaling().alpha_hat, q, v, p.rho);
                    let (closed, chord) = (k.a1_q(&geo), k.a1_q_chord(xi, eta));
                    assert!((closed / chord - 1.0).abs() < 1e-11, "{closed} vs {chord}");
                }
            }
        }
    }
}
