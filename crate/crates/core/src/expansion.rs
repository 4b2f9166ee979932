//! Implied volatility expansions in maturity,
//! `σ(T) = σ₀ (1 + r₁ T + r₂ T²)`, against a Black, CEV or Bachelier proxy.
//!
//! The kernel works in units where ν = 1; results are restored to physical
//! units (`σ₀ = ν σ̂₀`, `r₁ = ν² r̂₁`, `r₂ = ν⁴ r̂₂`).

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{q_unchecked, SMALL_NU};
use crate::kernel::{KernelConfig, SabrKernel};
use crate::params::SabrParams;
use crate::pricers::{black_implied, proxy_implied, proxy_price, OptionSpec};

/// Closed-form model whose implied volatility is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Proxy {
    Black,
    Cev { beta0: f64 },
    Bachelier,
}

impl Proxy {
    /// Local volatility exponent of the proxy.
    pub fn beta0(&self) -> f64 {
        match *self {
            Proxy::Black => 1.0,
            Proxy::Cev { beta0 } => beta0,
            Proxy::Bachelier => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.beta0();
        if !(0.0..=1.0).contains(&b) {
            return Err(invalid("beta0", format!("must lie in [0, 1], got {b}")));
        }
        Ok(())
    }

    /// Discounted price of the proxy model at volatility `sigma`.
    pub fn price(&self, f0: f64, spec: &OptionSpec, sigma: f64) -> Result<f64> {
        proxy_price(f0, spec, sigma, self.beta0())
    }

    /// Proxy implied volatility of a discounted price.
    pub fn implied(&self, price: f64, f0: f64, spec: &OptionSpec) -> Result<f64> {
        proxy_implied(price, f0, spec, self.beta0())
    }
}

/// Truncation order in maturity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Zero,
    One,
    Two,
}

/// Reference quantities `B₀`, `C̃₀`, `D̃₀` of the CEV model
/// `dF = σ F^β₀ dW` at one strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CevReference {
    pub beta0: f64,
    /// `(K^(1−β₀) − F₀^(1−β₀))/(1−β₀)`, or `ln(K/F₀)` at β₀ = 1.
    pub q0: f64,
    pub b0: f64,
    pub ctilde0: f64,
    pub dtilde0: f64,
}

/// `B₀`, `C̃₀`, `D̃₀` of the CEV model at strike `k`.
pub fn cev_reference(k: f64, f0: f64, beta0: f64, sigma: f64) -> Result<CevReference> {
    check_strike(k, f0)?;
    Proxy::Cev { beta0 }.validate()?;
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let q0 = q_unchecked(f0, k, beta0);
    Ok(CevReference {
        beta0,
        q0,
        b0: q0 * q0 / (2.0 * sigma * sigma),
        ctilde0: -sigma.ln() - 0.5 * beta0 * (k * f0).ln(),
        dtilde0: proxy_dtilde(sigma, k, f0, beta0),
    })
}

/// `D̃₀ = β₀(2−β₀)σ²/(8 K^(1−β₀) F₀^(1−β₀))`.
pub fn proxy_dtilde(sigma: f64, k: f64, f0: f64, beta0: f64) -> f64 {
    beta0 * (2.0 - beta0) * sigma * sigma / (8.0 * (k * f0).powf(1.0 - beta0))
}

fn check_strike(k: f64, f0: f64) -> Result<()> {
    if !(f0 > 0.0) {
        return Err(invalid("f0", format!("must be positive, got {f0}")));
    }
    if !(k > 0.0) {
        return Err(invalid("strike", format!("must be positive, got {k}")));
    }
    Ok(())
}

fn check_off_atm(b: f64, k: f64, f0: f64) -> Result<()> {
    check_strike(k, f0)?;
    if k == f0 || !(b > 0.0) {
        return Err(Error::Domain(
            "the strike is at the money; use the at-the-money limits".into(),
        ));
    }
    Ok(())
}

/// Order-0 Black volatility `|ln(K/F₀)|/√(2B)`.
pub fn sigma0_black(b: f64, k: f64, f0: f64) -> Result<f64> {
    check_off_atm(b, k, f0)?;
    Ok((k / f0).ln().abs() / (2.0 * b).sqrt())
}

/// Order-0 proxy volatility `|q₀|/√(2B)`.
pub fn sigma0_proxy(b: f64, k: f64, f0: f64, beta0: f64) -> Result<f64> {
    check_off_atm(b, k, f0)?;
    Ok(q_unchecked(f0, k, beta0).abs() / (2.0 * b).sqrt())
}

/// `σ₁/σ₀ = −(C̃ + ln σ₀ + ½β₀ ln(K F₀))/(2B)`.
pub fn sigma1_ratio(b: f64, ctilde: f64, sigma0: f64, k: f64, f0: f64, beta0: f64) -> Result<f64> {
    check_off_atm(b, k, f0)?;
    Ok(-(ctilde + sigma0.ln() + 0.5 * beta0 * (k * f0).ln()) / (2.0 * b))
}

/// `σ₂/σ₀ = (3/2) r₁² − (D̃ + 3 r₁ − D̃₀(σ₀))/(2B)`.
pub fn sigma2_ratio(
    b: f64,
    dtilde: f64,
    sigma0: f64,
    r1: f64,
    k: f64,
    f0: f64,
    beta0: f64,
) -> Result<f64> {
    check_off_atm(b, k, f0)?;
    Ok(1.5 * r1 * r1 - (dtilde + 3.0 * r1 - proxy_dtilde(sigma0, k, f0, beta0)) / (2.0 * b))
}

/// Proxy quantities along a one-parameter path `z(λ)` at `λ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyDerivatives {
    pub b: f64,
    pub b_p: f64,
    pub b_pp: f64,
    pub ctilde: f64,
    pub ctilde_p: f64,
    pub dtilde: f64,
}

/// Taylor coefficients of `λ(T) = λ₁ T + λ₂ T²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyExpansion {
    pub lambda1: f64,
    pub lambda2: f64,
    pub proxy: ProxyDerivatives,
}

/// Matches the short-time expansions of the target `(B, C̃, D̃)` and of a
/// proxy moved along `z(λ)`:
///
/// ```text
/// λ₁ = (C̃ − C̃* + ln B − ln B*)/B*'
/// λ₂ = (D̃ − D̃* − λ₁ B*'/B* − λ₁ C̃*' − ½ λ₁² B*'')/B*'
/// ```
pub fn proxy_lambda_expansion(
    b: f64,
    ctilde: f64,
    dtilde: f64,
    proxy: &ProxyDerivatives,
) -> Result<ProxyExpansion> {
    if proxy.b_p == 0.0 || !proxy.b_p.is_finite() {
        return Err(Error::Domain(
            "the proxy path leaves B unchanged to first order".into(),
        ));
    }
    if !(b > 0.0 && proxy.b > 0.0) {
        return Err(invalid("B", "must be positive for both models"));
    }
    let p = proxy;
    let lambda1 = (ctilde - p.ctilde + b.ln() - p.b.ln()) / p.b_p;
    let lambda2 = (dtilde - p.dtilde - lambda1 * p.b_p / p.b - lambda1 * p.ctilde_p
        - 0.5 * lambda1 * lambda1 * p.b_pp)
        / p.b_p;
    Ok(ProxyExpansion {
        lambda1,
        lambda2,
        proxy: *p,
    })
}

/// Reasons an assembled volatility should not be trusted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    /// `ν² T` exceeds the configured bound.
    pub beyond_bound: bool,
    /// The assembled volatility is not positive.
    pub non_positive: bool,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        !self.beyond_bound && !self.non_positive
    }
}

/// Maturity-independent expansion coefficients at one strike, physical
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub strike: f64,
    pub proxy: Proxy,
    pub sigma0: f64,
    /// `σ₁/σ₀`, per year.
    pub r1: f64,
    /// `σ₂/σ₀`, per year squared.
    pub r2: f64,
}

impl ExpansionCoefficients {
    /// `σ₀(1 + r₁T + r₂T²)` truncated at `order`.
    pub fn sigma(&self, order: Order, maturity: f64) -> f64 {
        let t = maturity;
        match order {
            Order::Zero => self.sigma0,
            Order::One => self.sigma0 * (1.0 + self.r1 * t),
            Order::Two => self.sigma0 * (1.0 + self.r1 * t + self.r2 * t * t),
        }
    }
}

/// Assembled volatility at one strike and maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub strike: f64,
    pub maturity: f64,
    pub order: Order,
    pub proxy: Proxy,
    pub sigma0: f64,
    pub r1: f64,
    pub r2: f64,
    /// Proxy volatility at `maturity`.
    pub sigma: f64,
    pub validity: Validity,
}

impl ExpansionResult {
    /// Black volatility equivalent to `sigma`, obtained by pricing with the
    /// proxy and inverting the Black formula.
    pub fn black_vol(&self, f0: f64) -> Result<f64> {
        proxy_vol_to_black(f0, self.strike, self.maturity, self.proxy, self.sigma)
    }
}

/// Converts a proxy volatility to a Black volatility through the price of
/// the out-of-the-money option.
pub fn proxy_vol_to_black(f0: f64, strike: f64, maturity: f64, proxy: Proxy, sigma: f64) -> Result<f64> {
    if proxy.beta0() == 1.0 {
        return Ok(sigma);
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "non-positive proxy volatility {sigma} cannot be priced"
        )));
    }
    let spec = if strike >= f0 {
        OptionSpec::call(strike, maturity)
    } else {
        OptionSpec::put(strike, maturity)
    };
    let price = proxy.price(f0, &spec, sigma)?;
    black_implied(price, f0, &spec)
}

/// Numerical settings of the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Strikes with `|ln(K/F₀)|` below this use the at-the-money limit
    /// polynomial.
    pub atm_threshold: f64,
    /// Log-moneyness nodes (both signs) of the at-the-money extrapolation.
    pub atm_nodes: [f64; 3],
    /// Inside the outermost node, take `r₂` from the polynomial through the
    /// nodes; the direct formula divides rounding errors by `B²`.
    pub interpolate_near_atm: bool,
    /// Largest accepted gap between extrapolated and closed-form `σ₀`, `r₁`
    /// (relative to `σ₀`, absolute per year for `r₁`).
    pub atm_check_tol: f64,
    /// Validity bound on `ν² T`.
    pub validity_bound: f64,
    pub kernel: KernelConfig,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            atm_threshold: 1e-4,
            atm_nodes: [1e-2, 5e-3, 2.5e-3],
            interpolate_near_atm: true,
            atm_check_tol: 1e-7,
            validity_bound: 1.0,
            kernel: KernelConfig::default(),
        }
    }
}

/// At-the-money limits of the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmLimits {
    pub sigma0: f64,
    pub r1: f64,
    pub r2: f64,
    /// `e^{−C̃(F₀)} F₀^{−β₀}`.
    pub sigma0_closed: f64,
    /// `⅓(D̃₀(σ₀) − D̃(F₀))`.
    pub r1_closed: f64,
    /// Change in `r₂` when the outermost node pair is dropped.
    pub r2_error: f64,
    /// Coefficients at the extrapolation nodes.
    pub nodes: Vec<AtmNode>,
}

/// Coefficients at one log-moneyness node near the money.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmNode {
    pub m: f64,
    pub sigma0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl AtmLimits {
    /// Interpolated `(σ₀, r₁, r₂)` at log-moneyness `m` inside the nodes.
    pub fn interpolate(&self, m: f64) -> (f64, f64, f64) {
        let pick = |f: fn(&AtmNode) -> f64| -> Vec<(f64, f64)> {
            self.nodes.iter().map(|n| (n.m, f(n))).collect()
        };
        (
            neville(&pick(|n| n.sigma0), m).0,
            neville(&pick(|n| n.r1), m).0,
            neville(&pick(|n| n.r2), m).0,
        )
    }
}

/// Neville interpolation of `(x, y)` at `x0`, returning the value and the
/// change from the previous tableau level.
pub fn neville(points: &[(f64, f64)], x0: f64) -> (f64, f64) {
    let n = points.len();
    let mut p: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    let mut last_change = f64::INFINITY;
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (points[i].0, points[i + level].0);
            let next = ((x0 - xj) * p[i] + (xi - x0) * p[i + 1]) / (xi - xj);
            if i == 0 {
                last_change = (next - p[0]).abs();
            }
            p[i] = next;
        }
    }
    (p[0], last_change)
}

/// Target coefficients with `C̃ = C̃_local − ln s − ½β ln(F₀K)`, `s` the
/// volatility scale, in units where `units` restores physical values.
struct Target {
    b: f64,
    ctilde_local: f64,
    vol_scale: f64,
    dtilde: f64,
    units: f64,
}

/// Short-maturity implied volatility expansion for one SABR parameter set.
#[derive(Debug, Clone)]
pub struct SabrExpansion {
    params: SabrParams,
    proxy: Proxy,
    config: ExpansionConfig,
    /// `None` below the vol-of-vol threshold, where the CEV kernel is used.
    kernel: Option<SabrKernel>,
    atm: OnceLock<Result<AtmLimits>>,
}

impl SabrExpansion {
    pub fn new(params: &SabrParams, proxy: Proxy) -> Result<Self> {
        Self::with_config(params, proxy, ExpansionConfig::default())
    }

    pub fn with_config(params: &SabrParams, proxy: Proxy, config: ExpansionConfig) -> Result<Self> {
        params.validate()?;
        proxy.validate()?;
        let kernel = if params.nu < SMALL_NU {
            if params.has_mean_reversion() {
                return Err(Error::Domain(format!(
                    "mean reversion needs a vol-of-vol of at least {SMALL_NU}"
                )));
            }
            None
        } else {
            Some(SabrKernel::with_config(params, config.kernel)?)
        };
        Ok(Self {
            params: *params,
            proxy,
            config,
            kernel,
            atm: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &SabrParams {
        &self.params
    }

    pub fn proxy(&self) -> Proxy {
        self.proxy
    }

    pub fn config(&self) -> &ExpansionConfig {
        &self.config
    }

    pub fn kernel(&self) -> Option<&SabrKernel> {
        self.kernel.as_ref()
    }

    /// Target coefficients at a strike and the factor restoring physical
    /// units.
    fn target(&self, strike: f64) -> Result<Target> {
        let p = &self.params;
        match &self.kernel {
            Some(ker) => {
                let c = ker.coefficients(strike)?;
                Ok(Target {
                    b: c.b,
                    ctilde_local: c.ctilde_local,
                    vol_scale: ker.scaling().alpha_hat,
                    dtilde: c.dtilde,
                    units: p.nu,
                })
            }
            None => {
                // pure CEV dynamics; the O(ν) corrections are dropped
                let r = cev_reference(strike, p.f0, p.beta, p.alpha)?;
                Ok(Target {
                    b: r.b0,
                    ctilde_local: 0.0,
                    vol_scale: p.alpha,
                    dtilde: r.dtilde0,
                    units: 1.0,
                })
            }
        }
    }

    /// Off-the-money coefficients straight from the formulas.
    fn direct(&self, strike: f64) -> Result<(f64, f64, f64)> {
        let p = &self.params;
        let beta0 = self.proxy.beta0();
        if self.kernel.is_none() && beta0 == p.beta {
            return Ok((p.alpha, 0.0, 0.0));
        }
        let t = self.target(strike)?;
        let b = t.b;
        let s0 = sigma0_proxy(b, strike, p.f0, beta0)?;
        // C̃ − C̃₀(σ₀) with the logarithms of the volatility scale cancelled
        // by hand; they dominate both terms when ν is small
        let q0 = q_unchecked(p.f0, strike, beta0).abs();
        let gap = t.ctilde_local
            + (q0 / ((2.0 * b).sqrt() * t.vol_scale)).ln()
            + 0.5 * (beta0 - p.beta) * (strike * p.f0).ln();
        let r1 = -gap / (2.0 * b);
        let r2 = sigma2_ratio(b, t.dtilde, s0, r1, strike, p.f0, beta0)?;
        let s = t.units;
        let s2 = s * s;
        Ok((s * s0, s2 * r1, s2 * s2 * r2))
    }

    /// At-the-money limits, computed once.
    pub fn atm_limits(&self) -> Result<AtmLimits> {
        self.atm.get_or_init(|| self.compute_atm()).clone()
    }

    fn compute_atm(&self) -> Result<AtmLimits> {
        let p = &self.params;
        let beta0 = self.proxy.beta0();
        let mut nodes = Vec::new();
        let mut s0_pts = Vec::new();
        let mut r1_pts = Vec::new();
        let mut r2_pts = Vec::new();
        for &m in &self.config.atm_nodes {
            for m in [-m, m] {
                let (sigma0, r1, r2) = self.direct(p.f0 * m.exp())?;
                nodes.push(AtmNode { m, sigma0, r1, r2 });
                s0_pts.push((m, sigma0));
                r1_pts.push((m, r1));
                r2_pts.push((m, r2));
            }
        }
        let (sigma0, _) = neville(&s0_pts, 0.0);
        let (r1, _) = neville(&r1_pts, 0.0);
        let (r2, _) = neville(&r2_pts, 0.0);
        let (r2_inner, _) = neville(&r2_pts[2..], 0.0);

        // closed forms from the erfc expansion at zero
        let (sigma0_closed, r1_closed) = match &self.kernel {
            Some(ker) => {
                let c = ker.coefficients(p.f0)?;
                let nu = p.nu;
                let s0 = (-c.ctilde).exp() * p.f0.powf(-beta0);
                let r1 = (proxy_dtilde(s0, p.f0, p.f0, beta0) - c.dtilde) / 3.0;
                (nu * s0, nu * nu * r1)
            }
            None => {
                if beta0 == p.beta {
                    (p.alpha, 0.0)
                } else {
                    let r = cev_reference(p.f0, p.f0, p.beta, p.alpha)?;
                    let s0 = (-r.ctilde0).exp() * p.f0.powf(-beta0);
                    (s0, (proxy_dtilde(s0, p.f0, p.f0, beta0) - r.dtilde0) / 3.0)
                }
            }
        };
        let tol = self.config.atm_check_tol;
        if (sigma0 / sigma0_closed - 1.0).abs() > tol || (r1 - r1_closed).abs() > tol {
            return Err(Error::Extrapolation(format!(
                "at-the-money limits disagree with the closed forms: \
                 sigma0 {sigma0} vs {sigma0_closed}, r1 {r1} vs {r1_closed}"
            )));
        }
        if !r2.is_finite() {
            return Err(Error::Extrapolation(format!("r2 limit is {r2}")));
        }
        Ok(AtmLimits {
            sigma0,
            r1,
            r2,
            sigma0_closed,
            r1_closed,
            r2_error: (r2 - r2_inner).abs(),
            nodes,
        })
    }

    /// Expansion coefficients at a strike.
    pub fn coefficients(&self, strike: f64) -> Result<ExpansionCoefficients> {
        let p = &self.params;
        check_strike(strike, p.f0)?;
        let m = (strike / p.f0).ln();
        let (sigma0, r1, r2) = if m == 0.0 {
            let atm = self.atm_limits()?;
            (atm.sigma0, atm.r1, atm.r2)
        } else if m.abs() < self.config.atm_threshold {
            // the limit polynomial, evaluated at m so the smile stays continuous
            self.atm_limits()?.interpolate(m)
        } else {
            let (s0, r1, mut r2) = self.direct(strike)?;
            if self.config.interpolate_near_atm && m.abs() < self.config.atm_nodes[0] {
                r2 = self.atm_limits()?.interpolate(m).2;
            }
            (s0, r1, r2)
        };
        Ok(ExpansionCoefficients {
            strike,
            proxy: self.proxy,
            sigma0,
            r1,
            r2,
        })
    }

    /// Assembled volatility at one strike and maturity.
    pub fn evaluate(&self, strike: f64, maturity: f64, order: Order) -> Result<ExpansionResult> {
        if !(maturity > 0.0) {
            return Err(invalid("maturity", format!("must be positive, got {maturity}")));
        }
        let c = self.coefficients(strike)?;
        let sigma = c.sigma(order, maturity);
        let nu = self.params.nu;
        Ok(ExpansionResult {
            strike,
            maturity,
            order,
            proxy: self.proxy,
            sigma0: c.sigma0,
            r1: c.r1,
            r2: c.r2,
            sigma,
            validity: Validity {
                beyond_bound: nu * nu * maturity > self.config.validity_bound,
                non_positive: !(sigma > 0.0),
            },
        })
    }

    /// Smile over a strike grid, evaluated in parallel; order of the input
    /// is kept.
    pub fn smile(&self, strikes: &[f64], maturity: f64, order: Order) -> Vec<Result<ExpansionResult>> {
        // fill the cache before fanning out
        let _ = self.atm_limits();
        strikes
            .par_iter()
            .map(|&k| self.evaluate(k, maturity, order))
            .collect()
    }
}

/// The classical lognormal SABR implied volatility approximation, with its
/// order-T correction.
pub fn hklw(params: &SabrParams, strike: f64, maturity: f64) -> Result<f64> {
    params.validate()?;
    check_strike(strike, params.f0)?;
    let SabrParams {
        f0,
        alpha,
        beta,
        nu,
        rho,
        ..
    } = *params;
    let e = 1.0 - beta;
    let lfk = (f0 / strike).ln();
    let fk_e2 = (f0 * strike).powf(0.5 * e);
    let l2 = lfk * lfk;
    let denom = fk_e2 * (1.0 + e * e * l2 / 24.0 + e.powi(4) * l2 * l2 / 1920.0);
    let z = nu / alpha * fk_e2 * lfk;
    let zx = if z.abs() < 1e-8 {
        1.0 - 0.5 * rho * z
    } else {
        let x = (((1.0 - 2.0 * rho * z + z * z).sqrt() + z - rho) / (1.0 - rho)).ln();
        z / x
    };
    let correction = e * e * alpha * alpha / (24.0 * fk_e2 * fk_e2)
        + 0.25 * rho * beta * nu * alpha / fk_e2
        + (2.0 - 3.0 * rho * rho) * nu * nu / 24.0;
    Ok(alpha / denom * zx * (1.0 + correction * maturity))
}

/// `σ₁/σ₀` at the money for the Black proxy, in closed form:
/// `α²(1−β)²F₀^(2β−2)/24 + ρανβF₀^(β−1)/4 + ν²(2 − 3ρ²)/24`.
pub fn atm_r1_closed_form(params: &SabrParams) -> f64 {
    let SabrParams {
        f0,
        alpha,
        beta,
        nu,
        rho,
        ..
    } = *params;
    let lv = alpha * f0.powf(beta - 1.0);
    (1.0 - beta).powi(2) * lv * lv / 24.0
        + 0.25 * rho * nu * beta * lv
        + nu * nu * (2.0 - 3.0 * rho * rho) / 24.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricers::{black_kernel, black_time_value, time_value_erfc};

    fn base() -> SabrParams {
        SabrParams::reference()
    }

    #[test]
    fn cev_reference_cases() {
        let r = cev_reference(5.0, 4.0, 1.0, 0.3).unwrap();
        let (b, c, d) = black_kernel(4.0, 5.0, 0.3);
        assert!((r.q0 - (1.25f64).ln()).abs() < 1e-15);
        assert!((r.b0 - b).abs() < 1e-15 && (r.ctilde0 - c).abs() < 1e-15 && (r.dtilde0 - d).abs() < 1e-15);
        let r = cev_reference(5.0, 4.0, 0.0, 0.3).unwrap();
        assert_eq!(r.dtilde0, 0.0);
        assert_eq!(r.q0, 1.0);
        let r = cev_reference(4.0, 4.0, 0.5, 0.3).unwrap();
        assert_eq!((r.b0, r.q0), (0.0, 0.0));
    }

    #[test]
    fn proxy_applied_to_itself_has_no_corrections() {
        // target generated by a CEV model, expanded against that same CEV
        for &beta0 in &[0.0, 0.4, 1.0] {
            let r = cev_reference(5.5, 4.0, beta0, 0.7).unwrap();
            let s0 = sigma0_proxy(r.b0, 5.5, 4.0, beta0).unwrap();
            let r1 = sigma1_ratio(r.b0, r.ctilde0, s0, 5.5, 4.0, beta0).unwrap();
            let r2 = sigma2_ratio(r.b0, r.dtilde0, s0, r1, 5.5, 4.0, beta0).unwrap();
            assert!((s0 / 0.7 - 1.0).abs() < 1e-15);
            assert!(r1.abs() < 1e-14 && r2.abs() < 1e-13, "{r1} {r2}");
        }
    }

    #[test]
    fn black_and_unit_cev_pipelines_coincide() {
        let ex_b = SabrExpansion::new(&base(), Proxy::Black).unwrap();
        let ex_c = SabrExpansion::new(&base(), Proxy::Cev { beta0: 1.0 }).unwrap();
        for &k in &[2.5, 3.7, 4.0, 5.2] {
            let a = ex_b.coefficients(k).unwrap();
            let b = ex_c.coefficients(k).unwrap();
            assert!((a.sigma0 - b.sigma0).abs() <= 1e-12 * a.sigma0);
            assert!((a.r1 - b.r1).abs() <= 1e-12 * a.r1.abs().max(1e-3));
            assert!((a.r2 - b.r2).abs() <= 1e-12 * a.r2.abs().max(1e-3));
        }
    }

    #[test]
    fn atm_limits_match_closed_forms() {
        let ex = SabrExpansion::new(&base(), Proxy::Black).unwrap();
        let atm = ex.atm_limits().unwrap();
        assert!((atm.sigma0 - base().atm_local_vol()).abs() < 1e-10);
        assert!((atm.r1 - atm_r1_closed_form(&base())).abs() < 1e-8, "{} {}", atm.r1, atm_r1_closed_form(&base()));
        assert!((atm.r1 - 1.553e-3).abs() < 1e-6);
        assert!(atm.r2_error < 1e-8, "{}", atm.r2_error);
        // the CEV proxy loses the α² term
        let ex = SabrExpansion::new(&base(), Proxy::Cev { beta0: 0.7 }).unwrap();
        let atm = ex.atm_limits().unwrap();
        let p = base();
        let expected = 0.25 * p.rho * p.alpha * p.nu * p.beta * p.f0.powf(p.beta - 1.0)
            + p.nu * p.nu / 12.0
            - p.rho * p.rho * p.nu * p.nu / 8.0;
        assert!((atm.r1 - expected).abs() < 1e-8);
        assert!((atm.sigma0 - p.alpha).abs() < 1e-10);
    }

    #[test]
    fn smile_is_continuous_through_the_money() {
        let ex = SabrExpansion::new(&base(), Proxy::Black).unwrap();
        let atm = ex.evaluate(4.0, 1.0, Order::Two).unwrap();
        for &m in &[3e-3f64, 1e-3, 3e-4, 1.01e-4] {
            for sign in [-1.0, 1.0] {
                let s = ex.evaluate(4.0 * (sign * m).exp(), 1.0, Order::Two).unwrap();
                // σ moves by the smile slope times m
                assert!((s.sigma - atm.sigma).abs() < 0.2 * m + 1e-6, "{m}: {} {}", s.sigma, atm.sigma);
            }
        }
        let below = ex.evaluate(4.0 * (1e-4f64 - 1e-12).exp(), 1.0, Order::Two).unwrap();
        let above = ex.evaluate(4.0 * (1e-4f64 + 1e-12).exp(), 1.0, Order::Two).unwrap();
        assert!((below.sigma - above.sigma).abs() < 1e-6);
    }

    #[test]
    fn matching_residual_is_second_order() {
        // both sides of the matching condition, with the Black side at σ(T)
        let ex = SabrExpansion::new(&base(), Proxy::Black).unwrap();
        let ker = ex.kernel().unwrap();
        let nu = base().nu;
        for &k in &[3.0, 5.0] {
            let kc = ker.coefficients(k).unwrap();
            let c = ex.coefficients(k).unwrap();
            let residual = |tau: f64| {
                let lhs = kc.b / tau + kc.ctilde + kc.b.ln() + kc.dtilde * tau + 1.5 * tau / kc.b;
                // hat volatility at hat time τ
                let t = tau / (nu * nu);
                let s = c.sigma(Order::Two, t) / nu;
                let (b, cc, d) = black_kernel(4.0, k, s);
                let rhs = b / tau + cc + b.ln() + d * tau + 1.5 * tau / b;
                lhs - rhs
            };
            let r1 = residual(1e-2);
            let r2 = residual(1e-3);
            let ratio = r1 / r2;
            assert!((ratio.log10() - 2.0).abs() < 0.15, "{k}: {r1} {r2}");
        }
    }

    #[test]
    fn black_time_value_reproduced_by_the_kernel_form() {
        let (b, c, d) = black_kernel(4.0, 5.0, 0.3);
        let tv = time_value_erfc(b, c, d, 2.0).unwrap();
        assert!((tv / black_time_value(4.0, 5.0, 0.3, 2.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn lambda_expansion_reproduces_the_black_formulas() {
        let (b, c, d, k, f0) = (0.13, -0.7, -0.05, 5.0f64, 4.0f64);
        let s0 = sigma0_black(b, k, f0).unwrap();
        let r1 = sigma1_ratio(b, c, s0, k, f0, 1.0).unwrap();
        let r2 = sigma2_ratio(b, d, s0, r1, k, f0, 1.0).unwrap();
        let l2 = (k / f0).ln().powi(2);
        // path σ = σ₀ + λ
        let path = |sign: f64| ProxyDerivatives {
            b: l2 / (2.0 * s0 * s0),
            b_p: -sign * l2 / s0.powi(3),
            b_pp: 3.0 * l2 / s0.powi(4),
            ctilde: -s0.ln() - 0.5 * (k * f0).ln(),
            ctilde_p: -sign / s0,
            dtilde: s0 * s0 / 8.0,
        };
        let e = proxy_lambda_expansion(b, c, d, &path(1.0)).unwrap();
        assert!((e.lambda1 - s0 * r1).abs() < 1e-14);
        assert!((e.lambda2 - s0 * r2).abs() < 1e-13, "{} {}", e.lambda2, s0 * r2);
        let flipped = proxy_lambda_expansion(b, c, d, &path(-1.0)).unwrap();
        assert!((flipped.lambda1 + e.lambda1).abs() < 1e-15);
        // identical models
        let same = proxy_lambda_expansion(path(1.0).b, path(1.0).ctilde, path(1.0).dtilde, &path(1.0)).unwrap();
        assert_eq!((same.lambda1, same.lambda2), (0.0, 0.0));
        let flat = ProxyDerivatives { b_p: 0.0, ..path(1.0) };
        assert!(proxy_lambda_expansion(b, c, d, &flat).is_err());
    }

    #[test]
    fn hklw_cases() {
        let p = SabrParams::new(4.0, 0.3, 1.0, 0.0, 0.2).unwrap();
        for &k in &[2.0, 4.0, 7.0] {
            assert!((hklw(&p, k, 5.0).unwrap() - 0.3).abs() < 1e-15);
        }
        let p = base();
        let h1 = hklw(&p, 4.0, 1.0).unwrap();
        let h0 = hklw(&p, 4.0, 0.0).unwrap_or(f64::NAN);
        let h2 = hklw(&p, 4.0, 2.0).unwrap();
        assert!(((h2 - h1) / h0 - atm_r1_closed_form(&p)).abs() < 1e-14 || h0.is_nan());
        assert!((h1 / p.atm_local_vol() - 1.0 - atm_r1_closed_form(&p)).abs() < 1e-14);
    }

    #[test]
    fn small_vol_of_vol_uses_the_cev_kernel() {
        let p = SabrParams::new(4.0, 0.3, 0.7, 1e-8, -0.5).unwrap();
        let ex = SabrExpansion::new(&p, Proxy::Cev { beta0: 0.7 }).unwrap();
        assert!(ex.kernel().is_none());
        let c = ex.coefficients(5.0).unwrap();
        assert_eq!((c.sigma0, c.r1, c.r2), (0.3, 0.0, 0.0));
        // against Black, the CEV smile: order 0 is |ln(K/F₀)| α / |q|
        let ex = SabrExpansion::new(&p, Proxy::Black).unwrap();
        let c = ex.coefficients(5.0).unwrap();
        let q = (5f64.powf(0.3) - 4f64.powf(0.3)) / 0.3;
        assert!((c.sigma0 - 0.3 * (1.25f64).ln() / q).abs() < 1e-14);
        let atm = ex.atm_limits().unwrap();
        assert!((atm.r1 - (1.0 - 0.7f64).powi(2) * base().atm_local_vol().powi(2) / 24.0).abs() < 1e-10);
    }

    #[test]
    fn validity_flags() {
        let ex = SabrExpansion::new(&base(), Proxy::Black).unwrap();
        let r = ex.evaluate(5.0, 2.0, Order::Two).unwrap();
        assert!(r.validity.is_valid());
        let r = ex.evaluate(5.0, 7.0, Order::Two).unwrap();
        assert!(r.validity.beyond_bound && !r.validity.non_positive);
    }

    #[test]
    fn neville_is_exact_for_polynomials() {
        let pts: Vec<(f64, f64)> = [-2.0, -1.0, 0.5, 1.0, 3.0]
            .iter()
            .map(|&x: &f64| (x, 1.0 - x + 2.0 * x.powi(3) - 0.5 * x.powi(4)))
            .collect();
        let (v, _) = neville(&pts, 0.25);
        let x: f64 = 0.25;
        assert!((v - (1.0 - x + 2.0 * x.powi(3) - 0.5 * x.powi(4))).abs() < 1e-14);
    }
}
