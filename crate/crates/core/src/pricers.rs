//! European option pricing under Black, Bachelier and CEV dynamics, implied
//! volatility inversion and the time value of the asymptotic expansion.
//!
//! Prices are computed as intrinsic value plus time value, where the time
//! value is the price of the out-of-the-money option. This keeps relative
//! accuracy for deep out-of-the-money strikes, where `F N(d₁) − K N(d₂)`
//! would cancel.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::quadrature::integrate_adaptive;
use crate::special::{erfcx, norm_pdf, FRAC_1_SQRT_2PI};

/// Call or put.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// A European option on a forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    pub kind: OptionKind,
    /// Discount factor in `(0, 1]`.
    pub discount: f64,
}

impl OptionSpec {
    pub fn call(strike: f64, maturity: f64) -> Self {
        Self {
            strike,
            maturity,
            kind: OptionKind::Call,
            discount: 1.0,
        }
    }

    pub fn put(strike: f64, maturity: f64) -> Self {
        Self {
            kind: OptionKind::Put,
            ..Self::call(strike, maturity)
        }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    fn validate(&self, positive_strike: bool) -> Result<()> {
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(invalid("maturity", format!("must be positive, got {}", self.maturity)));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(invalid("discount", format!("must lie in (0, 1], got {}", self.discount)));
        }
        if positive_strike && !(self.strike > 0.0) {
            return Err(invalid("strike", format!("must be positive, got {}", self.strike)));
        }
        if !self.strike.is_finite() {
            return Err(invalid("strike", "must be finite"));
        }
        Ok(())
    }

    /// Undiscounted intrinsic value.
    pub fn intrinsic(&self, f0: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (f0 - self.strike).max(0.0),
            OptionKind::Put => (self.strike - f0).max(0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Black

/// Undiscounted Black time value: the price of the out-of-the-money option.
///
/// Written as `½ K e^{−d₂²/2} [erfcx(−d₁/√2) − erfcx(−d₂/√2)]` on the
/// out-of-the-money side, which is free of underflow and cancellation.
pub fn black_time_value(f0: f64, strike: f64, sigma: f64, maturity: f64) -> f64 {
    let sd = sigma * maturity.sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    if strike == 0.0 {
        return 0.0;
    }
    let m = (strike / f0).ln().abs();
    // out-of-the-money side: −d₁/√2 = x − y, −d₂/√2 = x + y
    let x = m / (SQRT_2 * sd);
    let y = sd / (2.0 * SQRT_2);
    0.5 * (strike * f0).sqrt() * (-(x * x) - y * y).exp() * (erfcx(x - y) - erfcx(x + y))
}

/// Discounted Black price.
pub fn black_price(f0: f64, spec: &OptionSpec, sigma: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(invalid("f0", format!("must be positive, got {f0}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    spec.validate(false)?;
    if spec.strike < 0.0 {
        return Err(invalid("strike", "must be non-negative"));
    }
    Ok(spec.discount * (spec.intrinsic(f0) + black_time_value(f0, spec.strike, sigma, spec.maturity)))
}

/// Discounted Black vega `∂price/∂σ`.
pub fn black_vega(f0: f64, spec: &OptionSpec, sigma: f64) -> f64 {
    let sd = sigma * spec.maturity.sqrt();
    if sd == 0.0 || spec.strike <= 0.0 {
        return 0.0;
    }
    let d1 = ((f0 / spec.strike).ln() + 0.5 * sd * sd) / sd;
    spec.discount * f0 * spec.maturity.sqrt() * norm_pdf(d1)
}

/// Black implied volatility of a discounted price.
pub fn black_implied(price: f64, f0: f64, spec: &OptionSpec) -> Result<f64> {
    spec.validate(true)?;
    let target = check_band(price, f0, spec, match spec.kind {
        OptionKind::Call => f0,
        OptionKind::Put => spec.strike,
    })?;
    if target == 0.0 {
        return Ok(0.0);
    }
    let tv = |s: f64| black_time_value(f0, spec.strike, s, spec.maturity);
    let vega = |s: f64| black_vega(f0, &OptionSpec { discount: 1.0, ..*spec }, s);
    let tol = 1e-12 * f0;
    solve_vol(target, tol, tv, vega, 0.2 / spec.maturity.sqrt())
}

// Returns the target undiscounted time value after checking the no-arbitrage
// band `[intrinsic, upper]`.
fn check_band(price: f64, f0: f64, spec: &OptionSpec, upper: f64) -> Result<f64> {
    let undiscounted = price / spec.discount;
    let intrinsic = spec.intrinsic(f0);
    let slack = 1e-14 * f0.max(spec.strike.abs());
    if !(undiscounted >= intrinsic - slack) || !(undiscounted < upper) {
        return Err(Error::PriceOutOfBounds {
            price,
            lower: spec.discount * intrinsic,
            upper: spec.discount * upper,
        });
    }
    Ok((undiscounted - intrinsic).max(0.0))
}

/// Safeguarded Newton on the time value, `tv` increasing in σ.
///
/// The bracket is grown geometrically from `guess`; Newton steps in ln σ
/// (on ln tv) are accepted when they stay in the bracket, bisection is used
/// otherwise.
fn solve_vol<F, G>(target: f64, tol: f64, tv: F, vega: G, guess: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let mut lo = 0.0;
    let mut hi = guess.max(1e-8);
    let mut it = 0;
    while tv(hi) < target {
        lo = hi;
        hi *= 2.0;
        it += 1;
        if it > 200 {
            return Err(Error::NoConvergence { iterations: it });
        }
    }
    let mut s = 0.5 * (lo + hi);
    let ln_target = target.ln();
    for _ in 0..200 {
        let v = tv(s);
        let err = v - target;
        if err.abs() <= tol.min(1e-13 * target.max(f64::MIN_POSITIVE)).max(f64::MIN_POSITIVE) || hi - lo <= 1e-15 * hi {
            return Ok(s);
        }
        if err > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let dv = vega(s);
        let mut next = f64::NAN;
        if v > 0.0 && dv > 0.0 {
            // Newton on ln tv in σ
            next = s - (v.ln() - ln_target) * v / dv;
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        s = next;
    }
    if (tv(s) - target).abs() <= tol {
        return Ok(s);
    }
    Err(Error::NoConvergence { iterations: 200 })
}

// ---------------------------------------------------------------------------
// Bachelier

/// Undiscounted Bachelier time value `σ√T [φ(z) − |z| Φ(−|z|)]`.
pub fn bachelier_time_value(f0: f64, strike: f64, sigma: f64, maturity: f64) -> f64 {
    let sd = sigma * maturity.sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    let a = (f0 - strike).abs() / sd;
    // Φ(−a)/φ(a) = √(π/2) erfcx(a/√2)
    let mills = (0.5 * PI).sqrt() * erfcx(a / SQRT_2);
    sd * norm_pdf(a) * (1.0 - a * mills)
}

/// Discounted Bachelier (normal) price.
pub fn bachelier_price(f0: f64, spec: &OptionSpec, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    spec.validate(false)?;
    Ok(spec.discount * (spec.intrinsic(f0) + bachelier_time_value(f0, spec.strike, sigma, spec.maturity)))
}

/// Bachelier implied volatility of a discounted price.
pub fn bachelier_implied(price: f64, f0: f64, spec: &OptionSpec) -> Result<f64> {
    spec.validate(false)?;
    let target = check_band(price, f0, spec, f64::INFINITY)?;
    if target == 0.0 {
        return Ok(0.0);
    }
    let sqrt_t = spec.maturity.sqrt();
    let tv = |s: f64| bachelier_time_value(f0, spec.strike, s, spec.maturity);
    let vega = |s: f64| sqrt_t * norm_pdf((f0 - spec.strike) / (s * sqrt_t));
    let scale = f0.abs().max(spec.strike.abs()).max(1.0);
    solve_vol(target, 1e-12 * scale, tv, vega, target * (2.0 * PI).sqrt() / sqrt_t)
}

// ---------------------------------------------------------------------------
// CEV

/// Above this exponent the CEV series is replaced by the Black formula.
pub const CEV_LOGNORMAL_CUTOFF: f64 = 1.0 - 1e-6;

/// `ln(xᵃ e^{−x} / Γ(a + 1))`, the log Poisson weight when `a` is an
/// integer. Large `a` uses Stirling's series with `ln(1 + u) − u` evaluated
/// without cancellation.
fn ln_gamma_density(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        return -x;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if a < 15.0 {
        return a * x.ln() - x - ln_gamma(a + 1.0);
    }
    let u = (x - a) / a;
    // ln(1 + u) − u
    let phi = if u.abs() < 0.1 {
        let mut term = -u * u / 2.0;
        let mut sum = term;
        let mut n = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= -u * n / (n + 1.0);
            sum += term;
            n += 1.0;
        }
        sum
    } else {
        u.ln_1p() - u
    };
    let a2 = a * a;
    let corr = (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * a2)) / a2) / a2) / a;
    a * phi - 0.5 * (2.0 * PI * a).ln() - corr
}

/// Steps between fresh evaluations of the incomplete gamma functions while
/// walking away from the Poisson mode.
const REANCHOR: usize = 4096;

/// Noncentral chi-square CDF and survival function `(P, Q)` at `x` with `k`
/// degrees of freedom and noncentrality `lambda`.
///
/// The Poisson mixture of central chi-squares is summed outward from its
/// largest weight until the weights fall below `1e-18`. Between anchor
/// points the regularized incomplete gammas follow
/// `P(a + 1, y) = P(a, y) − yᵃ e^{−y}/Γ(a + 1)`.
pub fn noncentral_chi2(x: f64, k: f64, lambda: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let half = 0.5 * lambda;
    let y = 0.5 * x;
    let a0 = 0.5 * k;
    if half == 0.0 {
        return (gamma_lr(a0, y), gamma_ur(a0, y));
    }
    let mode = half.floor();
    let (mut p_sum, mut q_sum, mut mass) = (0.0, 0.0, 0.0);

    // upward, including the mode
    let (mut w, mut p, mut q, mut t) = (0.0, 0.0, 0.0, 0.0);
    let mut j = mode;
    let mut step = 0usize;
    loop {
        let a = a0 + j;
        if step.is_multiple_of(REANCHOR) {
            w = ln_gamma_density(j, half).exp();
            p = gamma_lr(a, y);
            q = gamma_ur(a, y);
            t = ln_gamma_density(a, y).exp();
        } else {
            w *= half / j;
            p -= t;
            q += t;
            t *= y / a;
        }
        p_sum += w * p;
        q_sum += w * q;
        mass += w;
        if w < 1e-18 && j > half {
            break;
        }
        j += 1.0;
        step += 1;
    }

    // downward
    let mut j = mode;
    let mut step = 0usize;
    let (mut w, mut p, mut q, mut t) = (0.0, 0.0, 0.0, 0.0);
    while j >= 1.0 {
        let a = a0 + j;
        if step.is_multiple_of(REANCHOR) {
            w = ln_gamma_density(j, half).exp();
            p = gamma_lr(a, y);
            q = gamma_ur(a, y);
            // t(a − 1)
            t = ln_gamma_density(a - 1.0, y).exp();
        }
        // move from j to j − 1
        w *= j / half;
        p += t;
        q -= t;
        t *= (a - 1.0) / y;
        p_sum += w * p;
        q_sum += w * q;
        mass += w;
        if w < 1e-18 {
            break;
        }
        j -= 1.0;
        step += 1;
    }
    (p_sum / mass, q_sum / mass)
}

/// Discounted CEV price, `dF = σ F^β dW` absorbed at zero.
///
/// With `a = K^{2(1−β)}/((1−β)²σ²T)`, `b = 1/(1−β)`,
/// `c = F₀^{2(1−β)}/((1−β)²σ²T)`:
///
/// ```text
/// C = F₀ Q(a; b + 2, c) − K P(c; b, a)
/// P = K Q(c; b, a) − F₀ P(a; b + 2, c)
/// ```
///
/// β = 0 is priced with the Bachelier formula and β within 1e-6 of one
/// with the Black formula at the local volatility `σ F₀^{β−1}`.
pub fn cev_price(f0: f64, spec: &OptionSpec, sigma: f64, beta: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(invalid("f0", format!("must be positive, got {f0}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid("beta", format!("must lie in [0, 1], got {beta}")));
    }
    if beta == 0.0 {
        return bachelier_price(f0, spec, sigma);
    }
    if beta > CEV_LOGNORMAL_CUTOFF {
        if beta < 1.0 {
            log::warn!("CEV exponent {beta} priced with the Black formula");
        }
        return black_price(f0, spec, sigma * f0.powf(beta - 1.0));
    }
    spec.validate(true)?;
    let k = spec.strike;
    let e = 1.0 - beta;
    let v = e * e * sigma * sigma * spec.maturity;
    if v == 0.0 {
        return Ok(spec.discount * spec.intrinsic(f0));
    }
    let a = k.powf(2.0 * e) / v;
    let b = 1.0 / e;
    let c = f0.powf(2.0 * e) / v;
    // out-of-the-money side, then parity
    let otm_call = k >= f0;
    let tv = if otm_call {
        let (_, q1) = noncentral_chi2(a, b + 2.0, c);
        let (p2, _) = noncentral_chi2(c, b, a);
        f0 * q1 - k * p2
    } else {
        let (p1, _) = noncentral_chi2(a, b + 2.0, c);
        let (_, q2) = noncentral_chi2(c, b, a);
        k * q2 - f0 * p1
    };
    Ok(spec.discount * (spec.intrinsic(f0) + tv.max(0.0)))
}

/// CEV implied volatility `σ` of a discounted price.
pub fn cev_implied(price: f64, f0: f64, spec: &OptionSpec, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return bachelier_implied(price, f0, spec);
    }
    if beta > CEV_LOGNORMAL_CUTOFF {
        return Ok(black_implied(price, f0, spec)? * f0.powf(1.0 - beta));
    }
    spec.validate(true)?;
    let target = check_band(price, f0, spec, match spec.kind {
        OptionKind::Call => f0,
        OptionKind::Put => spec.strike,
    })?;
    if target == 0.0 {
        return Ok(0.0);
    }
    let undiscounted = OptionSpec { discount: 1.0, ..*spec };
    let tv = |s: f64| {
        cev_price(f0, &undiscounted, s, beta)
            .map(|p| p - spec.intrinsic(f0))
            .unwrap_or(f64::NAN)
    };
    // central difference vega; the closed form in σ is not needed here
    let vega = |s: f64| {
        let h = 1e-5 * s;
        (tv(s + h) - tv(s - h)) / (2.0 * h)
    };
    let guess = 0.2 * f0.powf(1.0 - beta) / spec.maturity.sqrt();
    solve_vol(target, 1e-12 * f0, tv, vega, guess)
}

/// Implied volatility of `price` in the model named by `beta0`:
/// Black for one, Bachelier for zero, CEV in between.
pub fn proxy_implied(price: f64, f0: f64, spec: &OptionSpec, beta0: f64) -> Result<f64> {
    if beta0 == 1.0 {
        black_implied(price, f0, spec)
    } else {
        cev_implied(price, f0, spec, beta0)
    }
}

/// Price in the model named by `beta0`; see [`proxy_implied`].
pub fn proxy_price(f0: f64, spec: &OptionSpec, sigma: f64, beta0: f64) -> Result<f64> {
    if beta0 == 1.0 {
        black_price(f0, spec, sigma)
    } else {
        cev_price(f0, spec, sigma, beta0)
    }
}

// ---------------------------------------------------------------------------
// Time value of the heat kernel expansion

fn check_kernel_inputs(b: f64, maturity: f64) -> Result<()> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(invalid("B", format!("must be non-negative, got {b}")));
    }
    if !(maturity > 0.0) {
        return Err(invalid("maturity", format!("must be positive, got {maturity}")));
    }
    Ok(())
}

/// Time value `½ ∫₀ᵀ (2πt)^{−½} e^{−B/t − C̃ − D̃t} dt`.
///
/// For `D̃ > 0` this equals
///
/// ```text
/// e^{−C̃} / (4√(2D̃)) · e^{−B/T − D̃T} [erfcx(x − y) − erfcx(x + y)],
/// x = √(B/T), y = √(D̃T),
/// ```
///
/// which is exact for the Black model. Small or negative `D̃T` is
/// integrated numerically.
pub fn time_value_erfc(b: f64, ctilde: f64, dtilde: f64, maturity: f64) -> Result<f64> {
    check_kernel_inputs(b, maturity)?;
    let y2 = dtilde * maturity;
    if y2 > 1e-6 {
        let x = (b / maturity).sqrt();
        let y = y2.sqrt();
        let bracket = erfcx(x - y) - erfcx(x + y);
        return Ok((-ctilde).exp() / (4.0 * (2.0 * dtilde).sqrt()) * (-(x * x) - y2).exp() * bracket);
    }
    time_value_quadrature(b, ctilde, dtilde, maturity)
}

fn time_value_quadrature(b: f64, ctilde: f64, dtilde: f64, maturity: f64) -> Result<f64> {
    // t = T u² removes the t^{−½} endpoint behaviour
    let f = |u: f64| {
        if u == 0.0 {
            return 0.0;
        }
        let t = maturity * u * u;
        (-b / t - dtilde * t).exp()
    };
    let integral = integrate_adaptive(f, 0.0, 1.0, 1e-13)?;
    Ok((-ctilde).exp() * maturity.sqrt() * FRAC_1_SQRT_2PI * integral)
}

/// Time value to first order in `D̃`:
///
/// ```text
/// e^{−C̃}/√2 [√(T/π) e^{−B/T} − √B erfc(√(B/T))
///            − (D̃/3)(√(T/π)(T − 2B) e^{−B/T} + 2B^{3/2} erfc(√(B/T)))]
/// ```
pub fn time_value_first_order(b: f64, ctilde: f64, dtilde: f64, maturity: f64) -> Result<f64> {
    check_kernel_inputs(b, maturity)?;
    let x = (b / maturity).sqrt();
    let g = (-(x * x)).exp();
    let sq = (maturity / PI).sqrt();
    // erfc(x) = e^{−x²} erfcx(x) keeps the bracket's common Gaussian factor
    let erfc_x = g * erfcx(x);
    let zero = sq * g - b.sqrt() * erfc_x;
    let first = sq * (maturity - 2.0 * b) * g + 2.0 * b.powf(1.5) * erfc_x;
    Ok((-ctilde).exp() / SQRT_2 * (zero - dtilde / 3.0 * first))
}

/// Leading asymptotics of the time value,
/// `T^{3/2}/(2√(2π)) exp(−B/T − C̃ − ln B − D̃T − 3T/(2B))`.
pub fn time_value_asymptotic(b: f64, ctilde: f64, dtilde: f64, maturity: f64) -> Result<f64> {
    check_kernel_inputs(b, maturity)?;
    if b == 0.0 {
        return Err(invalid("B", "the asymptotic form needs B > 0"));
    }
    let t = maturity;
    Ok(t.powf(1.5) * FRAC_1_SQRT_2PI * 0.5
        * (-b / t - ctilde - b.ln() - dtilde * t - 1.5 * t / b).exp())
}

/// Heat kernel coefficients of the Black model, `(B, C̃, D̃)`.
pub fn black_kernel(f0: f64, strike: f64, sigma: f64) -> (f64, f64, f64) {
    let m = (strike / f0).ln();
    (
        m * m / (2.0 * sigma * sigma),
        -sigma.ln() - 0.5 * (strike * f0).ln(),
        sigma * sigma / 8.0,
    )
}
