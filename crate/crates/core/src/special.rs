//! Error-function family and normal distribution helpers.

pub use libm::erfc;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
pub(crate) const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Scaled complementary error function `exp(x²)·erfc(x)`.
///
/// Evaluated through Laplace's continued fraction for `x ≥ 2`, which keeps
/// full relative precision far into the tail where `erfc` underflows.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // erfc(−x) = 2 − erfc(x)
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 2.0 {
        return (x * x).exp() * erfc(x);
    }
    // Modified Lentz on x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...)))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..5000 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    FRAC_1_SQRT_PI / f
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cumulative distribution, accurate in relative terms in
/// both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}
