//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls the closed forms under test: line integrals are done
//! by adaptive Simpson in the polar angle of the geodesic circle, and
//! V-derivatives of the distance come from truncated Taylor arithmetic.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use heatvol::SabrParams;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random SABR parameters with local vol in [0.1, 0.6] plus a strike with
/// `K/F₀ ∈ [0.3, 3]`.
pub fn random_draw(rng: &mut StdRng, beta_max: f64) -> (SabrParams, f64) {
    let f0: f64 = rng.gen_range(0.5..5.0);
    let beta: f64 = rng.gen_range(0.0..beta_max);
    let local = rng.gen_range(0.1..0.6);
    let alpha = local * f0.powf(1.0 - beta);
    let nu = rng.gen_range(0.1..1.0);
    let rho = rng.gen_range(-0.9..0.9);
    let m: f64 = rng.gen_range(0.3f64.ln()..3f64.ln());
    let p = SabrParams::new(f0, alpha, beta, nu, rho).unwrap();
    (p, f0 * m.exp())
}

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // split once so symmetric integrands cannot fool the first estimate
    let n = 8;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let x0 = a + h * i as f64;
            let x1 = x0 + h;
            let fa = f(x0);
            let fb = f(x1);
            let fm = f(0.5 * (x0 + x1));
            let whole = h / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, x0, x1, fa, fm, fb, whole, tol / n as f64, 50)
        })
        .sum()
}

/// Forward level from the transformed coordinate.
pub fn forward_from_q(f0: f64, beta: f64, q: f64) -> f64 {
    if beta == 1.0 {
        f0 * q.exp()
    } else {
        (f0.powf(1.0 - beta) + (1.0 - beta) * q).powf(1.0 / (1.0 - beta))
    }
}

/// Circle through two half-plane points, from the textbook formulas.
pub struct Circle {
    pub center: f64,
    pub radius: f64,
    pub theta1: f64,
    pub theta2: f64,
}

pub fn circle(x1: f64, y1: f64, x2: f64, y2: f64) -> Circle {
    let center = (x2 * x2 - x1 * x1 + y2 * y2 - y1 * y1) / (2.0 * (x2 - x1));
    let radius = (y1 * y1 + (x1 - center) * (x1 - center)).sqrt();
    Circle {
        center,
        radius,
        theta1: y1.atan2(x1 - center),
        theta2: y2.atan2(x2 - center),
    }
}

pub fn distance(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    (1.0 + ((x2 - x1).powi(2) + (y2 - y1).powi(2)) / (2.0 * y1 * y2)).acosh()
}

/// Rescaled SABR setting seen by the oracles.
pub struct Setting {
    pub f0: f64,
    pub beta: f64,
    pub rho: f64,
    pub alpha_hat: f64,
    pub kappa_hat: f64,
    pub vbar_hat: f64,
}

impl Setting {
    pub fn new(p: &SabrParams) -> Self {
        Self {
            f0: p.f0,
            beta: p.beta,
            rho: p.rho,
            alpha_hat: p.alpha / p.nu,
            kappa_hat: p.kappa / (p.nu * p.nu),
            vbar_hat: p.vbar / p.nu,
        }
    }

    fn sr(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    pub fn q_of(&self, k: f64) -> f64 {
        if self.beta == 1.0 {
            (k / self.f0).ln()
        } else {
            (k.powf(1.0 - self.beta) - self.f0.powf(1.0 - self.beta)) / (1.0 - self.beta)
        }
    }

    pub fn vmin(&self, q: f64) -> f64 {
        let a = self.alpha_hat;
        (a * a + 2.0 * self.rho * a * q + q * q).sqrt()
    }

    pub fn start(&self) -> (f64, f64) {
        (-self.rho * self.alpha_hat / self.sr(), self.alpha_hat)
    }

    pub fn point(&self, q: f64, v: f64) -> (f64, f64) {
        ((q - self.rho * v) / self.sr(), v)
    }

    fn forward_at(&self, x: f64, y: f64) -> f64 {
        let q = self.rho * y + self.sr() * x;
        forward_from_q(self.f0, self.beta, q)
    }

    /// The non-gauge SABR connection plus the mean-reversion terms, as
    /// `(A_x, A_y)`.
    pub fn one_form(&self, x: f64, y: f64) -> (f64, f64) {
        let f = self.forward_at(x, y);
        let cp = self.beta * f.powf(self.beta - 1.0);
        let sr = self.sr();
        let mut ax = 0.5 * self.rho * cp * self.rho / sr;
        let mut ay = -0.5 * self.rho * cp;
        if self.kappa_hat != 0.0 {
            let w = self.kappa_hat * (y - self.vbar_hat) / (y * y);
            ax -= self.rho / sr * w;
            ay += w;
        }
        (ax, ay)
    }

    /// SABR potential `Q`.
    pub fn potential(&self, x: f64, y: f64) -> f64 {
        let b = self.beta;
        let f = self.forward_at(x, y);
        let k = 0.25 * b * (1.0 - b + b / (2.0 * (1.0 - self.rho * self.rho)));
        k * y * y / f.powf(2.0 * (1.0 - b))
    }

    /// Line integral of `g(x, y, dx/dθ, dy/dθ)` along the geodesic from the
    /// start to `(x2, y2)`, parameterised by polar angle (or by `y` when the
    /// geodesic is vertical).
    pub fn along<G: Fn(f64, f64, f64, f64) -> f64>(&self, x2: f64, y2: f64, g: G, tol: f64) -> f64 {
        let (x1, y1) = self.start();
        if (x2 - x1).abs() < 1e-13 * x1.abs().max(1.0) {
            return simpson(|y| g(x1, y, 0.0, 1.0), y1, y2, tol);
        }
        let c = circle(x1, y1, x2, y2);
        simpson(
            |th: f64| {
                let (s, co) = th.sin_cos();
                g(
                    c.center + c.radius * co,
                    c.radius * s,
                    -c.radius * s,
                    c.radius * co,
                )
            },
            c.theta1,
            c.theta2,
            tol,
        )
    }

    /// `M⁽¹⁾ = ∫ A⁽¹⁾` along the geodesic.
    pub fn m1(&self, x2: f64, y2: f64, tol: f64) -> f64 {
        self.along(
            x2,
            y2,
            |x, y, dx, dy| {
                let (ax, ay) = self.one_form(x, y);
                ax * dx + ay * dy
            },
            tol,
        )
    }

    /// `−(1/d) ∫ Q ds` along the geodesic.
    pub fn a1_q(&self, x2: f64, y2: f64, tol: f64) -> f64 {
        let (x1, y1) = self.start();
        let d = distance(x1, y1, x2, y2);
        // ds = √(dx² + dy²) / y
        let integral = self.along(
            x2,
            y2,
            |x, y, dx, dy| self.potential(x, y) * dx.hypot(dy) / y,
            tol,
        );
        -integral.abs() / d
    }
}

/// Truncated Taylor series `Σ cₖ hᵏ`, k ≤ 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet(pub [f64; 5]);

impl Jet {
    pub fn var(x: f64) -> Self {
        Jet([x, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn cst(x: f64) -> Self {
        Jet([x, 0.0, 0.0, 0.0, 0.0])
    }

    /// k-th derivative.
    pub fn deriv(&self, k: usize) -> f64 {
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        self.0[k] * fact[k]
    }

    pub fn recip(self) -> Self {
        let a = self.0;
        let mut r = [0.0; 5];
        r[0] = 1.0 / a[0];
        for k in 1..5 {
            let s: f64 = (1..=k).map(|j| a[j] * r[k - j]).sum();
            r[k] = -s / a[0];
        }
        Jet(r)
    }

    pub fn ln(self) -> Self {
        // (ln f)' = f'/f
        let a = self.0;
        let mut r = [0.0; 5];
        r[0] = a[0].ln();
        for k in 1..5 {
            let s: f64 = (1..k).map(|j| j as f64 * r[j] * a[k - j]).sum();
            r[k] = (a[k] - s / k as f64) / a[0];
        }
        Jet(r)
    }

    pub fn exp(self) -> Self {
        let a = self.0;
        let mut r = [0.0; 5];
        r[0] = a[0].exp();
        for k in 1..5 {
            let s: f64 = (1..=k).map(|j| j as f64 * a[j] * r[k - j]).sum();
            r[k] = s / k as f64;
        }
        Jet(r)
    }

    pub fn sqrt(self) -> Self {
        let a = self.0;
        let mut r = [0.0; 5];
        r[0] = a[0].sqrt();
        for k in 1..5 {
            let s: f64 = (1..k).map(|j| r[j] * r[k - j]).sum();
            r[k] = (a[k] - s) / (2.0 * r[0]);
        }
        Jet(r)
    }

    pub fn scale(self, c: f64) -> Self {
        Jet(self.0.map(|v| v * c))
    }

    pub fn acosh1p(self) -> Self {
        // ln(1 + δ + √(δ(2 + δ)))
        let inner = self * (self + Jet::cst(2.0));
        (Jet::cst(1.0) + self + inner.sqrt()).ln()
    }

    pub fn sinh(self) -> Self {
        (self.exp() - (-self).exp()).scale(0.5)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut r = self.0;
        for (v, w) in r.iter_mut().zip(o.0) {
            *v += w;
        }
        Jet(r)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet(self.0.map(|v| -v))
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut r = [0.0; 5];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate().take(5 - i) {
                r[i + j] += a * b;
            }
        }
        Jet(r)
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Geodesic distance from the start to `(q, V)` as a jet in `V`.
pub fn distance_jet(s: &Setting, q: f64, v: f64) -> Jet {
    let (x1, y1) = s.start();
    let vj = Jet::var(v);
    let sr = (1.0 - s.rho * s.rho).sqrt();
    let x2 = (Jet::cst(q) - vj.scale(s.rho)).scale(1.0 / sr);
    let dx = x2 - Jet::cst(x1);
    let dy = vj - Jet::cst(y1);
    let delta = (dx * dx + dy * dy) / vj.scale(2.0 * y1);
    delta.acosh1p()
}

/// Five-point first and second derivatives.
pub fn fd5<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> (f64, f64) {
    let (p1, m1, p2, m2, c) = (f(x + h), f(x - h), f(x + 2.0 * h), f(x - 2.0 * h), f(x));
    let d1 = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    let d2 = (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * c) / (12.0 * h * h);
    (d1, d2)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `D̃` through the saddle-point formula written with `C̃ = C + ½ ln B''`,
/// from the curvature parts `a₁^(Q)`, `a₁^(A)` of the kernel and derivatives
/// taken here. Returns `(via C, via C̃)`.
pub fn dtilde_unsimplified(ker: &heatvol::kernel::SabrKernel, k: f64) -> (f64, f64) {
    let s = Setting::new(ker.params());
    let q = s.q_of(k);
    let vm = s.vmin(q);
    let d = distance_jet(&s, q, vm);
    let b = (d * d).scale(0.5);
    let (b2, b3, b4) = (b.deriv(2), b.deriv(3), b.deriv(4));
    let ln_delta = d.ln() - d.sinh().ln();
    // wide enough that rounding stays below 1e-12 in the second derivative
    let h = 4e-3 * vm;
    let (m1p, m1pp) = fd5(|v| ker.m1_qv(q, v), vm, h);
    let cp = -0.5 * ln_delta.deriv(1) + m1p;
    let cpp = -0.5 * ln_delta.deriv(2) + m1pp;

    let dd = d.0[0];
    let a1r = -0.125 * (1.0 + (1.0 / dd.tanh() - 1.0 / dd) / dd);
    let parts = ker.coefficients(k).unwrap().parts;
    let big_d = -(parts.a1q + a1r + parts.a1a);

    let r3 = b3 / b2;
    let r4 = b4 / b2;
    let via_c = big_d + (cpp - cp * cp + 0.25 * r4 - r3 * cp - 5.0 / 12.0 * r3 * r3) / (2.0 * b2);
    let ctp = cp + 0.5 * r3;
    let ctpp = cpp + 0.5 * (r4 - r3 * r3);
    let via_ct = big_d + (ctpp - ctp * ctp - 0.25 * r4 + r3 * r3 / 3.0) / (2.0 * b2);
    (via_c, via_ct)
}
