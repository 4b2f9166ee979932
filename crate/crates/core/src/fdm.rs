//! Reference finite difference solver for European options under SABR,
//! optionally with mean reversion of the volatility.
//!
//! The backward equation is solved in `(F, y = ln V)`:
//!
//! ```text
//! u_τ = ½V²F^{2β} u_FF + ρνVF^β u_Fy + ½ν² u_yy + (κ(V̄/V − 1) − ½ν²) u_y
//! ```
//!
//! on sinh-stretched grids with `F₀` and `ln α` on nodes. Time stepping is
//! a fractional-step scheme with one implicit tridiagonal sweep per
//! direction and the mixed derivative explicit. The payoff is averaged over
//! the cell of each node and the first steps are damped by implicit half
//! steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::params::SabrParams;
use crate::pricers::{black_implied, OptionKind, OptionSpec};

/// Boundary condition at `F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowerBoundary {
    /// The forward is absorbed at zero: the option pays its value at `F = 0`.
    Absorbing,
    /// Zero flux: `∂u/∂F = 0`.
    Reflecting,
}

/// Time splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Splitting {
    /// Yanenko fractional steps in stabilising-correction form, `θ = ½`:
    /// an explicit predictor followed by one implicit sweep in `F` and one
    /// in `V`.
    Yanenko,
    /// Modified Craig–Sneyd, `θ = ⅓`: a second predictor–corrector pass
    /// that restores second order in time with the explicit mixed term.
    CraigSneyd,
}

impl Splitting {
    fn theta(self) -> f64 {
        match self {
            Splitting::Yanenko => 0.5,
            Splitting::CraigSneyd => 1.0 / 3.0,
        }
    }
}

/// Grid, domain and scheme settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdmConfig {
    /// Nodes in `F`.
    pub nf: usize,
    /// Nodes in `V`.
    pub nv: usize,
    /// Time steps.
    pub nt: usize,
    /// `F_max = F₀ exp(f_std · αF₀^(β−1) √T)`.
    pub f_std: f64,
    /// `ln V ∈ ln α ± v_std · ν√T`.
    pub v_std: f64,
    /// Smallest half-width of the `ln V` domain, used when `ν√T` is tiny.
    pub v_min_width: f64,
    pub lower: LowerBoundary,
    /// Sinh stretching length in `F`, in units of `F₀`. Smaller values
    /// concentrate more nodes near `F₀`.
    pub f_stretch: f64,
    /// Sinh stretching length in `ln V`, in units of the domain half-width.
    pub v_stretch: f64,
    pub splitting: Splitting,
    /// Initial steps replaced by two implicit half steps each.
    pub rannacher: usize,
    /// Time nodes `τ_k = T (k/nt)^grading`; values above 1 refine the steps
    /// next to the payoff.
    pub time_grading: f64,
    /// Exponential fitting of the sweeps.
    pub fitting: bool,
}

impl Default for FdmConfig {
    fn default() -> Self {
        Self {
            nf: 400,
            nv: 200,
            nt: 30,
            f_std: 5.0,
            v_std: 5.0,
            v_min_width: 0.25,
            lower: LowerBoundary::Absorbing,
            f_stretch: 0.25,
            v_stretch: 0.5,
            splitting: Splitting::CraigSneyd,
            rannacher: 1,
            time_grading: 1.5,
            fitting: true,
        }
    }
}

impl FdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nf < 3 {
            return Err(invalid("nf", format!("needs at least 3 nodes, got {}", self.nf)));
        }
        if self.nv < 3 {
            return Err(invalid("nv", format!("needs at least 3 nodes, got {}", self.nv)));
        }
        if self.nt < 1 {
            return Err(invalid("nt", "needs at least one time step"));
        }
        if self.rannacher > self.nt {
            return Err(invalid("rannacher", "exceeds the number of time steps"));
        }
        for (name, v) in [
            ("f_std", self.f_std),
            ("v_std", self.v_std),
            ("v_min_width", self.v_min_width),
            ("f_stretch", self.f_stretch),
            ("v_stretch", self.v_stretch),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.time_grading >= 1.0) || !self.time_grading.is_finite() {
            return Err(invalid("time_grading", format!("must be at least 1, got {}", self.time_grading)));
        }
        Ok(())
    }

    /// The same settings with the intervals in each space direction
    /// multiplied by `space` and the time steps by `time`. Refined grids
    /// contain the coarse ones.
    pub fn refined(&self, space: usize, time: usize) -> Self {
        Self {
            nf: (self.nf - 1) * space + 1,
            nv: (self.nv - 1) * space + 1,
            nt: self.nt * time,
            ..*self
        }
    }
}

/// Nodes `lo = x₀ < … < x_{n−1} = hi` clustered around `centre`, which is
/// itself a node: `x = centre + λ sinh(·)` on either side.
pub fn sinh_grid(lo: f64, hi: f64, centre: f64, n: usize, lambda: f64) -> Vec<f64> {
    assert!(n >= 3 && lo < centre && centre < hi);
    let m = n - 1;
    let c1 = ((lo - centre) / lambda).asinh();
    let c2 = ((hi - centre) / lambda).asinh();
    let j = ((m as f64 * -c1 / (c2 - c1)).round() as usize).clamp(1, m - 1);
    let mut x: Vec<f64> = (0..=m)
        .map(|i| {
            if i <= j {
                centre + lambda * (c1 * (1.0 - i as f64 / j as f64)).sinh()
            } else {
                centre + lambda * (c2 * (i - j) as f64 / (m - j) as f64).sinh()
            }
        })
        .collect();
    x[0] = lo;
    x[j] = centre;
    x[m] = hi;
    x
}

/// Three-point weights on a non-uniform grid, `(lower, diagonal, upper)`.
#[derive(Debug, Clone, Copy, Default)]
struct Weights {
    l: f64,
    d: f64,
    u: f64,
}

fn first_derivative(x: &[f64]) -> Vec<Weights> {
    let mut w = vec![Weights::default(); x.len()];
    for i in 1..x.len() - 1 {
        let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        w[i] = Weights {
            l: -hp / (hm * (hm + hp)),
            d: (hp - hm) / (hm * hp),
            u: hm / (hp * (hm + hp)),
        };
    }
    w
}

fn second_derivative(x: &[f64]) -> Vec<Weights> {
    let mut w = vec![Weights::default(); x.len()];
    for i in 1..x.len() - 1 {
        let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        w[i] = Weights {
            l: 2.0 / (hm * (hm + hp)),
            d: -2.0 / (hm * hp),
            u: 2.0 / (hp * (hm + hp)),
        };
    }
    w
}

/// Il'in fitting factor `Pe·coth(Pe)` applied to the diffusion `a` for
/// convection `b` on spacing `h`.
fn fitted_diffusion(a: f64, b: f64, h: f64) -> f64 {
    let pe = 0.5 * b * h;
    if pe == 0.0 {
        return a;
    }
    if a <= 0.0 {
        // pure convection: the fitted scheme is upwind
        return pe.abs();
    }
    let pe = pe / a;
    if pe.abs() < 1e-4 {
        a * (1.0 + pe * pe / 3.0)
    } else {
        a * pe / pe.tanh()
    }
}

/// Thomas algorithm for one line; `rhs` is overwritten with the solution.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    let mut d = diag[0];
    scratch[0] = sup[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - sub[i] * scratch[i - 1];
        scratch[i] = sup[i] / d;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Tridiagonal operator along one direction with node-dependent
/// coefficients, stored line by line.
struct LineOperator {
    n: usize,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl LineOperator {
    fn apply_line(&self, line: usize, u: &[f64], out: &mut [f64]) {
        let o = line * self.n;
        let n = self.n;
        out[0] = self.diag[o] * u[0] + self.sup[o] * u[1];
        for i in 1..n - 1 {
            out[i] = self.sub[o + i] * u[i - 1] + self.diag[o + i] * u[i] + self.sup[o + i] * u[i + 1];
        }
        out[n - 1] = self.sub[o + n - 1] * u[n - 2] + self.diag[o + n - 1] * u[n - 1];
    }

    /// Solves `(I − c L) x = rhs` on one line.
    fn solve_line(&self, line: usize, c: f64, rhs: &mut [f64], work: &mut [f64]) {
        let o = line * self.n;
        let n = self.n;
        let (sub, rest) = work.split_at_mut(n);
        let (diag, rest) = rest.split_at_mut(n);
        let (sup, scratch) = rest.split_at_mut(n);
        for i in 0..n {
            sub[i] = -c * self.sub[o + i];
            diag[i] = 1.0 - c * self.diag[o + i];
            sup[i] = -c * self.sup[o + i];
        }
        solve_tridiagonal(sub, diag, sup, rhs, &mut scratch[..n]);
    }
}

/// Values on the `(F, V)` grid after backward induction, `V`-major:
/// `values[j · f.len() + i]` is the price at `(f[i], v[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub spec: OptionSpec,
    pub f: Vec<f64>,
    pub v: Vec<f64>,
    pub values: Vec<f64>,
    /// Index of `F₀` in `f` and of `α` in `v`.
    pub origin: (usize, usize),
    /// Largest `Δt |ρνVF^β| / (Δf Δy)` of the explicit mixed term.
    pub mixed_ratio: f64,
}

impl PriceGrid {
    /// Discounted price at `(F₀, α)`.
    pub fn price(&self) -> f64 {
        let (i, j) = self.origin;
        self.values[j * self.f.len() + i]
    }
}

/// Mixed-term ratio beyond which the mixed term alone would be unstable
/// under explicit Euler. Both splittings stay stable past it, so exceeding
/// it is logged rather than rejected.
pub const MIXED_RATIO_BOUND: f64 = 1.0;

struct Solver<'a> {
    spec: OptionSpec,
    config: &'a FdmConfig,
    f: Vec<f64>,
    y: Vec<f64>,
    i0: usize,
    j0: usize,
    /// Sweeps in `F` (lines of constant `V`) and in `y` (lines of constant `F`).
    lf: LineOperator,
    ly: LineOperator,
    mixed: Vec<f64>,
    df: Vec<Weights>,
    dy: Vec<Weights>,
}

impl<'a> Solver<'a> {
    fn new(params: &SabrParams, spec: OptionSpec, config: &'a FdmConfig) -> Result<Self> {
        let p = params;
        let t = spec.maturity;
        let sqrt_t = t.sqrt();
        let local_vol = p.alpha * p.f0.powf(p.beta - 1.0);
        let f_max = (p.f0 * (config.f_std * local_vol * sqrt_t).exp()).max(2.0 * spec.strike);
        let f = sinh_grid(0.0, f_max, p.f0, config.nf, config.f_stretch * p.f0);
        let i0 = f.iter().position(|&x| x == p.f0).expect("F0 is a node");

        let y0 = p.alpha.ln();
        let w = (config.v_std * p.nu * sqrt_t).max(config.v_min_width);
        let y = sinh_grid(y0 - w, y0 + w, y0, config.nv, config.v_stretch * w);
        let j0 = y.iter().position(|&x| x == y0).expect("ln alpha is a node");

        let (nf, nv) = (f.len(), y.len());
        let d2f = second_derivative(&f);
        let d2y = second_derivative(&y);
        let df = first_derivative(&f);
        let dy = first_derivative(&y);

        // F sweeps: ½V²F^{2β} ∂²/∂F², one line per V node
        let mut lf = LineOperator {
            n: nf,
            sub: vec![0.0; nf * nv],
            diag: vec![0.0; nf * nv],
            sup: vec![0.0; nf * nv],
        };
        for j in 0..nv {
            let v2 = (2.0 * y[j]).exp();
            let o = j * nf;
            for i in 1..nf - 1 {
                let a = 0.5 * v2 * f[i].powf(2.0 * p.beta);
                lf.sub[o + i] = a * d2f[i].l;
                lf.diag[o + i] = a * d2f[i].d;
                lf.sup[o + i] = a * d2f[i].u;
            }
            if config.lower == LowerBoundary::Reflecting {
                // mirror ghost node: u_FF ≈ 2(u₁ − u₀)/h²
                let a = 0.5 * v2 * if p.beta == 0.0 { 1.0 } else { 0.0 };
                let h = f[1] - f[0];
                lf.diag[o] = -2.0 * a / (h * h);
                lf.sup[o] = 2.0 * a / (h * h);
            }
            // F_max: zero second derivative, hence no F-diffusion
        }

        // y sweeps: ½ν² ∂²/∂y² + (κ(V̄/V − 1) − ½ν²) ∂/∂y, one line per F node
        let mut ly = LineOperator {
            n: nv,
            sub: vec![0.0; nf * nv],
            diag: vec![0.0; nf * nv],
            sup: vec![0.0; nf * nv],
        };
        let a = 0.5 * p.nu * p.nu;
        let mut row = vec![Weights::default(); nv];
        for j in 1..nv - 1 {
            let b = p.kappa * (p.vbar * (-y[j]).exp() - 1.0) - a;
            let h = 0.5 * (y[j + 1] - y[j - 1]);
            let a_fit = if config.fitting { fitted_diffusion(a, b, h) } else { a };
            row[j] = Weights {
                l: a_fit * d2y[j].l + b * dy[j].l,
                d: a_fit * d2y[j].d + b * dy[j].d,
                u: a_fit * d2y[j].u + b * dy[j].u,
            };
        }
        // V boundaries: zero second derivative and no flux from outside
        let absorbed = config.lower == LowerBoundary::Absorbing;
        for i in 0..nf {
            if absorbed && i == 0 {
                continue;
            }
            let o = i * nv;
            for j in 1..nv - 1 {
                ly.sub[o + j] = row[j].l;
                ly.diag[o + j] = row[j].d;
                ly.sup[o + j] = row[j].u;
            }
        }

        // mixed term ρνVF^β ∂²/∂F∂y on interior nodes
        let mut mixed = vec![0.0; nf * nv];
        if p.nu != 0.0 && p.rho != 0.0 {
            for j in 1..nv - 1 {
                let v = y[j].exp();
                for i in 1..nf - 1 {
                    mixed[j * nf + i] = p.rho * p.nu * v * f[i].powf(p.beta);
                }
            }
        }

        Ok(Self {
            spec,
            config,
            f,
            y,
            i0,
            j0,
            lf,
            ly,
            mixed,
            df,
            dy,
        })
    }

    fn nf(&self) -> usize {
        self.f.len()
    }

    fn nv(&self) -> usize {
        self.y.len()
    }

    /// Payoff averaged over a cell centred on each node, so that linear
    /// payoffs are reproduced exactly and put-call parity holds on the grid.
    fn payoff(&self) -> Vec<f64> {
        let f = &self.f;
        let n = f.len();
        let k = self.spec.strike;
        let row: Vec<f64> = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 {
                    0.0
                } else {
                    0.5 * (f[i] - f[i - 1]).min(f[i + 1] - f[i])
                };
                let (a, b) = (f[i] - w, f[i] + w);
                if b <= k || a >= k {
                    return self.intrinsic(f[i]);
                }
                match self.spec.kind {
                    OptionKind::Call => 0.5 * (b - k) * (b - k) / (b - a),
                    OptionKind::Put => 0.5 * (k - a) * (k - a) / (b - a),
                }
            })
            .collect();
        let mut u = Vec::with_capacity(n * self.nv());
        for _ in 0..self.nv() {
            u.extend_from_slice(&row);
        }
        u
    }

    fn intrinsic(&self, f: f64) -> f64 {
        match self.spec.kind {
            OptionKind::Call => (f - self.spec.strike).max(0.0),
            OptionKind::Put => (self.spec.strike - f).max(0.0),
        }
    }

    fn apply_f(&self, u: &[f64], out: &mut [f64]) {
        let nf = self.nf();
        out.par_chunks_mut(nf)
            .zip(u.par_chunks(nf))
            .enumerate()
            .for_each(|(j, (o, line))| self.lf.apply_line(j, line, o));
    }

    fn apply_y(&self, u: &[f64], out: &mut [f64]) {
        let (nf, nv) = (self.nf(), self.nv());
        let ut = transpose(u, nf, nv);
        let mut ot = vec![0.0; nf * nv];
        ot.par_chunks_mut(nv)
            .zip(ut.par_chunks(nv))
            .enumerate()
            .for_each(|(i, (o, line))| self.ly.apply_line(i, line, o));
        transpose_into(&ot, nv, nf, out);
    }

    fn apply_mixed(&self, u: &[f64], out: &mut [f64]) {
        let nf = self.nf();
        let nv = self.nv();
        out.par_chunks_mut(nf).enumerate().for_each(|(j, o)| {
            o.fill(0.0);
            if j == 0 || j == nv - 1 {
                return;
            }
            let wy = self.dy[j];
            let rows = [
                (wy.l, &u[(j - 1) * nf..j * nf]),
                (wy.d, &u[j * nf..(j + 1) * nf]),
                (wy.u, &u[(j + 1) * nf..(j + 2) * nf]),
            ];
            for i in 1..nf - 1 {
                let c = self.mixed[j * nf + i];
                if c == 0.0 {
                    continue;
                }
                let wf = self.df[i];
                let mut s = 0.0;
                for (w, r) in rows {
                    s += w * (wf.l * r[i - 1] + wf.d * r[i] + wf.u * r[i + 1]);
                }
                o[i] = c * s;
            }
        });
    }

    /// `x ← (I − c L_F)⁻¹ x` line by line.
    fn sweep_f(&self, c: f64, x: &mut [f64]) {
        let nf = self.nf();
        x.par_chunks_mut(nf).enumerate().for_each_init(
            || vec![0.0; 4 * nf],
            |work, (j, line)| self.lf.solve_line(j, c, line, work),
        );
    }

    fn sweep_y(&self, c: f64, x: &mut [f64]) {
        let (nf, nv) = (self.nf(), self.nv());
        let mut xt = transpose(x, nf, nv);
        xt.par_chunks_mut(nv).enumerate().for_each_init(
            || vec![0.0; 4 * nv],
            |work, (i, line)| self.ly.solve_line(i, c, line, work),
        );
        transpose_into(&xt, nv, nf, x);
    }

    /// One step of length `dt` with weight `theta`; `craig_sneyd` adds the
    /// second predictor–corrector pass.
    fn step(&self, u: &mut Vec<f64>, dt: f64, theta: f64, craig_sneyd: bool) {
        let n = u.len();
        let mut l0 = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        self.apply_mixed(u, &mut l0);
        self.apply_f(u, &mut l1);
        self.apply_y(u, &mut l2);

        let c = theta * dt;
        // Y₀ = U + Δt (L₀ + L₁ + L₂) U
        let mut y: Vec<f64> = (0..n).map(|k| u[k] + dt * (l0[k] + l1[k] + l2[k])).collect();
        // (I − θΔt L₁) Y₁ = Y₀ − θΔt L₁ U, then the same in y
        y.par_iter_mut().zip(&l1).for_each(|(a, b)| *a -= c * b);
        self.sweep_f(c, &mut y);
        y.par_iter_mut().zip(&l2).for_each(|(a, b)| *a -= c * b);
        self.sweep_y(c, &mut y);
        if !craig_sneyd {
            *u = y;
            return;
        }

        let mut m0 = vec![0.0; n];
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        self.apply_mixed(&y, &mut m0);
        self.apply_f(&y, &mut m1);
        self.apply_y(&y, &mut m2);
        // Ỹ₀ = Y₀ + θΔt (L₀Y₂ − L₀U) + (½ − θ)Δt (L Y₂ − L U)
        let half = (0.5 - theta) * dt;
        let mut z: Vec<f64> = (0..n)
            .map(|k| {
                let y0 = u[k] + dt * (l0[k] + l1[k] + l2[k]);
                y0 + c * (m0[k] - l0[k])
                    + half * ((m0[k] + m1[k] + m2[k]) - (l0[k] + l1[k] + l2[k]))
                    - c * l1[k]
            })
            .collect();
        self.sweep_f(c, &mut z);
        z.par_iter_mut().zip(&l2).for_each(|(a, b)| *a -= c * b);
        self.sweep_y(c, &mut z);
        *u = z;
    }

    fn run(&self) -> Result<PriceGrid> {
        let cfg = self.config;
        let t = self.spec.maturity;
        let node = |k: usize| t * (k as f64 / cfg.nt as f64).powf(cfg.time_grading);
        let mut u = self.payoff();
        let craig_sneyd = cfg.splitting == Splitting::CraigSneyd;
        let mut largest = 0.0f64;
        for s in 0..cfg.nt {
            let dt = node(s + 1) - node(s);
            largest = largest.max(dt);
            if s < cfg.rannacher {
                self.step(&mut u, 0.5 * dt, 1.0, false);
                self.step(&mut u, 0.5 * dt, 1.0, false);
            } else {
                self.step(&mut u, dt, cfg.splitting.theta(), craig_sneyd);
            }
        }
        if let Some(k) = u.iter().position(|x| !x.is_finite()) {
            let (i, j) = (k % self.nf(), k / self.nf());
            return Err(Error::Solver(format!(
                "non-finite value at F = {}, V = {} for strike {}",
                self.f[i],
                self.y[j].exp(),
                self.spec.strike
            )));
        }
        let df = self.spec.discount;
        u.iter_mut().for_each(|x| *x *= df);
        let mixed_ratio = self.mixed_ratio(largest);
        if mixed_ratio > MIXED_RATIO_BOUND {
            log::debug!(
                "explicit mixed term ratio {mixed_ratio:.3} exceeds {MIXED_RATIO_BOUND} \
                 (strike {}, maturity {})",
                self.spec.strike,
                self.spec.maturity
            );
        }
        Ok(PriceGrid {
            spec: self.spec,
            f: self.f.clone(),
            v: self.y.iter().map(|y| y.exp()).collect(),
            values: u,
            origin: (self.i0, self.j0),
            mixed_ratio,
        })
    }

    fn mixed_ratio(&self, dt: f64) -> f64 {
        let nf = self.nf();
        let mut worst: f64 = 0.0;
        for j in 1..self.nv() - 1 {
            let hy = 0.5 * (self.y[j + 1] - self.y[j - 1]);
            for i in 1..nf - 1 {
                let hf = 0.5 * (self.f[i + 1] - self.f[i - 1]);
                worst = worst.max(dt * self.mixed[j * nf + i].abs() / (hf * hy));
            }
        }
        worst
    }
}

fn transpose(u: &[f64], cols: usize, rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    transpose_into(u, cols, rows, &mut out);
    out
}

/// `u` has `rows` lines of length `cols`; `out` receives `cols` lines of
/// length `rows`.
fn transpose_into(u: &[f64], cols: usize, rows: usize, out: &mut [f64]) {
    out.par_chunks_mut(rows).enumerate().for_each(|(c, line)| {
        for (r, x) in line.iter_mut().enumerate() {
            *x = u[r * cols + c];
        }
    });
}

/// Prices one option on the full grid.
pub fn solve_grid(params: &SabrParams, spec: &OptionSpec, config: &FdmConfig) -> Result<PriceGrid> {
    params.validate()?;
    config.validate()?;
    if !(spec.maturity > 0.0) {
        return Err(invalid("maturity", format!("must be positive, got {}", spec.maturity)));
    }
    if !(spec.strike > 0.0) {
        return Err(invalid("strike", format!("must be positive, got {}", spec.strike)));
    }
    if !(spec.discount > 0.0 && spec.discount <= 1.0) {
        return Err(invalid("discount", format!("must lie in (0, 1], got {}", spec.discount)));
    }
    Solver::new(params, *spec, config)?.run()
}

/// One option of an FDM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmQuote {
    pub spec: OptionSpec,
    /// Discounted price at `(F₀, α)`.
    pub price: f64,
    /// Black implied volatility of `price`, when it lies inside the
    /// no-arbitrage band.
    pub black_vol: Option<f64>,
}

/// Prices and implied volatilities of an FDM run, with the price grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmSolution {
    pub params: SabrParams,
    pub config: FdmConfig,
    pub quotes: Vec<FdmQuote>,
    pub grids: Vec<PriceGrid>,
}

impl FdmSolution {
    pub fn prices(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.price).collect()
    }
}

/// Prices the given options, one solve each, in parallel.
pub fn solve_options(params: &SabrParams, specs: &[OptionSpec], config: &FdmConfig) -> Result<FdmSolution> {
    let grids = specs
        .par_iter()
        .map(|s| solve_grid(params, s, config))
        .collect::<Result<Vec<_>>>()?;
    let quotes = grids
        .iter()
        .map(|g| {
            let price = g.price();
            FdmQuote {
                spec: g.spec,
                price,
                black_vol: black_implied(price, params.f0, &g.spec).ok(),
            }
        })
        .collect();
    Ok(FdmSolution {
        params: *params,
        config: *config,
        quotes,
        grids,
    })
}

/// Out-of-the-money options (puts below `F₀`, calls from `F₀` up) at one
/// maturity.
pub fn solve(params: &SabrParams, strikes: &[f64], maturity: f64, config: &FdmConfig) -> Result<FdmSolution> {
    let specs: Vec<OptionSpec> = strikes
        .iter()
        .map(|&k| {
            if k < params.f0 {
                OptionSpec::put(k, maturity)
            } else {
                OptionSpec::call(k, maturity)
            }
        })
        .collect();
    solve_options(params, &specs, config)
}

/// Three runs refined by factors 1, 2, 4 and the observed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub values: [f64; 3],
    /// `log₂((v₀ − v₁)/(v₁ − v₂))`.
    pub order: f64,
    /// Richardson extrapolation of the finest two runs.
    pub extrapolated: f64,
    /// `|v₂ − extrapolated|`.
    pub error_estimate: f64,
}

impl Refinement {
    fn from_values(values: [f64; 3]) -> Self {
        let [a, b, c] = values;
        let order = ((a - b) / (b - c)).abs().log2();
        let factor = 2f64.powf(order) - 1.0;
        let extrapolated = c + (c - b) / factor;
        Self {
            values,
            order,
            extrapolated,
            error_estimate: (c - extrapolated).abs(),
        }
    }
}

/// Observed convergence orders of the price at `(F₀, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Both space directions refined, time steps fixed.
    pub spatial: Refinement,
    /// Time steps refined on the base grid.
    pub temporal: Refinement,
}

/// Grid-doubling study around a base configuration.
pub fn convergence_report(params: &SabrParams, spec: &OptionSpec, base: &FdmConfig) -> Result<ConvergenceReport> {
    let run = |c: FdmConfig| solve_grid(params, spec, &c).map(|g| g.price());
    let spatial = [1, 2, 4]
        .par_iter()
        .map(|&s| run(base.refined(s, 1)))
        .collect::<Result<Vec<_>>>()?;
    let temporal = [1, 2, 4]
        .par_iter()
        .map(|&s| run(base.refined(1, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        spatial: Refinement::from_values([spatial[0], spatial[1], spatial[2]]),
        temporal: Refinement::from_values([temporal[0], temporal[1], temporal[2]]),
    })
}
