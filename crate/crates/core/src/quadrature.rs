//! Gauss–Legendre quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of an n-point Gauss–Legendre rule on [−1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on P_n from the Chebyshev-like
    /// initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Points `(abscissa, weight)` mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Globally adaptive Gauss–Legendre integration: intervals are bisected
/// until the 10-point and 20-point rules agree on each piece.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let lo = GaussLegendre::new(10);
    let hi = GaussLegendre::new(20);
    let mut stack = vec![(a, b, 0usize)];
    // pieces whose contribution is negligible against the whole are accepted
    let whole = hi.integrate(a, b, &f).abs();
    let mut total = 0.0;
    let mut err_total = 0.0;
    let scale_tol = tol.max(f64::EPSILON);
    while let Some((x0, x1, depth)) = stack.pop() {
        let coarse = lo.integrate(x0, x1, &f);
        let fine = hi.integrate(x0, x1, &f);
        let err = (fine - coarse).abs();
        let frac = (x1 - x0) / (b - a);
        let allowed = scale_tol * fine.abs().max(whole * frac).max(1e-300) * frac.sqrt().max(1e-3);
        if err <= allowed.max(1e-15 * fine.abs()) || depth >= 40 {
            if depth >= 40 && err > allowed {
                return Err(Error::Quadrature {
                    estimate: total + fine,
                    change: err,
                });
            }
            total += fine;
            err_total += err;
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((x0, mid, depth + 1));
            stack.push((mid, x1, depth + 1));
        }
    }
    if !total.is_finite() {
        return Err(Error::Quadrature {
            estimate: total,
            change: err_total,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_are_symmetric() {
        for n in [1, 2, 5, 16, 32, 64] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}: {s}");
            for i in 0..n {
                assert!((gl.nodes()[i] + gl.nodes()[n - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let gl = GaussLegendre::new(6);
        // ∫_0^2 x^11 dx = 2^12 / 12
        let v = gl.integrate(0.0, 2.0, |x| x.powi(11));
        assert!((v - 4096.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_peaked_integrands() {
        let v = integrate_adaptive(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12).unwrap();
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() / exact < 1e-11, "{v} vs {exact}");
    }
}
