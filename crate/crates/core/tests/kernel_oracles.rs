mod common;

use common::*;
use heatvol::geometry::{GeodesicData, GeodesicShape};
use heatvol::kernel::{discriminant, KernelConfig, SabrKernel};
use heatvol::SabrParams;

#[test]
fn connection_and_potential_integrals_match_line_integrals() {
    let mut r = rng(7);
    for _ in 0..100 {
        let (p, k) = random_draw(&mut r, 0.99);
        let ker = SabrKernel::new(&p).unwrap();
        let s = Setting::new(&p);
        let geo = ker.geodesic(k);
        let m = ker.m1_qv(geo.q, geo.vmin);
        let m_or = s.m1(geo.x2, geo.y2, 1e-14);
        assert!(rel(m, m_or) < 1e-8, "{p:?} K={k}: {m} vs {m_or}");
        let q = ker.a1_q(&geo);
        let q_or = s.a1_q(geo.x2, geo.y2, 1e-14);
        assert!(rel(q, q_or) < 1e-8, "{p:?} K={k}: {q} vs {q_or}");
    }
}

#[test]
fn full_connection_adds_the_exact_part() {
    let p = SabrParams::reference();
    let ker = SabrKernel::new(&p).unwrap();
    let s = Setting::new(&p);
    let geo = ker.geodesic(5.0);
    // A⁽⁰⁾ = ½ d ln F^β integrates to (β/2) ln(K/F₀)
    let exact = 0.5 * p.beta * (5.0f64 / 4.0).ln();
    let m_or = exact + s.m1(geo.x2, geo.y2, 1e-14);
    assert!(rel(ker.connection_m(5.0, geo.vmin), m_or) < 1e-10);
}

// strike where the discriminant changes sign for the given parameters
fn boundary_strike(ker: &SabrKernel, mut lo: f64, mut hi: f64) -> f64 {
    let disc = |k: f64| match ker.geodesic(k).shape {
        GeodesicShape::Arc { center, radius, .. } => discriminant(ker.constants(), center, radius),
        GeodesicShape::Vertical => unreachable!(),
    };
    let s_lo = disc(lo).signum();
    assert_ne!(s_lo, disc(hi).signum());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if disc(mid).signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn closed_forms_are_continuous_across_the_branch_boundary() {
    let cases = [
        (
            SabrParams::new(
                4.606451565625837,
                0.44043786170941274,
                0.45480765145189245,
                0.7688267519410154,
                -0.3015331251980833,
            ),
            1.481284633659961,
            1.4985237942544893,
        ),
        (
            SabrParams::new(
                0.9526262145423103,
                0.2749503309772674,
                0.2737437070891639,
                0.5816099565033572,
                0.4392263600756855,
            ),
            0.3772652448435737,
            0.38165585012955633,
        ),
    ];
    for (p, lo, hi) in cases {
        let p = p.unwrap();
        let ker = SabrKernel::new(&p).unwrap();
        let s = Setting::new(&p);
        let kb = boundary_strike(&ker, lo, hi);
        // on the boundary and on both sides of it, at relative distance
        // ~1e-8 in the discriminant
        for k in [
            kb,
            kb * (1.0 - 1e-9),
            kb * (1.0 + 1e-9),
            kb * (1.0 - 1e-6),
            kb * (1.0 + 1e-6),
        ] {
            let geo = ker.geodesic(k);
            let m = ker.m1_qv(geo.q, geo.vmin);
            let q = ker.a1_q(&geo);
            let (mo, qo) = (s.m1(geo.x2, geo.y2, 1e-14), s.a1_q(geo.x2, geo.y2, 1e-14));
            assert!(rel(m, mo) < 1e-9, "K={k}: {m} vs {mo}");
            assert!(rel(q, qo) < 1e-9, "K={k}: {q} vs {qo}");
        }
        let m_at = |k: f64| {
            let g = ker.geodesic(k);
            ker.m1_qv(g.q, g.vmin)
        };
        assert!(rel(m_at(kb * (1.0 - 1e-9)), m_at(kb * (1.0 + 1e-9))) < 1e-6);
    }
}

#[test]
fn vertical_potential_integral() {
    let p = SabrParams::reference();
    let ker = SabrKernel::new(&p).unwrap();
    let s = Setting::new(&p);
    let ah = ker.scaling().alpha_hat;
    for v in [0.5 * ah, 1.7 * ah] {
        let geo = GeodesicData::to_point(ah, p.rho * (v - ah), v, p.rho);
        assert!(geo.is_vertical());
        assert!(rel(ker.a1_q(&geo), s.a1_q(geo.x2, geo.y2, 1e-14)) < 1e-10);
    }
}

#[test]
fn b_ladder_matches_finite_differences_of_the_distance() {
    let mut r = rng(3);
    for _ in 0..50 {
        let (p, k) = random_draw(&mut r, 1.0);
        let ker = SabrKernel::new(&p).unwrap();
        let s = Setting::new(&p);
        let geo = ker.geodesic(k);
        let lad = ker.coefficients(k).unwrap().parts.ladder;
        let b = |v: f64| 0.5 * distance_qv_oracle(&s, geo.q, v).powi(2);
        let vm = geo.vmin;
        let h = 1e-3 * vm;
        let b2 = (b(vm + h) - 2.0 * b(vm) + b(vm - h)) / (h * h);
        assert!(rel(lad.bpp, b2) < 1e-5, "{} vs {b2}", lad.bpp);
        let b3 = (b(vm + 2.0 * h) - 2.0 * b(vm + h) + 2.0 * b(vm - h) - b(vm - 2.0 * h))
            / (2.0 * h.powi(3));
        assert!(
            rel(lad.b3_over_bpp, b3 / b2) < 1e-3,
            "{} vs {}",
            lad.b3_over_bpp,
            b3 / b2
        );
        // the Taylor-mode derivatives are exact up to rounding
        let dj = distance_jet(&s, geo.q, vm);
        let bj = (dj * dj).scale(0.5);
        assert!(bj.deriv(1).abs() < 1e-9 * bj.deriv(2));
        assert!(rel(lad.bpp, bj.deriv(2)) < 1e-10);
        assert!(rel(lad.b3_over_bpp, bj.deriv(3) / bj.deriv(2)) < 1e-9);
        assert!(rel(lad.b4_over_bpp, bj.deriv(4) / bj.deriv(2)) < 1e-8);
        assert!(rel(lad.bpp, geo.d * lad.ddpp) < 1e-12);
    }
}

fn distance_qv_oracle(s: &Setting, q: f64, v: f64) -> f64 {
    let (x1, y1) = s.start();
    let (x2, y2) = s.point(q, v);
    distance(x1, y1, x2, y2)
}

#[test]
fn saddle_point_routes_agree() {
    let mut r = rng(5);
    for _ in 0..30 {
        let (p, k) = random_draw(&mut r, 0.99);
        let ker = SabrKernel::new(&p).unwrap();
        let dt = ker.coefficients(k).unwrap().dtilde;
        let (via_c, via_ct) = dtilde_unsimplified(&ker, k);
        assert!(rel(dt, via_c) < 1e-7, "{p:?} K={k}: {dt} vs {via_c}");
        assert!(rel(via_ct, via_c) < 1e-10);
    }
}

#[test]
fn curvature_quadrature_is_converged() {
    let p = SabrParams::reference();
    let a = SabrKernel::new(&p).unwrap();
    let b = SabrKernel::with_config(
        &p,
        KernelConfig {
            quad_order: 32,
            ..KernelConfig::default()
        },
    )
    .unwrap();
    for k in [2.0, 3.0, 5.0, 7.0] {
        let ga = a.a1_a(&a.geodesic(k)).unwrap();
        let gb = b.a1_a(&b.geodesic(k)).unwrap();
        assert!((ga - gb).abs() < 1e-9, "K={k}: {ga} vs {gb}");
    }
}

#[test]
fn curvature_integral_matches_oracle_derivatives() {
    // integrand rebuilt from the line-integral connection with coarse
    // five-point stencils, integrated by Simpson in the polar angle
    let p = SabrParams::reference();
    let ker = SabrKernel::new(&p).unwrap();
    let s = Setting::new(&p);
    let k = 5.5;
    let geo = ker.geodesic(k);
    let (x1, y1) = s.start();
    let c = circle(x1, y1, geo.x2, geo.y2);
    let integrand = |th: f64| {
        let (x, y) = (c.center + c.radius * th.cos(), c.radius * th.sin());
        let h = 1e-3 * y;
        let (mx, mxx) = fd5(|u| s.m1(u, y, 1e-13), x, h);
        let (my, myy) = fd5(|u| s.m1(x, u, 1e-13), y, h);
        let (ax, ay) = s.one_form(x, y);
        // ds = dθ / sin θ and y = R sin θ
        y * y * (-(mxx + myy) + (mx - ax).powi(2) + (my - ay).powi(2)) / th.sin()
    };
    let n = 64;
    let (t0, t1) = (c.theta1, c.theta2);
    let hh = (t1 - t0) / n as f64;
    let mut sum = integrand(t0) + integrand(t1);
    for i in 1..n {
        sum += integrand(t0 + hh * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let oracle = sum * hh.abs() / 3.0 / (2.0 * geo.d);
    let got = ker.a1_a(&geo).unwrap();
    assert!(rel(got, oracle) < 1e-5, "{got} vs {oracle}");
}

#[test]
fn curvature_vanishes_without_correlation() {
    let p = SabrParams::new(4.0, 0.3, 0.6, 0.4, 0.0).unwrap();
    let ker = SabrKernel::new(&p).unwrap();
    let c = ker.coefficients(5.0).unwrap();
    assert_eq!(c.parts.m1, 0.0);
    assert!(c.parts.a1a.abs() < 1e-12);
}

#[test]
fn mean_reversion_connection_matches_line_integral() {
    let p = SabrParams::reference()
        .with_mean_reversion(0.2, 0.25)
        .unwrap();
    let ker = SabrKernel::new(&p).unwrap();
    let s = Setting::new(&p);
    for k in [2.5, 3.5, 4.5, 6.0] {
        let geo = ker.geodesic(k);
        let total = ker.m1_qv(geo.q, geo.vmin);
        assert!(rel(total, s.m1(geo.x2, geo.y2, 1e-14)) < 1e-9, "K={k}");
    }
}

#[test]
fn near_lognormal_general_path_matches_beta_one_branch() {
    let p1 = SabrParams::reference();
    let p1 = SabrParams::new(p1.f0, p1.alpha, 1.0, p1.nu, p1.rho).unwrap();
    let p0 = SabrParams::new(p1.f0, p1.alpha, 1.0 - 1e-6, p1.nu, p1.rho).unwrap();
    let k1 = SabrKernel::new(&p1).unwrap();
    let k0 = SabrKernel::new(&p0).unwrap();
    for k in [2.5, 3.5, 5.0, 6.5] {
        let c1 = k1.coefficients(k).unwrap().parts;
        let c0 = k0.coefficients(k).unwrap().parts;
        assert!(
            rel(c0.m1p, c1.m1p) < 1e-4,
            "K={k}: {} vs {}",
            c0.m1p,
            c1.m1p
        );
        assert!(
            rel(c0.a1q, c1.a1q) < 1e-4,
            "K={k}: {} vs {}",
            c0.a1q,
            c1.a1q
        );
        assert!(c0.a1a.abs() < 1e-4 * c0.a1q.abs(), "K={k}: {}", c0.a1a);
    }
}
