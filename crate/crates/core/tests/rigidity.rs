use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use qrlab_core::curvature::*;
use qrlab_core::functionals::{sobolev_deficit, paneitz_energy};
use qrlab_core::geometry::*;
use qrlab_core::rigidity::*;
use qrlab_core::sampling::{indexed_rng, random_log_normal_factor, sample_admissible};
use rand::Rng;

fn sphere(n: usize) -> Arc<Background> {
    build_background(n, BackgroundKind::RoundSphere, 256, 96).unwrap()
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn spread(f: &Field) -> f64 {
    (f.max() - f.min()) / f.max_abs()
}

#[test]
fn optimizer_family_grid() {
    for n in 5..=8 {
        let bg = sphere(n);
        for a in [0.5, 0.8, 1.0, 1.5, 2.0] {
            for b in [-0.5, -0.25, 0.0, 0.25, 0.5] {
                let m = optimizer_family(&bg, a, b).unwrap();
                assert!(spread(m.scalar_curvature()) <= 1e-7, "n = {n}, a = {a}, b = {b}");
                assert!(spread(m.q_curvature()) <= 1e-7, "n = {n}, a = {a}, b = {b}");
                let r2 = m.scalar_curvature().max_abs().powi(2);
                assert!(m.traceless_ricci_sq().max_abs() <= 1e-7 * r2);
                let d = sobolev_deficit(&m, 2, 1).unwrap();
                assert!(d.abs() <= 1e-7 * paneitz_energy(&m), "n = {n}, a = {a}, b = {b}: {d:e}");
            }
        }
    }
}

#[test]
fn optimizer_family_examples_and_errors() {
    let bg = sphere(5);
    let m = optimizer_family(&bg, 1.0, 0.0).unwrap();
    assert!(m.factor().values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    let m = optimizer_family(&bg, 2.0, 0.5).unwrap();
    assert!(sobolev_deficit(&m, 2, 1).unwrap().abs() < 1e-7 * paneitz_energy(&m));
    assert!(matches!(optimizer_family(&bg, 1.0, 1.0), Err(RigidityError::MobiusParameter(_))));
    assert!(matches!(optimizer_family(&bg, -1.0, 0.2), Err(RigidityError::Amplitude(_))));
    let prod = build_background(
        6,
        BackgroundKind::EinsteinProduct {
            p: 3,
            q: 3,
            radii: (1.0, 1.0),
        },
        64,
        24,
    )
    .unwrap();
    assert!(matches!(optimizer_family(&prod, 1.0, 0.1), Err(RigidityError::NotSphere)));

    // n = 3 and n = 4 variants are round as well
    for n in [3usize, 4] {
        let bg = sphere(n);
        let m = optimizer_family(&bg, 1.3, 0.4).unwrap();
        assert!(spread(m.scalar_curvature()) < 1e-8, "n = {n}");
        let r = m.scalar_curvature().values()[0];
        assert!(r > 0.0);
    }
}

#[test]
fn coefficients_match_exact_values() {
    for n in [5usize, 6, 11] {
        let exact = ExactCoefficients::new(n);
        for alpha in [q(1, 7), q(1, 2), q(1, 1)] {
            let af = alpha.to_f64().unwrap();
            let co = ObataCoefficients::new(n, af);
            assert!((co.b - exact.b.eval(&alpha).to_f64().unwrap()).abs() < 1e-14);
            assert!((co.c - exact.c.eval(&alpha).to_f64().unwrap()).abs() < 1e-14);
            assert!((co.i - exact.i.eval(&alpha).to_f64().unwrap()).abs() < 1e-13);
            assert!(co.b > 0.0);
        }
    }
}

#[test]
fn residuals_vanish_at_constants() {
    let bg = sphere(5);
    let m = ConformalMetric::new(Field::constant(&bg, 1.3), Convention::PowerScalar).unwrap();
    for alpha in [0.25, 1.0] {
        let r = obata_identity_residual(&m, alpha).unwrap();
        assert_eq!(r.res_lemma, 0.0);
        assert_eq!(r.res_main, 0.0);
    }
}

#[test]
fn residual_preconditions() {
    let bg = sphere(5);
    let m = ConformalMetric::new(Field::constant(&bg, 1.0), Convention::PowerScalar).unwrap();
    assert!(matches!(obata_identity_residual(&m, 0.0), Err(RigidityError::Alpha(_))));
    assert!(matches!(obata_identity_residual(&m, 1.5), Err(RigidityError::Alpha(_))));
    let bad = ConformalMetric::new(Field::from_fn(&bg, |x| (3.0 * x * x * x * x).exp()), Convention::PowerScalar)
        .unwrap();
    if bad.scalar_curvature().min() <= 0.0 {
        assert!(matches!(
            obata_identity_residual(&bad, 0.5),
            Err(RigidityError::NonPositiveScalar(_))
        ));
    }
}

#[test]
fn residuals_on_random_metrics() {
    for n in [5usize, 6, 7] {
        let bg = sphere(n);
        for k in 0..100 {
            let mut rng = indexed_rng(2024 + n as u64, k);
            let m = sample_admissible(&bg, Convention::PowerScalar, &mut rng, |_| true).unwrap();
            let alpha = if k == 0 {
                1.0
            } else if k == 1 {
                0.25
            } else {
                rng.random_range(0.01..=1.0)
            };
            let r = obata_identity_residual(&m, alpha).unwrap();
            assert!(r.res_lemma <= 1e-6 && r.res_main <= 1e-6, "n = {n}, sample {k}: {r:?}");
        }
    }
}

#[test]
fn lemma_and_main_terms_against_laplacian_grouping() {
    let bg = sphere(6);
    let n = 6.0;
    let mut rng = indexed_rng(99, 0);
    let m = sample_admissible(&bg, Convention::PowerScalar, &mut rng, |_| true).unwrap();
    let u = Field::new(&bg, m.log_scale().iter().map(|p| p.exp()).collect());
    let lap_u = m.laplacian_g(&u.to_spectral());
    let s = m.scalar_curvature();
    for alpha in [0.3, 1.0] {
        let terms = obata_lemma_terms(&m, alpha).unwrap();
        assert_eq!(terms.len(), 5);
        // <grad u, S^{1-alpha} grad S> = <grad u, grad S^{2-alpha}> / (2 - alpha)
        let integrand: Vec<f64> = (0..u.values().len())
            .map(|i| s.values()[i].powf(2.0 - alpha) * lap_u.values()[i])
            .collect();
        let want = -(n - 2.0) / n / (2.0 - alpha) * m.integrate_g(&integrand);
        assert!((terms[4] - want).abs() < 1e-7 * want.abs(), "{} vs {want}", terms[4]);

        let (_, rhs) = obata_main_terms(&m, alpha).unwrap();
        let qs: Vec<f64> = (0..u.values().len())
            .map(|i| m.q_curvature().values()[i] * s.values()[i].powf(-alpha) * lap_u.values()[i])
            .collect();
        let want = -2.0 * (n - 1.0) * (n - 1.0) / n * m.integrate_g(&qs);
        assert!((rhs - want).abs() < 1e-7 * want.abs(), "{rhs} vs {want}");
    }
}

#[test]
fn certificate_examples() {
    let r = coefficient_certificate(5, &default_alpha_grid(101)).unwrap();
    assert_eq!(r.c1, q(4, 3));
    assert_eq!(r.i1, q(20, 9));
    assert!(&r.c1 * &r.c1 < r.i1);
    assert_eq!(r.c0, q(-11, 15));
    assert_eq!(r.i0, q(64, 45));
    assert!(r.identity_holds);
    assert!(r.e_nonnegative);
    assert_eq!(r.windows.len(), 101);
    assert!(r.succeeded());
    let text = r.to_string();
    assert!(text.starts_with("[n = 5]"));
    assert!(coefficient_certificate(4, &default_alpha_grid(3)).is_err());
}

#[test]
fn certificate_closed_forms_for_many_dimensions() {
    let grid = default_alpha_grid(101);
    for n in 5..=50i64 {
        let r = coefficient_certificate(n as usize, &grid).unwrap();
        assert!(r.succeeded(), "n = {n}");
        assert_eq!(r.c1, q(n - 1, n - 2));
        assert_eq!(r.i1, q(n * (n - 1), (n - 2) * (n - 2)));
        assert_eq!(r.c0, q(-3 * n + 4, n * (n - 2)));
        assert_eq!(r.i0, q(4 * (n - 1) * (n - 1), n * (n - 2) * (n - 2)));
        for w in &r.windows {
            let a = w.witness.as_ref().unwrap().to_f64().unwrap();
            let alpha = w.alpha.to_f64().unwrap();
            let co = ObataCoefficients::new(n as usize, alpha);
            let nf = n as f64;
            assert!(a * a / (2.0 * (nf - 1.0) * co.alpha1) <= (1.0 - alpha) / (2.0 * nf) * (1.0 + 1e-12) + 1e-15);
            assert!((co.c.abs() - a).powi(2) / (2.0 * alpha * (nf - 1.0)) <= co.b * (1.0 + 1e-12));
        }
    }
}

#[test]
fn e_polynomial_matches_float_identity() {
    for n in [5usize, 9, 30] {
        let exact = ExactCoefficients::new(n);
        let nf = n as f64;
        for k in 0..=20 {
            let alpha = k as f64 / 20.0;
            let co = ObataCoefficients::new(n, alpha);
            let c1 = (nf - 1.0) / (nf - 2.0);
            let i1 = nf * (nf - 1.0) / (nf - 2.0).powi(2);
            let e = exact.e.eval(&q(k, 20)).to_f64().unwrap();
            let lhs = co.i - co.c * co.c;
            let rhs = i1 - c1 * c1 + (1.0 - alpha) * e / (4.0 * nf * nf * (nf - 2.0).powi(2));
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
            assert!(e >= 0.0);
        }
    }
}

#[test]
fn sturm_counts_known_roots() {
    let x_minus = |r: BigRational| RationalPoly::linear(-r, BigRational::one());
    let p = x_minus(q(1, 2)).mul(&x_minus(q(1, 3))).mul(&x_minus(q(-2, 1)));
    assert_eq!(p.degree(), Some(3));
    assert_eq!(p.count_roots(&BigRational::zero(), &BigRational::one()), 2);
    assert_eq!(p.count_roots(&q(-3, 1), &BigRational::one()), 3);
    let roots = p.isolate_roots(&BigRational::zero(), &BigRational::one());
    assert_eq!(roots.len(), 2);
    assert!(roots[0].0 < q(1, 3) && q(1, 3) <= roots[0].1);
    assert!(roots[1].0 < q(1, 2) && q(1, 2) <= roots[1].1);

    let no_real = RationalPoly(vec![BigRational::one(), BigRational::zero(), BigRational::one()]);
    assert_eq!(no_real.count_roots(&q(-10, 1), &q(10, 1)), 0);

    let double = x_minus(q(1, 4)).mul(&x_minus(q(1, 4)));
    assert_eq!(double.count_roots(&BigRational::zero(), &BigRational::one()), 1);

    let r = x_minus(q(3, 5)).mul(&x_minus(q(-1, 1)));
    assert_eq!(r.rem(&x_minus(q(3, 5))), RationalPoly(Vec::new()));
    assert_eq!(r.eval(&q(3, 5)), BigRational::zero());
    assert_eq!(r.derivative(), RationalPoly::linear(q(2, 5), q(2, 1)));
}

#[test]
fn convexity_constants_and_endpoints() {
    let bg = sphere(5);
    let a = bg.conformal_laplacian_shift();
    let u = Field::constant(&bg, 2.0);
    let v = Field::constant(&bg, 0.5);
    let got = convexity_check(&u, &v, 0.3).unwrap();
    let want = a * 2f64.powf(0.3) * 0.5f64.powf(0.7);
    assert!((got - want).abs() < 1e-12 * want);

    let w = Field::from_fn(&bg, |x| (0.3 * x).exp());
    let lw = conformal_laplacian(&bg).apply(&w).min();
    assert!((convexity_check(&w, &v, 1.0).unwrap() - lw).abs() < 1e-12 * lw.abs());
    assert!(matches!(convexity_check(&w, &v, 1.5), Err(RigidityError::Precondition(_))));
    assert!(matches!(
        convexity_check(&Field::from_fn(&bg, |x| x), &v, 0.5),
        Err(RigidityError::Precondition(_))
    ));
}

#[test]
fn convexity_on_random_pairs_against_pointwise_identity() {
    let bg = sphere(5);
    let op = conformal_laplacian(&bg);
    let mut checked = 0;
    for k in 0..5000 {
        if checked == 200 {
            break;
        }
        let mut rng = indexed_rng(7, k);
        let u = random_log_normal_factor(&bg, &mut rng);
        let v = random_log_normal_factor(&bg, &mut rng);
        let t = rng.random_range(0.0..=1.0);
        let Ok(min) = convexity_check(&u, &v, t) else {
            continue;
        };
        checked += 1;
        let h = u.zip_map(&v, |a, b| a.powf(t) * b.powf(1.0 - t));
        let lh = op.apply(&h);
        assert!(min >= -1e-9 * lh.max_abs());

        let lu = op.apply(&u);
        let lv = op.apply(&v);
        let diff = u.map(f64::ln).axpby(1.0, &v.map(f64::ln), -1.0);
        let g = grad_sq_g0(&diff);
        let s = 1.0 - t;
        for i in 0..h.values().len() {
            let want = h.values()[i]
                * (t * lu.values()[i] / u.values()[i] + s * lv.values()[i] / v.values()[i] + t * s * g.values()[i]);
            assert!((lh.values()[i] - want).abs() < 1e-8 * lh.max_abs(), "sample {k}, node {i}");
        }
    }
    assert_eq!(checked, 200);
}
