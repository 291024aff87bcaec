use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use qrlab_core::curvature::*;
use qrlab_core::functionals::duality_product;
use qrlab_core::geometry::*;
use qrlab_core::rigidity::convexity_check;

fn sphere5() -> Arc<Background> {
    static BG: OnceLock<Arc<Background>> = OnceLock::new();
    Arc::clone(BG.get_or_init(|| build_background(5, BackgroundKind::RoundSphere, 96, 32).unwrap()))
}

fn sphere5_fine() -> Arc<Background> {
    static BG: OnceLock<Arc<Background>> = OnceLock::new();
    Arc::clone(BG.get_or_init(|| build_background(5, BackgroundKind::RoundSphere, 256, 96).unwrap()))
}

fn smooth_field(bg: &Arc<Background>, coeffs: &[f64]) -> Field {
    let mut c = vec![0.0; bg.degree() + 1];
    for (l, v) in coeffs.iter().enumerate() {
        c[l + 1] = v / (1.0 + l as f64).powi(2);
    }
    Field::from_coeffs(bg, c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paneitz_inverse_round_trip(coeffs in prop::collection::vec(-1.0f64..1.0, 8)) {
        let bg = sphere5();
        let f = smooth_field(&bg, &coeffs).axpby(1.0, &Field::constant(&bg, 1.0), 0.5);
        let back = paneitz_apply(&paneitz_invert(&f).unwrap());
        prop_assert!(back.axpby(1.0, &f, -1.0).max_abs() <= 1e-10 * f.max_abs());
    }

    #[test]
    fn newton_inequality_holds(coeffs in prop::collection::vec(-1.0f64..1.0, 5), amp in 0.05f64..0.4) {
        let bg = sphere5();
        let g = smooth_field(&bg, &coeffs);
        let s = g.max_abs().max(1e-12);
        let w = g.map(|v| (amp * v / s).exp());
        let m = ConformalMetric::new(w, Convention::PowerScalar).unwrap();
        let (s1, s2, _) = m.sigma_curvatures();
        for (a, b) in s1.values().iter().zip(s2.values()) {
            prop_assert!(*b <= 0.4 * a * a + 1e-9 * (1.0 + a * a));
        }
    }

    #[test]
    fn duality_product_at_most_one(coeffs in prop::collection::vec(-1.0f64..1.0, 5), amp in 0.01f64..0.3) {
        let bg = sphere5();
        let g = smooth_field(&bg, &coeffs);
        let s = g.max_abs().max(1e-12);
        let u = g.map(|v| (amp * v / s).exp());
        if let Ok(d) = duality_product(&u) {
            prop_assert!(d.product <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn convexity_lower_bound(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4), t in 0.0f64..=1.0) {
        let bg = sphere5();
        let u = smooth_field(&bg, &a).map(|v| (0.3 * v).exp());
        let v = smooth_field(&bg, &b).map(|v| (0.3 * v).exp());
        if let Ok(min) = convexity_check(&u, &v, t) {
            prop_assert!(min >= -1e-9);
        }
    }

    #[test]
    fn mobius_preserves_total_q(coeffs in prop::collection::vec(-1.0f64..1.0, 4), b in -0.6f64..0.6) {
        let bg = sphere5_fine();
        let u = smooth_field(&bg, &coeffs).map(|v| (0.2 * v).exp());
        let m = ConformalMetric::new(u, Convention::PowerN5plus).unwrap();
        let moved = conformal_pullback(&m, b).unwrap();
        let before = m.integrate_g(m.q_curvature().values());
        let after = moved.integrate_g(moved.q_curvature().values());
        prop_assert!((before - after).abs() <= 1e-6 * before.abs());
    }
}
