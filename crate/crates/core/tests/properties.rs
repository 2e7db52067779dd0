use std::f64::consts::{FRAC_PI_2, PI};

use grainlight::goa::{fresnel_real, ray_fraction, GoaSolver};
use grainlight::mie::{mie_coefficients, MieInput};
use grainlight::scatter::{build_phase_table, cross_sections, HybridPolicy, Sphere};
use grainlight::specfun::{bessel_j1, mie_angular_functions};
use grainlight::ComplexValue;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn j1_is_odd(x in -3.0e4f64..3.0e4) {
        prop_assert_eq!(bessel_j1(-x), -bessel_j1(x));
    }

    #[test]
    fn angular_functions_finite(mu in -1.0f64..=1.0, n in 1usize..400) {
        let (pi, tau) = mie_angular_functions(mu, n).unwrap();
        prop_assert!(pi.iter().chain(&tau).all(|v| v.is_finite()));
    }

    #[test]
    fn fresnel_fractions_bounded(eta in 1.0001f64..2.5, theta_i in 0.0..FRAC_PI_2, p in 0usize..9) {
        let (r1, r2) = fresnel_real(eta, theta_i);
        prop_assert!(ray_fraction(p, r1).abs() <= 1.0);
        prop_assert!(ray_fraction(p, r2).abs() <= 1.0);
    }

    #[test]
    fn mie_forward_degeneracy(r in 0.05f64..20.0, eta in 1.01f64..2.0, k in 0.0f64..0.1) {
        let input = MieInput::in_host(r, 0.55, ComplexValue::new(eta, k), 1.0);
        let s = mie_coefficients(&input).unwrap().amplitudes(0.0);
        prop_assert_eq!(s.s1, s.s2);
    }

    #[test]
    fn cross_sections_ordered(r in 0.05f64..2000.0, eta in 1.01f64..2.0, k in prop_oneof![Just(0.0), 0.0f64..0.01]) {
        let cs = cross_sections(&Sphere::new(r, 0.55, ComplexValue::new(eta, k), 1.0), &HybridPolicy::default()).unwrap();
        prop_assert!(cs.c_t >= cs.c_s && cs.c_s >= 0.0 && cs.c_a >= 0.0);
        prop_assert!(cs.c_t.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn goa_amplitudes_finite(r in 2.0f64..2000.0, eta in 1.05f64..1.8, theta in 0.0f64..PI) {
        let solver = GoaSolver::new(ComplexValue::new(eta, 0.0), 1.0, 3).unwrap();
        let s = solver.amplitudes(r, 0.6, theta).amplitudes;
        prop_assert!(s.s1.re.is_finite() && s.s1.im.is_finite() && s.s2.re.is_finite() && s.s2.im.is_finite());
    }

    #[test]
    fn phase_table_cdf_monotone(r in 0.1f64..500.0) {
        let t = build_phase_table(&Sphere::new(r, 0.6, ComplexValue::new(1.33, 0.0), 1.0), &HybridPolicy::default(), 256)
            .unwrap()
            .phase;
        prop_assert!(t.cdf().windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((t.cdf()[255] - 1.0).abs() < 1e-9);
        prop_assert!((t.masses().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn inverse_cdf_sampling_matches_table() {
    let table = build_phase_table(&Sphere::new(3.0, 0.6, ComplexValue::new(1.33, 0.0), 1.0), &HybridPolicy::default(), 1801)
        .unwrap()
        .phase;
    // 40 groups of (roughly) equal probability built from whole intervals
    let groups = 40;
    let mut edges = vec![0usize];
    for g in 1..groups {
        let target = g as f64 / groups as f64;
        let k = table.cdf().partition_point(|&c| c < target);
        if k > *edges.last().unwrap() && k < 1800 {
            edges.push(k);
        }
    }
    edges.push(1800);
    let expected: Vec<f64> = edges.windows(2).map(|w| table.cdf()[w[1]] - table.cdf()[w[0]]).collect();
    let draws = 1_000_000;
    let mut counts = vec![0u64; expected.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..draws {
        let k = table.interval(table.sample_cos(rng.random::<f64>()));
        let g = edges.partition_point(|&e| e <= k) - 1;
        counts[g.min(expected.len() - 1)] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&c, &p)| {
            let e = p * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // Wilson-Hilferty 95% quantile of chi^2
    let k = (expected.len() - 1) as f64;
    let critical = k * (1.0 - 2.0 / (9.0 * k) + 1.645 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < critical, "chi2 {chi2} critical {critical}");
}
