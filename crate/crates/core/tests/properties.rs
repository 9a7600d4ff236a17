//! Property tests over random centred atomic measures.

use proptest::prelude::*;

use gapdiff::chain::build_chain;
use gapdiff::measure::{Measure, PotentialProfile};
use gapdiff::resolvent::{green_function, solve_eigenfunctions};
use gapdiff::speed::{build_speed_measure, Weight};
use gapdiff::stats::tv_atomic;

/// Centred atomic measure with 2 to 12 atoms, gaps in [0.05, 2].
fn atomic() -> impl Strategy<Value = Measure> {
    prop::collection::vec((0.05f64..2.0, 0.05f64..1.0), 2..12).prop_map(|parts| {
        let total: f64 = parts.iter().map(|p| p.1).sum();
        let mut x = 0.0;
        let atoms: Vec<(f64, f64)> = parts
            .iter()
            .map(|&(gap, w)| {
                x += gap;
                (x, w / total)
            })
            .collect();
        Measure::from_atoms(atoms).unwrap().recentred()
    })
}

fn direct_potential(mu: &Measure, x: f64) -> f64 {
    mu.atoms.iter().map(|a| a.p * (a.x - x).abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn potential_matches_direct_sum(mu in atomic(), t in -8.0f64..8.0) {
        let p = PotentialProfile::new(mu.clone()).unwrap();
        let want = direct_potential(&mu, t);
        prop_assert!((p.potential(t) - want).abs() <= 1e-12 * (1.0 + want));
        prop_assert!((mu.potential(t) - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn potential_is_convex(mu in atomic(), s in -8.0f64..8.0, t in -8.0f64..8.0) {
        let p = PotentialProfile::new(mu).unwrap();
        let mid = p.potential(0.5 * (s + t));
        prop_assert!(mid <= 0.5 * (p.potential(s) + p.potential(t)) + 1e-12);
    }

    #[test]
    fn slope_jump_is_twice_the_mass(mu in atomic()) {
        let p = PotentialProfile::new(mu.clone()).unwrap();
        for a in &mu.atoms {
            let (l, r) = p.potential_slopes(a.x);
            prop_assert!((r - l - 2.0 * a.p).abs() < 1e-12);
        }
    }

    #[test]
    fn excess_potential_is_nonnegative(mu in atomic(), t in -8.0f64..8.0) {
        let p = PotentialProfile::new(mu).unwrap();
        prop_assert!(p.excess_potential(t) >= -1e-14);
    }

    #[test]
    fn truncation_keeps_mass_and_mean(mu in atomic(), frac in 0.05f64..0.95) {
        let p = PotentialProfile::new(mu.clone()).unwrap();
        let reach = mu.atoms.iter().map(|a| a.x.abs()).fold(0.0, f64::max);
        let floor = p.potential(0.0);
        prop_assume!(reach > floor * 1.001);
        let level = floor + frac * (reach - floor);
        let t = p.truncate_measure(level).unwrap();
        prop_assert!((t.total_mass() - 1.0).abs() < 1e-9);
        prop_assert!(t.mean().abs() < 1e-9);
        for &x in &[-level, -0.5 * level, 0.0, 0.5 * level, level] {
            prop_assert!(direct_potential(&t, x) <= p.potential(x) + 1e-9);
        }
    }

    #[test]
    fn total_variation_is_symmetric(a in atomic(), b in atomic()) {
        let ab = tv_atomic(&a, &b).unwrap();
        prop_assert!((ab - tv_atomic(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(tv_atomic(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn resolvent_structure(mu in atomic(), lambda in 0.1f64..5.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let p = PotentialProfile::new(mu).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let sol = solve_eigenfunctions(&sm, lambda).unwrap();
        let (lo, hi) = (sol.lower(), sol.upper());
        let (x, y) = (lo + s * (hi - lo), lo + t * (hi - lo));
        let gxy = green_function(&sol, x, y).unwrap();
        let gyx = green_function(&sol, y, x).unwrap();
        prop_assert!((gxy - gyx).abs() <= 1e-12 * (1.0 + gxy.abs()));
        prop_assert!(gxy >= 0.0);
        prop_assert!(sol.u_plus.values.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(sol.u_minus.values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((sol.h * (1.0 / sol.h_plus + 1.0 / sol.h_minus) - 1.0).abs() < 1e-12);
        prop_assert!((sol.h_plus - sol.h_plus_integral).abs() <= 1e-10 * sol.h_plus);
        prop_assert!((sol.h_minus - sol.h_minus_integral).abs() <= 1e-10 * sol.h_minus);
    }

    #[test]
    fn chain_law_matches_green_function(mu in atomic(), q in 0.2f64..4.0) {
        let p = PotentialProfile::new(mu.clone()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let law = build_chain(&sm, &mu).unwrap().exact_law(sm.start, q).unwrap();
        let sol = solve_eigenfunctions(&sm, q).unwrap();
        for a in &sm.atoms {
            if let Weight::Finite(w) = sm.weight(a) {
                let want = 2.0 * q * green_function(&sol, sm.start, a.x).unwrap() * w;
                prop_assert!((law.atom_mass(a.x) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn put_call_parity(mu in atomic(), k in -8.0f64..8.0) {
        let lhs = mu.call_price(k) - mu.put_price(k);
        prop_assert!((lhs - (mu.mean() - k)).abs() < 1e-12);
    }
}
