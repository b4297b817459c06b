use gwc_core::deviation::{chernoff_rate, phi_exact};
use gwc_core::iterate::g_eval;
use gwc_core::mechanism::{smallest_fixed_point, FixedPointOptions};
use gwc_core::montecarlo::{simulate, SimConfig};
use gwc_core::{IterationContext, MechanismSchedule, OffspringDistribution, TruncatedSeries};
use proptest::prelude::*;

/// Laws on `{0, ..., 4}` with at least some mass above 0.
fn dist() -> impl Strategy<Value = OffspringDistribution> {
    prop::collection::vec(0.0f64..1.0, 2..=5)
        .prop_filter("needs mass above zero", |w| w[1..].iter().sum::<f64>() > 0.05)
        .prop_map(|w| {
            let total: f64 = w.iter().sum();
            OffspringDistribution::new(w.iter().map(|x| x / total).collect()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgf_is_increasing_and_convex(m in dist(), s in 0.0f64..0.98, h in 0.001f64..0.01) {
        let (f0, f1, f2) = (m.value(s), m.value(s + h), m.value(s + 2.0 * h));
        prop_assert!(f1 >= f0);
        prop_assert!(f2 - 2.0 * f1 + f0 >= -1e-14);
    }

    #[test]
    fn fixed_point_is_smallest(m in dist()) {
        let rho = smallest_fixed_point(&m, FixedPointOptions::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&rho));
        prop_assert!((m.value(rho) - rho).abs() < 1e-10);
        for i in 0..20 {
            let s = rho * i as f64 / 20.0;
            prop_assert!(m.value(s) >= s - 1e-12);
        }
    }

    #[test]
    fn series_composition_matches_pointwise(a in dist(), b in dist(), n in 0usize..6, s in 0.0f64..1.0) {
        let ctx = IterationContext::pair(a, b);
        let series = ctx.zn_distribution(n, 1 << 14).unwrap();
        let (lo, hi) = series.eval(s);
        let direct = ctx.f_n_eval(n, s).unwrap();
        prop_assert!(lo - 1e-12 <= direct && direct <= hi + 1e-12);
    }

    #[test]
    fn inverse_round_trips(m in dist(), t in 0.0f64..1.0) {
        let s = m.prob(0) + t * (1.5 - m.prob(0));
        let g = g_eval(&m, s).unwrap();
        prop_assert!((m.value(g) - s).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn phi_decreases_in_epsilon(m in dist(), k in 1usize..25, e1 in 0.01f64..1.0, de in 0.0f64..1.0) {
        let p1 = phi_exact(&m, k, e1).unwrap();
        let p2 = phi_exact(&m, k, e1 + de).unwrap();
        prop_assert!(p2 <= p1 + 1e-15);
    }

    #[test]
    fn chernoff_bounds_phi(m in dist(), k in 1usize..30, eps in 0.05f64..0.8) {
        let rate = chernoff_rate(&m, eps).unwrap();
        prop_assert!(rate.lambda < 1.0);
        prop_assert!(phi_exact(&m, k, eps).unwrap() <= rate.bound(k) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn csv_round_trip(coeffs in prop::collection::vec(0.0f64..1.0, 1..40), tail in 0.0f64..0.1) {
        let s = TruncatedSeries::with_tail(coeffs, 64, tail).unwrap();
        prop_assert_eq!(TruncatedSeries::from_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn schedule_json_round_trip(a in dist(), b in dist()) {
        let s = MechanismSchedule::pair(a, b);
        let back = MechanismSchedule::from_json_str(&s.to_json_value().to_string()).unwrap();
        prop_assert_eq!(back, s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_reproducible(a in dist(), b in dist(), seed in any::<u64>()) {
        let cfg = SimConfig::new(MechanismSchedule::pair(a, b), 6, 50, seed);
        let (x, y) = (simulate(&cfg), simulate(&cfg));
        match (x, y) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(x), Err(y)) => prop_assert_eq!(x, y),
            _ => prop_assert!(false, "runs disagree on success"),
        }
    }
}
