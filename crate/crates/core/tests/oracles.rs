//! Library results against independent closed forms and brute force.

use approx::assert_relative_eq;
use gwc_core::deviation::{chernoff_rate, phi_exact};
use gwc_core::iterate::g_eval;
use gwc_core::limits::{mgf_wn, RSystem};
use gwc_core::{IterationContext, NormalizerTable, OffspringDistribution, Order};

fn d(entries: &[(usize, f64)]) -> OffspringDistribution {
    OffspringDistribution::from_sparse(entries).unwrap()
}

/// Law of `Z_{n+1}` from the law of `Z_n` by mixing the laws of `k`-fold sums,
/// each built by enumerating one individual at a time.
fn next_generation(law: &[f64], mech: &OffspringDistribution) -> Vec<f64> {
    let p = mech.probs();
    let mut out = vec![0.0; (law.len() - 1) * (p.len() - 1) + 1];
    let mut sum_law = vec![1.0];
    for (k, &pk) in law.iter().enumerate() {
        if k > 0 {
            let mut next = vec![0.0; sum_law.len() + p.len() - 1];
            for (i, &x) in sum_law.iter().enumerate() {
                for (j, &y) in p.iter().enumerate() {
                    next[i + j] += x * y;
                }
            }
            sum_law = next;
        }
        for (j, &q) in sum_law.iter().enumerate() {
            out[j] += pk * q;
        }
    }
    out
}

#[test]
fn zn_law_matches_generation_by_generation_mixing() {
    let ctx = IterationContext::pair(d(&[(0, 0.2), (1, 0.3), (3, 0.5)]), d(&[(1, 0.6), (2, 0.4)]));
    let mut law = vec![0.0, 1.0];
    for n in 0..=5 {
        let series = ctx.zn_distribution(n, 4096).unwrap();
        assert!(series.is_exact());
        for (j, &p) in law.iter().enumerate() {
            assert!((series.coefficient(j).unwrap() - p).abs() < 1e-14, "n={n} j={j}");
        }
        law = next_generation(&law, ctx.mech(n));
    }
}

#[test]
fn quadratic_extinction_roots() {
    // a = b = {p_0 = q, p_2 = 1 - q}: alpha = a o a, whose smallest fixed
    // point is the smaller root of (1-q) s^2 - s + q.
    for q in [0.1, 0.25, 0.4] {
        let m = d(&[(0, q), (2, 1.0 - q)]);
        let ctx = IterationContext::pair(m.clone(), m);
        let root = (1.0 - (1.0 - 4.0 * q * (1.0 - q)).sqrt()) / (2.0 * (1.0 - q));
        let e = ctx.extinction().unwrap();
        assert!((e.rho_ab - root).abs() < 1e-10, "q={q}");
        assert!((e.rho_ba - root).abs() < 1e-10);
    }
}

#[test]
fn inverse_of_the_test_mechanism_is_a_quadratic_root() {
    let m = d(&[(1, 0.5), (2, 0.5)]);
    for s in [0.0, 0.1, 0.5, 0.9, 1.0, 1.7] {
        let oracle = -0.5 + (0.25f64 + 2.0 * s).sqrt();
        assert_relative_eq!(g_eval(&m, s).unwrap(), oracle, epsilon = 1e-13, max_relative = 1e-13);
    }
}

#[test]
fn doubling_pair_has_logarithmic_r() {
    // g_n(s) = s^{2^{-n}}, so Gamma_n (g_n(s) - 1) tends to ln s.
    let two = d(&[(2, 1.0)]);
    let ctx = IterationContext::pair(two.clone(), two);
    let sys = RSystem::new(&ctx).unwrap();
    for s in [1.01, 1.2, 1.5, 2.25] {
        let r = sys.r_point(Order::Ab, s, 1e-13).unwrap().value;
        assert_relative_eq!(r, f64::ln(s), max_relative = 1e-9);
    }
}

#[test]
fn deterministic_pair_mgf_is_exponential() {
    let ctx = IterationContext::pair(d(&[(2, 1.0)]), d(&[(3, 1.0)]));
    for n in [0, 1, 4, 9] {
        for theta in [0.1, 0.5, 1.0] {
            assert_relative_eq!(mgf_wn(&ctx, n, theta).unwrap(), f64::exp(theta), max_relative = 1e-12);
        }
    }
}

/// `P(|S_k / k - m| > eps)` by enumerating all `K^k` outcome tuples.
fn phi_brute(probs: &[f64], k: usize, eps: f64) -> f64 {
    let m: f64 = probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let support = probs.len();
    let mut total = 0.0;
    let mut idx = vec![0usize; k];
    loop {
        let p: f64 = idx.iter().map(|&j| probs[j]).product();
        let s: usize = idx.iter().sum();
        if (s as f64 / k as f64 - m).abs() > eps + 1e-12 {
            total += p;
        }
        let mut pos = 0;
        loop {
            if pos == k {
                return total;
            }
            idx[pos] += 1;
            if idx[pos] < support {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn phi_matches_enumeration() {
    let probs = [0.2, 0.5, 0.0, 0.3];
    let m = OffspringDistribution::new(probs.to_vec()).unwrap();
    for k in 1..=7 {
        for eps in [0.1, 0.3, 0.7] {
            let brute = phi_brute(&probs, k, eps);
            assert!((phi_exact(&m, k, eps).unwrap() - brute).abs() < 1e-13, "k={k} eps={eps}");
        }
    }
}

#[test]
fn chernoff_rate_matches_a_grid_search() {
    let m = d(&[(0, 0.1), (1, 0.4), (2, 0.3), (4, 0.2)]);
    let (mean, eps) = (m.mean(), 0.25);
    let upper = (1..=20_000)
        .map(|i| 1.0 + i as f64 * 1e-4)
        .map(|a| a.powf(-(mean + eps)) * m.value(a))
        .fold(f64::INFINITY, f64::min);
    let lower = (1..10_000)
        .map(|i| i as f64 * 1e-4)
        .map(|b| b.powf(-(mean - eps)) * m.value(b))
        .fold(f64::INFINITY, f64::min);
    let rate = chernoff_rate(&m, eps).unwrap();
    assert!(rate.upper_rate <= upper + 1e-12);
    assert!(rate.lower_rate <= lower + 1e-12);
    assert!((rate.upper_rate - upper).abs() < 1e-6);
    assert!((rate.lower_rate - lower).abs() < 1e-6);
    assert_relative_eq!(rate.lambda, upper.max(lower), max_relative = 1e-6);
}

#[test]
fn variance_matches_the_law_of_z_n() {
    let ctx = IterationContext::pair(d(&[(0, 0.1), (1, 0.2), (3, 0.7)]), d(&[(1, 0.5), (2, 0.5)]));
    let t = NormalizerTable::new(&ctx);
    for n in 0..=6 {
        let (mean, var) = ctx.zn_distribution(n, 1 << 16).unwrap().mean_and_variance();
        assert_relative_eq!(mean, t.gamma(n), max_relative = 1e-11);
        let v = t.var_zn(n).unwrap();
        assert!((var - v).abs() <= 1e-10 * v.max(1.0), "n={n}: {var} vs {v}");
    }
}
