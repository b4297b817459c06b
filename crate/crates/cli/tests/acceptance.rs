//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use gwc_core::deviation::{chernoff_rate, limit_sum, phi_exact, ratio_deviation_sequence, Side};
use gwc_core::limits::{mgf_wn, q_probes, r_probes, theta1_bound, QSystem, RSystem, DEFAULT_S0};
use gwc_core::moments::conditional_mean_next;
use gwc_core::montecarlo::{simulate, PathEnsemble, SimConfig};
use gwc_core::numerics::linear_fit;
use gwc_core::{IterationContext, NormalizerTable, OffspringDistribution, Order};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn d(entries: &[(usize, f64)]) -> OffspringDistribution {
    OffspringDistribution::from_sparse(entries).unwrap()
}

fn test_pair() -> IterationContext {
    IterationContext::pair(d(&[(1, 0.5), (2, 0.5)]), d(&[(1, 0.5), (2, 0.5)]))
}

/// Random law on `{0, ..., k}` with `k` drawn from `2..=max_support`.
fn random_dist(rng: &mut StdRng, max_support: usize, with_zero: bool) -> OffspringDistribution {
    let k = rng.random_range(2..=max_support);
    let mut w: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
    if !with_zero {
        w[0] = 0.0;
    }
    let total: f64 = w.iter().sum();
    OffspringDistribution::new(w.iter().map(|x| x / total).collect()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Outcome {
    let q = d(&[(0, 0.25), (2, 0.75)]);
    let ctx = IterationContext::pair(q.clone(), q);
    let rho = ctx.extinction().map_err(|e| e.to_string())?.rho_ab;
    // 0.75 s^2 - s + 0.25 = 0, smaller root.
    let oracle = (1.0 - (1.0f64 - 4.0 * 0.75 * 0.25).sqrt()) / (2.0 * 0.75);
    ensure((rho - oracle).abs() <= 1e-10, || format!("rho_ab = {rho}, oracle {oracle}"))?;

    let mut rng = StdRng::seed_from_u64(1);
    let mut pairs = vec![
        (d(&[(0, 0.5), (2, 0.5)]), d(&[(1, 1.0)])),
        (d(&[(0, 0.5), (1, 0.5)]), d(&[(2, 1.0)])),
        (d(&[(0, 0.3), (1, 0.4), (2, 0.3)]), d(&[(0, 0.5), (2, 0.5)])),
    ];
    while pairs.len() < 23 {
        let a = random_dist(&mut rng, 4, true);
        let b = random_dist(&mut rng, 4, true);
        if a.mean() * b.mean() <= 1.0 {
            pairs.push((a, b));
        }
    }
    for (a, b) in pairs {
        let e = IterationContext::pair(a.clone(), b.clone())
            .extinction()
            .map_err(|e| e.to_string())?;
        ensure(e.rho_ab == 1.0 && e.rho_ba == 1.0, || {
            format!("m = {}: rho_ab = {}, rho_ba = {}", a.mean() * b.mean(), e.rho_ab, e.rho_ba)
        })?;
    }
    Ok(format!("rho_ab = {rho:.17}; 23 pairs with m <= 1 give exactly 1"))
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 20 {
        let (za, zb) = (rng.random_bool(0.5), rng.random_bool(0.5));
        let a = random_dist(&mut rng, 4, za);
        let b = random_dist(&mut rng, 4, zb);
        if a.mean() * b.mean() < 1.05 {
            continue;
        }
        let cap = (a.max_support() * b.max_support()).pow(4);
        let ctx = IterationContext::pair(a, b);
        let t = NormalizerTable::new(&ctx);
        let laws = ctx.zn_distributions(8, cap).map_err(|e| e.to_string())?;
        for (n, law) in laws.iter().enumerate() {
            ensure(law.is_exact(), || format!("law of Z_{n} truncated"))?;
            let (mean, var) = law.mean_and_variance();
            let (m_ref, v_ref) = (t.gamma(n), t.var_zn(n).map_err(|e| e.to_string())?);
            let em = (mean - m_ref).abs() / m_ref;
            let ev = if v_ref == 0.0 { var.abs() } else { (var - v_ref).abs() / v_ref };
            worst = worst.max(em).max(ev);
            ensure(em <= 1e-9 && ev <= 1e-9, || {
                format!("n = {n}: mean {mean} vs {m_ref}, variance {var} vs {v_ref}")
            })?;
        }
        checked += 1;
    }
    Ok(format!("20 pairs, n <= 8, worst relative error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut checked = 0;
    let mut margin = f64::INFINITY;
    while checked < 10 {
        let a = random_dist(&mut rng, 4, true);
        let b = random_dist(&mut rng, 4, true);
        if a.mean() * b.mean() <= 1.05 {
            continue;
        }
        let ctx = IterationContext::pair(a, b);
        let e = ctx.extinction().map_err(|e| e.to_string())?;
        if (e.rho_a - e.rho_b).abs() < 0.05 {
            continue;
        }
        let e = if e.rho_a < e.rho_b {
            e
        } else {
            ctx.swapped().extinction().map_err(|e| e.to_string())?
        };
        let chain = [e.rho_a, e.rho_ab, e.rho_ba, e.rho_b];
        for w in chain.windows(2) {
            margin = margin.min(w[1] - w[0]);
        }
        ensure(chain.windows(2).all(|w| w[1] - w[0] > 1e-8), || format!("chain {chain:?}"))?;
        checked += 1;
    }
    Ok(format!("10 pairs, smallest gap {margin:.3e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut contexts = vec![test_pair()];
    for _ in 0..3 {
        contexts.push(IterationContext::pair(
            random_dist(&mut rng, 4, true),
            random_dist(&mut rng, 4, true),
        ));
    }
    let mut worst: f64 = 0.0;
    for ctx in &contexts {
        let t = NormalizerTable::new(ctx);
        for n in 0..=6 {
            for k in 0..=50 {
                let m = conditional_mean_next(ctx, n, k).map_err(|e| e.to_string())?;
                let err = (m - t.omega(n) * k as f64).abs();
                worst = worst.max(err);
                ensure(err <= 1e-9, || format!("n = {n}, k = {k}: {m} vs {}", t.omega(n) * k as f64))?;
            }
        }
    }
    Ok(format!("4 pairs, k <= 50, n <= 6, worst error {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let ctx = test_pair();
    let tol = 1e-12;
    let q = QSystem::new(&ctx).map_err(|e| e.to_string())?;
    let (q_res, _) = q.functional_residual(&q_probes(), tol).map_err(|e| e.to_string())?;
    let r = RSystem::new(&ctx).map_err(|e| e.to_string())?;
    let probes = r_probes(&ctx, DEFAULT_S0);
    let (r_res, _) = r.functional_residual(&probes, tol).map_err(|e| e.to_string())?;
    ensure(q_res <= 1e-6, || format!("Q residual {q_res:e}"))?;
    ensure(r_res <= 1e-6, || format!("R residual {r_res:e}"))?;
    for order in [Order::Ab, Order::Ba] {
        for &s in &probes {
            let mut prev = f64::INFINITY;
            for n in 0..=80 {
                let v = r.r_n_eval(order, n, s).map_err(|e| e.to_string())?;
                ensure(v <= prev, || format!("R_{n}({s}) = {v} > R_{}(s) = {prev}", n - 1))?;
                prev = v;
            }
        }
    }
    let d1 = r.derivative_at_one(Order::Ab, tol).map_err(|e| e.to_string())?;
    let d2 = r.derivative_at_one(Order::Ba, tol).map_err(|e| e.to_string())?;
    ensure((d1 - 1.0).abs() <= 1e-4 && (d2 - 1.0).abs() <= 1e-4, || {
        format!("R'(1) = {d1}, R~'(1) = {d2}")
    })?;
    Ok(format!(
        "Q residual {q_res:.2e}, R residual {r_res:.2e}, R'(1) = {d1:.8}, R~'(1) = {d2:.8}"
    ))
}

fn criterion_6() -> Outcome {
    let ctx = test_pair();
    let eps = 0.25;
    let limit = limit_sum(&ctx, eps, Side::A, 1e-12).map_err(|e| e.to_string())?.value;
    let seq = ratio_deviation_sequence(&ctx, 40, eps, 4096).map_err(|e| e.to_string())?;
    let even: Vec<f64> = seq.iter().step_by(2).map(|r| r.normalized.unwrap()).collect();
    let k = (2..even.len())
        .find(|&k| (even[k] - even[k - 1]).abs() <= 1e-3 * even[k].abs())
        .ok_or("normalized sequence never settled")?;
    let rel = (even[k] - limit).abs() / limit;
    ensure(rel <= 0.01, || {
        format!("n = {}: normalized {} vs limit {limit}, relative {rel:.3e}", 2 * k, even[k])
    })?;
    Ok(format!(
        "limit {limit:.10}, Cauchy horizon n = {}, normalized {:.10}, relative gap {rel:.2e}",
        2 * k,
        even[k]
    ))
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..10 {
        let with_zero = rng.random_bool(0.5);
        let dist = random_dist(&mut rng, 4, with_zero);
        let m = dist.mean();
        for eps in [0.1, 0.25, 0.5] {
            let rate = chernoff_rate(&dist, eps).map_err(|e| e.to_string())?;
            if !rate.is_degenerate() {
                ensure(rate.lambda > 0.0 && rate.lambda < 1.0, || format!("lambda = {}", rate.lambda))?;
            }
            for k in 1..=20 {
                let phi = phi_exact(&dist, k, eps).map_err(|e| e.to_string())?;
                let kf = k as f64;
                let mut bound = 0.0;
                if let Some(a) = rate.alpha_star {
                    bound += a.powf(-kf * (m + eps)) * dist.value(a).powf(kf);
                }
                if let Some(b) = rate.beta_star {
                    bound += b.powf(-kf * (m - eps)) * dist.value(b).powf(kf);
                }
                ensure(phi <= bound * (1.0 + 1e-12), || {
                    format!("k = {k}, eps = {eps}: phi {phi} > bound {bound}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (mechanism, eps, k) triples"))
}

fn criterion_8() -> Outcome {
    let ctx = test_pair();
    let bound = theta1_bound(&ctx, DEFAULT_S0, 30, 1e-12).map_err(|e| e.to_string())?;
    let cap = ctx.a().value(DEFAULT_S0);
    let mut worst: f64 = 0.0;
    for n in 0..=30 {
        let v = mgf_wn(&ctx, n, bound.theta1).map_err(|e| e.to_string())?;
        worst = worst.max(v);
        ensure(v <= cap * (1.0 + 1e-12), || format!("n = {n}: {v} > {cap}"))?;
    }
    Ok(format!("theta_1 = {:.12}, max mgf {worst:.12} <= f(a; 1.5) = {cap}", bound.theta1))
}

const MC_PATHS: usize = 100_000;
const SEED: u64 = 42;

fn criterion_9() -> Outcome {
    let ctx = test_pair();
    let t = NormalizerTable::new(&ctx);
    let ens = simulate(&SimConfig::new(ctx.schedule().clone(), 12, MC_PATHS, SEED)).map_err(|e| e.to_string())?;
    for n in 0..=12 {
        let m = ens.empirical_w_moments(n, &[]).map_err(|e| e.to_string())?;
        let v_ref = t.var_wn(n).map_err(|e| e.to_string())?;
        ensure((m.mean - 1.0).abs() <= 3.0 * m.mean_se + 1e-12, || {
            format!("n = {n}: mean {} (se {})", m.mean, m.mean_se)
        })?;
        ensure((m.variance - v_ref).abs() <= 3.0 * m.variance_se + 1e-12, || {
            format!("n = {n}: variance {} vs {v_ref} (se {})", m.variance, m.variance_se)
        })?;
    }
    let exact = ratio_deviation_sequence(&ctx, 6, 0.25, 4096).map_err(|e| e.to_string())?;
    for rep in &exact {
        let est = ens.estimate_ratio_deviation(rep.n, 0.25).map_err(|e| e.to_string())?;
        let reference = rep.exact.unwrap();
        ensure(est.within(reference, 3.0), || {
            format!("ratio n = {}: {} (se {}) vs {reference}", rep.n, est.value, est.standard_error)
        })?;
    }
    let dying = IterationContext::pair(d(&[(0, 0.25), (2, 0.75)]), d(&[(1, 0.5), (2, 0.5)]));
    let rho = dying.extinction().map_err(|e| e.to_string())?.rho_ab;
    let ens = simulate(&SimConfig::new(dying.schedule().clone(), 20, MC_PATHS, SEED)).map_err(|e| e.to_string())?;
    let freq = ens.extinction_frequency(20).map_err(|e| e.to_string())?;
    ensure(freq.within(rho, 3.0), || {
        format!("extinction {} (se {}) vs rho_ab {rho}", freq.value, freq.standard_error)
    })?;
    Ok(format!(
        "moments n <= 12 and ratio n <= 6 inside 3 SE; extinction {:.5} vs rho_ab {rho:.5} (se {:.1e})",
        freq.value, freq.standard_error
    ))
}

/// `(slope, r_squared, points)` of `log(-log p)` against `log Gamma_n` over
/// the resolvable estimates.
fn decay_fit(ens: &PathEnsemble, points: &[(usize, f64)]) -> Option<(f64, f64, usize)> {
    let floor = 10.0 / ens.paths() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(_, p)| (floor..=0.5).contains(p))
        .map(|&(n, p)| (ens.gammas[n].ln(), (-p.ln()).ln()))
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    linear_fit(&xs, &ys).map(|f| (f.slope, f.r_squared, xs.len()))
}

fn criterion_10() -> Outcome {
    let ctx = test_pair();
    let proxy = 23;
    let mut cfg = SimConfig::new(ctx.schedule().clone(), proxy, MC_PATHS, SEED);
    // Multinomial batching is exact; a low threshold only saves time.
    cfg.batch_threshold = 256;
    let ens = simulate(&cfg).map_err(|e| e.to_string())?;

    let w_eps = 0.15;
    let mut w_points = Vec::new();
    for n in 0..proxy {
        if let Ok(est) = ens.estimate_w_deviation(n, w_eps, proxy) {
            w_points.push((n, est.estimate.value));
        }
    }
    let (w_slope, _, w_used) = decay_fit(&ens, &w_points).ok_or("too few W points")?;

    let (eps, delta) = (0.25, 0.5);
    let mut c_points = Vec::new();
    let mut r_points = Vec::new();
    for n in 0..proxy {
        let c = ens
            .estimate_conditional_deviation(n, eps, delta, proxy)
            .map_err(|e| e.to_string())?;
        c_points.push((n, c.estimate.value));
        r_points.push((n, ens.estimate_ratio_deviation(n, eps).map_err(|e| e.to_string())?.value));
    }
    let (c_slope, _, c_used) = decay_fit(&ens, &c_points).ok_or("too few conditional points")?;

    let floor = 10.0 / ens.paths() as f64;
    let (ns, logs): (Vec<f64>, Vec<f64>) = r_points
        .iter()
        .filter(|(_, p)| (floor..=0.5).contains(p))
        .map(|&(n, p)| (n as f64, p.ln()))
        .unzip();
    let ratio = linear_fit(&ns, &logs).ok_or("too few ratio points")?;

    let detail = format!(
        "W slope {w_slope:.3} ({w_used} pts), conditional slope {c_slope:.3} ({c_used} pts), \
         ratio log-linear R^2 {:.4} slope {:.3} ({} pts)",
        ratio.r_squared,
        ratio.slope,
        ns.len()
    );
    ensure(w_slope >= 0.25 && c_slope >= 0.25, || detail.clone())?;
    ensure(ns.len() >= 3 && ratio.r_squared >= 0.95 && ratio.slope < 0.0, || detail.clone())?;
    Ok(detail)
}

fn run_verify(threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gwc"));
    cmd.args(["verify", "--seed", "42"]);
    match threads {
        Some(t) => cmd.env("GWC_THREADS", t),
        None => cmd.env_remove("GWC_THREADS"),
    };
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("verify exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn criterion_11() -> Outcome {
    let first = run_verify(None)?;
    let second = run_verify(None)?;
    let one = run_verify(Some("1"))?;
    let eight = run_verify(Some("8"))?;
    ensure(first == second, || "two runs differ".into())?;
    ensure(one == eight, || "GWC_THREADS=1 and 8 differ".into())?;
    ensure(first == one, || "default and single-thread runs differ".into())?;
    Ok(format!("four runs, {} identical bytes", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("extinction fixed point", criterion_1),
        ("moment formulas", criterion_2),
        ("extinction ordering chain", criterion_3),
        ("martingale one-step identity", criterion_4),
        ("functional equation residuals", criterion_5),
        ("large-deviation limit", criterion_6),
        ("Chernoff validity", criterion_7),
        ("MGF bound", criterion_8),
        ("Monte Carlo consistency", criterion_9),
        ("supergeometric decay shape", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
