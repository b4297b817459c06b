//! Deviation probabilities of the one-step ratio `Z_{n+1} / Z_n`.
//!
//! `phi(k, eps) = P(|S_k / k - m| > eps)` for a sum `S_k` of `k` offspring
//! counts is computed exactly by convolution and bounded by Chernoff rates.
//! Mixing over the law of `Z_n` gives the exact ratio-deviation probability,
//! whose normalized limit is `sum_j phi(j, eps) q_j`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::iterate::IterationContext;
use crate::limits::{q_coefficients, QSystem};
use crate::mechanism::OffspringDistribution;
use crate::numerics::{golden_section_min, GaussRule};
use crate::series::{convolve, CONVOLUTION_BUDGET};

/// Initial upper end of the Chernoff search for `alpha`.
pub const ALPHA_MAX: f64 = 10.0;

/// Starting truncation for [`limit_sum`].
pub const LIMIT_SUM_START: usize = 64;

/// Largest truncation [`limit_sum`] tries before giving up.
pub const LIMIT_SUM_MAX: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChernoffRate {
    pub epsilon: f64,
    /// `max` of the active branch rates; 0 when both branches are inactive,
    /// meaning `phi` vanishes identically.
    pub lambda: f64,
    /// Minimizer of `alpha^{-(m+eps)} f(alpha)` over `alpha > 1`.
    pub alpha_star: Option<f64>,
    /// Minimizer of `beta^{-(m-eps)} f(beta)` over `beta in (0, 1)`.
    pub beta_star: Option<f64>,
    pub upper_rate: f64,
    pub lower_rate: f64,
}

impl ChernoffRate {
    /// `upper_rate^k + lower_rate^k`, an upper bound for `phi(k, eps)`.
    pub fn bound(&self, k: usize) -> f64 {
        let k = k as i32;
        self.upper_rate.powi(k) + self.lower_rate.powi(k)
    }

    pub fn is_degenerate(&self) -> bool {
        self.alpha_star.is_none() && self.beta_star.is_none()
    }
}

/// `ln f(e^t)` without overflow.
fn log_pgf_exp(dist: &OffspringDistribution, t: f64) -> f64 {
    let terms = dist
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &p)| p.ln() + j as f64 * t);
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    max + terms.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Golden-section between `fixed` and `free` (in log scale), moving the free
/// end out by the initial width while the minimizer sits on it.
fn minimize_extending<F: Fn(f64) -> f64>(f: F, fixed: f64, mut free: f64) -> (f64, f64) {
    let step = free - fixed;
    for _ in 0..60 {
        let (lo, hi) = if free > fixed { (fixed, free) } else { (free, fixed) };
        let (x, fx) = golden_section_min(&f, lo, hi, 1e-12 * (hi - lo).abs().max(1.0));
        if (x - free).abs() > 1e-6 * step.abs() {
            return (x, fx);
        }
        free += step;
    }
    let (lo, hi) = if free > fixed { (fixed, free) } else { (free, fixed) };
    golden_section_min(&f, lo, hi, 1e-12)
}

/// Optimal Chernoff rates for the upper and lower deviations of a sample mean.
pub fn chernoff_rate(dist: &OffspringDistribution, epsilon: f64) -> Result<ChernoffRate> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    dist.require_exact("Chernoff rates")?;
    let m = dist.mean();
    let upper_active = m + epsilon < dist.max_support() as f64;
    let lower_active = m - epsilon > dist.min_support() as f64;
    let (mut alpha_star, mut upper_rate) = (None, 0.0);
    if upper_active {
        let c = m + epsilon;
        let (t, v) = minimize_extending(|t| log_pgf_exp(dist, t) - c * t, 0.0, ALPHA_MAX.ln());
        alpha_star = Some(t.exp());
        upper_rate = v.exp();
    }
    let (mut beta_star, mut lower_rate) = (None, 0.0);
    if lower_active {
        let c = m - epsilon;
        let (t, v) = minimize_extending(|t| log_pgf_exp(dist, t) - c * t, 0.0, -ALPHA_MAX.ln());
        beta_star = Some(t.exp());
        lower_rate = v.exp();
    }
    Ok(ChernoffRate {
        epsilon,
        lambda: upper_rate.max(lower_rate),
        alpha_star,
        beta_star,
        upper_rate,
        lower_rate,
    })
}

fn outside_mass(law: &[f64], k: usize, m: f64, epsilon: f64) -> f64 {
    let center = k as f64 * m;
    let radius = k as f64 * epsilon;
    // Excludes lattice points at distance exactly k*eps despite rounding.
    let slack = 1e-12 * (k as f64 * (m + epsilon) + 1.0);
    law.iter()
        .enumerate()
        .filter(|(j, _)| (*j as f64 - center).abs() - radius > slack)
        .map(|(_, &p)| p)
        .sum()
}

fn check_budget(dist: &OffspringDistribution, k: usize) -> Result<()> {
    if k.saturating_mul(dist.max_support()) > CONVOLUTION_BUDGET {
        return Err(Error::DegreeOverflow(format!(
            "{k}-fold convolution of support {} exceeds the budget {CONVOLUTION_BUDGET}",
            dist.max_support()
        )));
    }
    Ok(())
}

/// `P(|S_k / k - m| > eps)` exactly, with the strict inequality.
pub fn phi_exact(dist: &OffspringDistribution, k: usize, epsilon: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("phi needs k >= 1"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    dist.require_exact("exact deviation probabilities")?;
    check_budget(dist, k)?;
    let mut law = vec![1.0];
    for _ in 0..k {
        law = convolve(&law, dist.probs());
    }
    Ok(outside_mass(&law, k, dist.mean(), epsilon).min(1.0))
}

/// `phi(j, eps)` for `j = 0..=k_max` (entry 0 is 0), sharing one running
/// convolution.
pub fn phi_table(dist: &OffspringDistribution, k_max: usize, epsilon: f64) -> Result<Vec<f64>> {
    dist.require_exact("exact deviation probabilities")?;
    check_budget(dist, k_max)?;
    let m = dist.mean();
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(0.0);
    let mut law = vec![1.0];
    for k in 1..=k_max {
        law = convolve(&law, dist.probs());
        out.push(outside_mass(&law, k, m, epsilon).min(1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationReport {
    pub n: usize,
    pub epsilon: f64,
    /// `sum_{j <= D} P(Z_n = j) phi(j, eps)`; the true value lies in
    /// `[exact, exact + truncation_bound]`.
    pub exact: Option<f64>,
    pub truncation_bound: f64,
    /// `f_n(ab; upper_rate) + f_n(ab; lower_rate)`.
    pub chernoff_bound: Option<f64>,
    /// `exact` divided by `(a_1 b_1)^k` for `n = 2k`, by `a_1^k b_1^{k-1}` for
    /// `n = 2k - 1`.
    pub normalized: Option<f64>,
    pub limit_sum: Option<f64>,
}

fn no_death(ctx: &IterationContext) -> Result<()> {
    let (a, b) = (ctx.a(), ctx.b());
    if a.prob(0) > 0.0 || b.prob(0) > 0.0 || !ctx.is_exact() {
        return Err(Error::precondition(
            "exact ratio deviations need finite support and a_0 = b_0 = 0 (the ratio is undefined after extinction)",
        ));
    }
    Ok(())
}

/// The normalizer that turns the ratio deviation at generation `n` into a
/// quantity with a finite limit.
pub fn ratio_normalizer(ctx: &IterationContext, n: usize) -> f64 {
    let (a1, b1) = (ctx.a().prob(1), ctx.b().prob(1));
    let k = n.div_ceil(2) as i32;
    if n % 2 == 0 {
        (a1 * b1).powi(k)
    } else {
        a1.powi(k) * b1.powi(k - 1)
    }
}

/// Ratio-deviation reports for `n = 0..=n_max`.
pub fn ratio_deviation_sequence(
    ctx: &IterationContext,
    n_max: usize,
    epsilon: f64,
    degree_cap: usize,
) -> Result<Vec<DeviationReport>> {
    no_death(ctx)?;
    let laws = ctx.zn_distributions(n_max, degree_cap)?;
    let rates = [chernoff_rate(ctx.a(), epsilon)?, chernoff_rate(ctx.b(), epsilon)?];
    let len = laws.iter().map(|l| l.degree()).max().unwrap_or(1);
    let tables = [
        phi_table(ctx.a(), len, epsilon)?,
        phi_table(ctx.b(), len, epsilon)?,
    ];
    laws.iter()
        .enumerate()
        .map(|(n, law)| {
            let side = n % 2;
            let table = &tables[side];
            let rate = &rates[side];
            let exact: f64 = law
                .coeffs()
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &p)| p * table[j])
                .sum();
            let truncation_bound = if law.is_exact() {
                0.0
            } else {
                law.tail_bound() * rate.bound(law.degree_cap() + 1).min(1.0)
            };
            let chernoff = ctx.f_n_eval(n, rate.upper_rate)? + ctx.f_n_eval(n, rate.lower_rate)?;
            let norm = ratio_normalizer(ctx, n);
            Ok(DeviationReport {
                n,
                epsilon,
                exact: Some(exact),
                truncation_bound,
                chernoff_bound: Some(chernoff),
                normalized: (norm > 0.0).then(|| exact / norm),
                limit_sum: None,
            })
        })
        .collect()
}

/// `P(|Z_{n+1} / Z_n - omega_n| > eps)` exactly, as the mixture of
/// `phi(j, eps)` over the law of `Z_n`.
pub fn ratio_deviation_exact(
    ctx: &IterationContext,
    n: usize,
    epsilon: f64,
    degree_cap: usize,
) -> Result<DeviationReport> {
    let mut seq = ratio_deviation_sequence(ctx, n, epsilon, degree_cap)?;
    Ok(seq.pop().expect("sequence includes n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitSum {
    pub value: f64,
    /// Truncation index `J`.
    pub terms: usize,
    /// Bound on the omitted terms `j > J`.
    pub tail_certificate: f64,
    /// `true` when the certificate comes from the ratio test on trailing
    /// coefficients; `false` when only successive partial sums agreed.
    pub geometric_certificate: bool,
}

/// `sum_j phi(j, eps) q_j` (side `a`) or `sum_j phi_b(j, eps) q~_j` (side `b`).
///
/// The tail beyond `J` is bounded by `phi(j) <= upper^j + lower^j` times a
/// geometric envelope `q_j <= q_J r^{j-J}`, with `r` the largest ratio among
/// the trailing quarter of the coefficients. `J` doubles until the bound is
/// below `tail_tol`. If the envelope does not give a convergent bound, the
/// weaker partial-sum criterion is used and flagged.
pub fn limit_sum(ctx: &IterationContext, epsilon: f64, side: Side, tail_tol: f64) -> Result<LimitSum> {
    let dist = match side {
        Side::A => ctx.a(),
        Side::B => ctx.b(),
    };
    let rate = chernoff_rate(dist, epsilon)?;
    let mut j_max = LIMIT_SUM_START;
    let mut previous: Option<f64> = None;
    loop {
        let coeffs = q_coefficients(ctx, j_max, 1e-13)?;
        let q = match side {
            Side::A => coeffs.q,
            Side::B => coeffs.q_tilde,
        };
        let phi = phi_table(dist, j_max, epsilon)?;
        let value: f64 = (1..=j_max).map(|j| phi[j] * q.coefficient(j).unwrap_or(0.0)).sum();
        if rate.is_degenerate() {
            return Ok(LimitSum {
                value,
                terms: j_max,
                tail_certificate: 0.0,
                geometric_certificate: true,
            });
        }
        let qs = q.coeffs();
        let start = (3 * j_max / 4).max(1);
        let growth = (start..qs.len().saturating_sub(1).min(j_max))
            .filter(|&j| qs[j] > 0.0)
            .map(|j| qs[j + 1] / qs[j])
            .fold(0.0, f64::max);
        let q_last = qs.get(j_max).copied().unwrap_or(0.0);
        let mut tail = 0.0;
        let mut finite = true;
        for r in [rate.upper_rate, rate.lower_rate] {
            let x = r * growth;
            if r == 0.0 {
                continue;
            }
            if x >= 1.0 {
                finite = false;
                break;
            }
            tail += q_last * r.powi(j_max as i32) * x / (1.0 - x);
        }
        if finite && tail < tail_tol {
            return Ok(LimitSum {
                value,
                terms: j_max,
                tail_certificate: tail,
                geometric_certificate: true,
            });
        }
        if let Some(prev) = previous {
            if !finite && (value - prev).abs() < tail_tol {
                return Ok(LimitSum {
                    value,
                    terms: j_max,
                    tail_certificate: (value - prev).abs(),
                    geometric_certificate: false,
                });
            }
        }
        if j_max >= LIMIT_SUM_MAX {
            let gap = previous.map_or(f64::INFINITY, |p| (value - p).abs());
            return Err(Error::non_convergence("limit sum tail certificate", j_max, tail.min(gap)));
        }
        previous = Some(value);
        j_max *= 2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkIntegral {
    pub value: f64,
    pub error_estimate: f64,
    /// `I_{m+1} / I_m` for consecutive blocks near 1.
    pub block_ratios: Vec<f64>,
}

/// `r > 0` satisfies `a_1 b_1 (m_a m_b)^r > 1`.
pub fn integral_condition(ctx: &IterationContext, r: f64) -> bool {
    ctx.a().prob(1) * ctx.b().prob(1) * ctx.mean_product().powf(r) > 1.0
}

/// `int_0^1 Q(s) |log s|^{r-1} / s ds`.
///
/// With `s = exp(-tau)` this is `int_0^inf Q(e^{-tau}) tau^{r-1} dtau`. The part
/// `s <= 1/2` is integrated directly. Above `1/2` the interval is cut into
/// blocks `[t_m, t_{m+1}]` with `t_{m+1} = g(b; g(a; t_m))`; since
/// `Q(alpha(s)) = c Q(s)` the block integrals eventually shrink geometrically,
/// and the remainder is extrapolated from their ratio.
pub fn qk_integral(ctx: &IterationContext, r: f64, quad_points: usize) -> Result<QkIntegral> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::domain(format!("r must be > 0, got {r}")));
    }
    let identity = ctx.a().prob(1) == 1.0 && ctx.b().prob(1) == 1.0;
    if !identity && !integral_condition(ctx, r) {
        return Err(Error::precondition(format!(
            "a_1 b_1 (m_a m_b)^r = {} must exceed 1",
            ctx.a().prob(1) * ctx.b().prob(1) * ctx.mean_product().powf(r)
        )));
    }
    let sys = QSystem::new(ctx)?;
    let tol = 1e-13;
    let rule = GaussRule::new(quad_points.max(2));
    let q_at = |tau: f64| sys.q_point((-tau).exp(), tol).map(|p| p.value);
    let integrand = |tau: f64| q_at(tau).unwrap_or(f64::NAN) * tau.powf(r - 1.0);

    // s in (0, 1/2]: tau in [ln 2, tau_end), where the integrand is below
    // e^{-tau} tau^{r-1} times a constant.
    let tau0 = 2f64.ln();
    let tau_end = 60.0 + 4.0 * r;
    let (head, head_err) = rule.integrate_adaptive(&integrand, tau0, tau_end, 1e-14, 30);
    if !head.is_finite() {
        return Err(Error::non_convergence("Q evaluation in the integral head", 0, f64::NAN));
    }

    if identity {
        // Q(s) = s: the blocks never advance, integrate (0, tau0] after
        // tau = x^{1/r}, which turns tau^{r-1} dtau into dx / r.
        let g = |x: f64| q_at(x.powf(1.0 / r)).unwrap_or(f64::NAN) / r;
        let (near, err) = rule.integrate_adaptive(&g, 0.0, tau0.powf(r), 1e-14, 30);
        return Ok(QkIntegral {
            value: head + near,
            error_estimate: head_err + err,
            block_ratios: Vec::new(),
        });
    }

    let next_t = |t: f64| -> Result<f64> {
        let u = crate::iterate::g_eval(ctx.a(), t)?;
        crate::iterate::g_eval(ctx.b(), u)
    };
    let mut t = 0.5;
    let mut tau_hi = tau0;
    let mut blocks: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut err = head_err;
    let mut total = head;
    for _ in 0..80 {
        let t_next = next_t(t)?;
        let tau_lo = -t_next.ln();
        if !(tau_lo < tau_hi) || tau_lo < 1e-9 {
            break;
        }
        let (block, block_err) = rule.integrate_adaptive(&integrand, tau_lo, tau_hi, 1e-14 * total.abs().max(1.0), 12);
        if !block.is_finite() {
            return Err(Error::non_convergence("Q evaluation near 1", blocks.len(), f64::NAN));
        }
        if let Some(&last) = blocks.last() {
            ratios.push(block / last);
        }
        blocks.push(block);
        total += block;
        err += block_err;
        t = t_next;
        tau_hi = tau_lo;
        if block.abs() <= 1e-15 * total.abs() {
            break;
        }
    }
    let tail_ratio = ratios.iter().rev().take(3).copied().fold(0.0, f64::max);
    if ratios.len() < 3 || tail_ratio >= 1.0 {
        return Err(Error::DivergenceSuspected(format!(
            "block ratios {ratios:?} do not fall below 1"
        )));
    }
    let last = *blocks.last().expect("at least one block");
    let tail = last * tail_ratio / (1.0 - tail_ratio);
    Ok(QkIntegral {
        value: total + tail,
        error_estimate: err + tail.abs(),
        block_ratios: ratios,
    })
}

/// `a_1 m_a^r > 1` and `b_1 m_b^r > 1`. For finite support the moment sums
/// of order `2r + delta` are always finite, so `delta` only needs to be
/// nonnegative.
pub fn moment_condition_check(ctx: &IterationContext, r: f64, delta: f64) -> bool {
    if !(delta >= 0.0) || !ctx.is_exact() {
        return false;
    }
    let (a, b) = (ctx.a(), ctx.b());
    a.prob(1) * a.mean().powf(r) > 1.0 && b.prob(1) * b.mean().powf(r) > 1.0
}
