//! Limit functions of the normalized iterates.
//!
//! `Q = lim (f_{2n} - rho_ab) / gamma_{2n}` and `Q~ = lim (f_{2n+1} - rho_ab) / gamma_{2n+1}`
//! describe how `f_n` approaches the extinction probability, while
//! `R = lim Gamma_n (g_n - 1)` describes inverse iterates above 1.
//!
//! Everything here is evaluated in shifted coordinates. Around its input
//! fixed point `x0` a mechanism is written `f(x0 + v) = y0 + v H(v)`, with the
//! Taylor coefficients of `f` at `x0`. Iterates then become products of
//! factors `H(v) / H(0)` that tend to 1, so nothing is formed by subtracting
//! nearly equal numbers and nothing under- or overflows as `gamma_n` or
//! `Gamma_n` run off.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::iterate::{ExtinctionResult, IterationContext, Order};
use crate::mechanism::{horner, OffspringDistribution};
use crate::moments::NormalizerTable;
use crate::numerics::chebyshev_points;
use crate::series::{truncated_product, TruncatedSeries};

/// Double-step cap on every limit iteration.
pub const HORIZON_CAP: usize = 200;

/// Number of probe points in the default grids.
pub const PROBE_COUNT: usize = 17;

/// Step for central differences on converged limit values.
pub const FD_STEP: f64 = 1e-5;

pub const DEFAULT_S0: f64 = 1.5;

/// Default probes on the `Q` side.
pub fn q_probes() -> Vec<f64> {
    chebyshev_points(0.02, 0.98, PROBE_COUNT)
}

/// Default probes on the `R` side, `[1 + 1e-3, f(a; s0)]`.
pub fn r_probes(ctx: &IterationContext, s0: f64) -> Vec<f64> {
    chebyshev_points(1.0 + 1e-3, ctx.a().value(s0), PROBE_COUNT)
}

/// A mechanism in shifted coordinates: `F(v) = v H(v)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ShiftedMap {
    /// Coefficients of `H`; `h[0]` is the slope at the base point.
    h: Vec<f64>,
}

impl ShiftedMap {
    pub(crate) fn at(dist: &OffspringDistribution, x0: f64) -> Self {
        let mut t = dist.taylor_at(x0);
        t.remove(0);
        if t.is_empty() {
            t.push(0.0);
        }
        Self { h: t }
    }

    pub(crate) fn slope(&self) -> f64 {
        self.h[0]
    }

    pub(crate) fn factor(&self, v: f64) -> f64 {
        horner(&self.h, v)
    }

    pub(crate) fn apply(&self, v: f64) -> f64 {
        v * self.factor(v)
    }

    /// `F'(v) = H(v) + v H'(v)`.
    pub(crate) fn derivative(&self, v: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &c) in self.h.iter().enumerate().rev() {
            acc = acc * v + (i + 1) as f64 * c;
        }
        acc
    }

    /// Solves `F(v) = u` for `u > F(-1)`. Newton from a point right of the
    /// root, where convexity makes the iterates decrease monotonically;
    /// bisection covers steps that leave the bracket.
    pub(crate) fn inverse(&self, u: f64) -> Result<f64> {
        if u == 0.0 {
            return Ok(0.0);
        }
        let m = self.slope();
        if !(m > 0.0) {
            return Err(Error::NonMonotone("zero slope at the base point".into()));
        }
        let floor = self.apply(-1.0);
        if u <= floor {
            return Err(Error::domain(format!("shifted inverse argument {u} is at or below F(-1) = {floor}")));
        }
        let (mut lo, mut hi) = if u > 0.0 { (0.0, u / m) } else { (-1.0, 0.0) };
        let mut v = if u / m >= -1.0 { u / m } else { hi };
        for _ in 0..300 {
            let r = self.apply(v) - u;
            if r <= 0.0 {
                lo = v;
                if r == 0.0 || hi - lo <= 1e-17 * v.abs() {
                    return Ok(v);
                }
            } else {
                hi = v;
            }
            let d = self.derivative(v);
            let mut next = if d > 0.0 { v - r / d } else { f64::NAN };
            if !(next >= lo && next <= hi) {
                next = 0.5 * (lo + hi);
            }
            if (v - next).abs() <= 1e-17 * v.abs() {
                return Ok(next);
            }
            v = next;
        }
        Ok(v)
    }
}

/// `gamma_n` built from the slopes at the extinction fixed points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QNormalizer {
    /// `f'(a; rho_ba)`
    pub c_a: f64,
    /// `f'(b; rho_ab)`
    pub c_b: f64,
}

impl QNormalizer {
    pub fn gamma(&self, n: usize) -> f64 {
        let k = (n / 2) as i32;
        let even = (self.c_a * self.c_b).powi(k);
        if n % 2 == 0 {
            even
        } else {
            even * self.c_a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LimitKind {
    Q,
    QTilde,
    R,
    RTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeValue {
    pub s: f64,
    pub value: f64,
    /// Iterations (double steps for `Q`, single steps for `R`) until the
    /// tolerance was met.
    pub horizon: usize,
    pub last_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitFunctionApprox {
    pub kind: LimitKind,
    pub probes: Vec<ProbeValue>,
    pub coefficients: Option<TruncatedSeries>,
    /// Largest per-probe horizon.
    pub horizon: usize,
}

impl LimitFunctionApprox {
    fn new(kind: LimitKind, probes: Vec<ProbeValue>) -> Self {
        let horizon = probes.iter().map(|p| p.horizon).max().unwrap_or(0);
        Self {
            kind,
            probes,
            coefficients: None,
            horizon,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.value).collect()
    }
}

fn converged(prev: f64, next: f64, tol: f64) -> (bool, f64) {
    let gap = (next - prev).abs();
    (gap <= tol * next.abs().max(1.0), gap)
}

/// The `Q`, `Q~` side of a pair with extinction probability below 1.
#[derive(Debug, Clone)]
pub struct QSystem {
    extinction: ExtinctionResult,
    normalizer: QNormalizer,
    /// `a` around `rho_ba`, landing near `rho_ab`.
    a: ShiftedMap,
    /// `b` around `rho_ab`, landing near `rho_ba`.
    b: ShiftedMap,
    a_dist: OffspringDistribution,
    b_dist: OffspringDistribution,
}

impl QSystem {
    pub fn new(ctx: &IterationContext) -> Result<Self> {
        if !ctx.is_exact() {
            return Err(Error::precondition("limit functions need exact mechanisms"));
        }
        let extinction = ctx.extinction()?;
        if extinction.rho_ab >= 1.0 {
            return Err(Error::precondition(format!(
                "limit functions Q need rho_ab < 1; the pair is {}",
                extinction.regime
            )));
        }
        let a = ShiftedMap::at(ctx.a(), extinction.rho_ba);
        let b = ShiftedMap::at(ctx.b(), extinction.rho_ab);
        let normalizer = QNormalizer {
            c_a: a.slope(),
            c_b: b.slope(),
        };
        if !(normalizer.c_a > 0.0 && normalizer.c_b > 0.0) {
            return Err(Error::precondition(format!(
                "degenerate normalizer: f'(a; rho_ba) = {}, f'(b; rho_ab) = {}",
                normalizer.c_a, normalizer.c_b
            )));
        }
        Ok(Self {
            extinction,
            normalizer,
            a,
            b,
            a_dist: ctx.a().clone(),
            b_dist: ctx.b().clone(),
        })
    }

    pub fn extinction(&self) -> &ExtinctionResult {
        &self.extinction
    }

    pub fn normalizer(&self) -> QNormalizer {
        self.normalizer
    }

    fn check(s: f64) -> Result<()> {
        if (0.0..=1.0).contains(&s) {
            Ok(())
        } else {
            Err(Error::domain(format!("Q arguments must lie in [0, 1], got {s}")))
        }
    }

    fn map(&self, k: usize) -> &ShiftedMap {
        if k % 2 == 0 {
            &self.a
        } else {
            &self.b
        }
    }

    /// `Q_n(s) = (f_n(ab; s) - rho_ab) / gamma_n`.
    pub fn qn_eval(&self, n: usize, s: f64) -> Result<f64> {
        Self::check(s)?;
        let mut v = if n % 2 == 0 {
            s - self.extinction.rho_ab
        } else {
            s - self.extinction.rho_ba
        };
        let mut q = v;
        for k in (0..n).rev() {
            let map = self.map(k);
            let h = map.factor(v);
            q *= h / map.slope();
            v *= h;
        }
        Ok(q)
    }

    /// `Q(s)` by applying `a o b` from the outside until `Q_{2k}` settles.
    pub fn q_point(&self, s: f64, tol: f64) -> Result<ProbeValue> {
        Self::check(s)?;
        let mut v = s - self.extinction.rho_ab;
        let mut q = v;
        for k in 1..=HORIZON_CAP {
            let hb = self.b.factor(v);
            let x = v * hb;
            let ha = self.a.factor(x);
            let next = q * (hb / self.b.slope()) * (ha / self.a.slope());
            v = x * ha;
            let (done, gap) = converged(q, next, tol);
            q = next;
            if done {
                return Ok(ProbeValue {
                    s,
                    value: q,
                    horizon: k,
                    last_gap: gap,
                });
            }
        }
        Err(Error::non_convergence(format!("Q({s})"), HORIZON_CAP, (q * tol).abs()))
    }

    /// `Q~(s)` from the odd iterates `f_{2k+1} = a o beta_k`.
    pub fn q_tilde_point(&self, s: f64, tol: f64) -> Result<ProbeValue> {
        Self::check(s)?;
        let (ca, cb) = (self.a.slope(), self.b.slope());
        let mut w = s - self.extinction.rho_ba;
        let mut p = w;
        let mut value = p * self.a.factor(w) / ca;
        for k in 1..=HORIZON_CAP {
            let ha = self.a.factor(w);
            let x = w * ha;
            let hb = self.b.factor(x);
            p *= (ha / ca) * (hb / cb);
            w = x * hb;
            let next = p * self.a.factor(w) / ca;
            let (done, gap) = converged(value, next, tol);
            value = next;
            if done {
                return Ok(ProbeValue {
                    s,
                    value,
                    horizon: k,
                    last_gap: gap,
                });
            }
        }
        Err(Error::non_convergence(format!("Q~({s})"), HORIZON_CAP, (value * tol).abs()))
    }

    /// `Q'(s)` as the limit of `f'_{2k}(s) / gamma_{2k}`, a product of
    /// `F'(v_j) / F'(0)` along the orbit.
    pub fn q_derivative_chain(&self, s: f64, tol: f64) -> Result<f64> {
        Self::check(s)?;
        let mut v = s - self.extinction.rho_ab;
        let mut d = 1.0;
        for _ in 0..HORIZON_CAP {
            let db = self.b.derivative(v) / self.b.slope();
            let x = self.b.apply(v);
            let da = self.a.derivative(x) / self.a.slope();
            v = self.a.apply(x);
            let next = d * db * da;
            let (done, _) = converged(d, next, tol);
            d = next;
            if done {
                return Ok(d);
            }
        }
        Err(Error::non_convergence(format!("Q'({s})"), HORIZON_CAP, (d * tol).abs()))
    }

    /// Central difference of converged `Q` values.
    pub fn q_derivative_fd(&self, s: f64, tol: f64) -> Result<f64> {
        let hi = self.q_point(s + FD_STEP, tol)?.value;
        let lo = self.q_point(s - FD_STEP, tol)?.value;
        Ok((hi - lo) / (2.0 * FD_STEP))
    }

    pub fn q_tilde_derivative_fd(&self, s: f64, tol: f64) -> Result<f64> {
        let hi = self.q_tilde_point(s + FD_STEP, tol)?.value;
        let lo = self.q_tilde_point(s - FD_STEP, tol)?.value;
        Ok((hi - lo) / (2.0 * FD_STEP))
    }

    /// `(Q, Q~)` at every probe. Probes are independent and evaluated in
    /// parallel; results come back in probe order.
    pub fn q_limit(&self, probes: &[f64], tol: f64) -> Result<(LimitFunctionApprox, LimitFunctionApprox)> {
        let q = probes
            .par_iter()
            .map(|&s| self.q_point(s, tol))
            .collect::<Result<Vec<_>>>()?;
        let qt = probes
            .par_iter()
            .map(|&s| self.q_tilde_point(s, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            LimitFunctionApprox::new(LimitKind::Q, q),
            LimitFunctionApprox::new(LimitKind::QTilde, qt),
        ))
    }

    /// Largest residual of `Q(f(a;s)) = c_a Q~(s)` and `Q~(f(b;s)) = c_b Q(s)`
    /// over the probes. `Q` and `Q~` are evaluated directly at the mapped
    /// points. Returns the residual per probe as well.
    pub fn functional_residual(&self, probes: &[f64], tol: f64) -> Result<(f64, Vec<f64>)> {
        let QNormalizer { c_a, c_b } = self.normalizer;
        let per_probe = probes
            .par_iter()
            .map(|&s| -> Result<f64> {
                let q = self.q_point(s, tol)?.value;
                let qt = self.q_tilde_point(s, tol)?.value;
                let q_at_fa = self.q_point(self.a_dist.value(s), tol)?.value;
                let qt_at_fb = self.q_tilde_point(self.b_dist.value(s), tol)?.value;
                Ok((q_at_fa - c_a * qt).abs().max((qt_at_fb - c_b * q).abs()))
            })
            .collect::<Result<Vec<_>>>()?;
        let max = per_probe.iter().copied().fold(0.0, f64::max);
        Ok((max, per_probe))
    }
}

/// Coefficients `q_j`, `q~_j` of `Q`, `Q~` when neither mechanism can die out.
#[derive(Debug, Clone, PartialEq)]
pub struct QCoefficients {
    pub q: TruncatedSeries,
    pub q_tilde: TruncatedSeries,
    /// Double steps until every coefficient settled.
    pub horizon: usize,
    pub last_gap: f64,
}

/// `H(x) / H(0)` applied to a series `x` with zero constant term, cut at `cap`.
fn factor_series(h: &[f64], x: &[f64], cap: usize) -> Result<Vec<f64>> {
    let h0 = h[0];
    let mut acc = vec![h[h.len() - 1] / h0];
    for &c in h[..h.len() - 1].iter().rev() {
        let (mut next, _) = truncated_product(&acc, x, cap)?;
        next[0] += c / h0;
        acc = next;
    }
    Ok(acc)
}

fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    let n = old.len().max(new.len());
    (0..n)
        .map(|j| {
            let a = old.get(j).copied().unwrap_or(0.0);
            let b = new.get(j).copied().unwrap_or(0.0);
            (b - a).abs() / b.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// `q_1..q_J` and `q~_1..q~_J`, as limits of `f_{2n} / (a_1 b_1)^n` and
/// `f_{2n+1} / ((a_1 b_1)^n a_1)` in coefficient space.
///
/// With `T_n = f_{2n} / c^n` and `x = c^n T_n`,
/// `T_{n+1} = T_n (H_b(x) / b_1) (H_a(b(x)) / a_1)`, where every factor has
/// nonnegative coefficients; so the coefficients rise monotonically to their
/// limits.
pub fn q_coefficients(ctx: &IterationContext, j_max: usize, tol: f64) -> Result<QCoefficients> {
    let (a, b) = (ctx.a(), ctx.b());
    let mut problems = Vec::new();
    for (name, d) in [("a", a), ("b", b)] {
        if !d.is_exact() {
            problems.push(format!("{name} must have finite support"));
        }
        if d.prob(0) != 0.0 {
            problems.push(format!("{name}_0 must be 0, got {}", d.prob(0)));
        }
        let p1 = d.prob(1);
        if !(p1 > 0.0 && p1 <= 1.0) {
            problems.push(format!("{name}_1 must lie in (0, 1], got {p1}"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::precondition(problems.join("; ")));
    }
    let ha = &a.probs()[1..];
    let hb = &b.probs()[1..];
    let c = a.prob(1) * b.prob(1);
    let cap = j_max.max(1);

    let mut t = vec![0.0, 1.0];
    let mut u = vec![0.0, 1.0];
    let mut q_tilde = u.clone();
    let mut scale = 1.0;
    let mut gap = f64::INFINITY;
    for n in 1..=HORIZON_CAP.max(ctx.max_iter.min(10 * HORIZON_CAP)) {
        // even track
        let x: Vec<f64> = t.iter().map(|v| v * scale).collect();
        let fb = factor_series(hb, &x, cap)?;
        let (bx, _) = truncated_product(&x, &fb, cap)?;
        let bx: Vec<f64> = bx.iter().map(|v| v * hb[0]).collect();
        let fa = factor_series(ha, &bx, cap)?;
        let (tmp, _) = truncated_product(&t, &fb, cap)?;
        let (t_next, _) = truncated_product(&tmp, &fa, cap)?;

        // odd track
        let y: Vec<f64> = u.iter().map(|v| v * scale).collect();
        let fa_y = factor_series(ha, &y, cap)?;
        let (ay, _) = truncated_product(&y, &fa_y, cap)?;
        let ay: Vec<f64> = ay.iter().map(|v| v * ha[0]).collect();
        let fb_ay = factor_series(hb, &ay, cap)?;
        let (tmp, _) = truncated_product(&u, &fa_y, cap)?;
        let (u_next, _) = truncated_product(&tmp, &fb_ay, cap)?;
        scale *= c;
        let y_next: Vec<f64> = u_next.iter().map(|v| v * scale).collect();
        let (qt_next, _) = truncated_product(&u_next, &factor_series(ha, &y_next, cap)?, cap)?;

        gap = max_relative_change(&t, &t_next).max(max_relative_change(&q_tilde, &qt_next));
        t = t_next;
        u = u_next;
        q_tilde = qt_next;
        if gap <= tol {
            return Ok(QCoefficients {
                q: TruncatedSeries::approximate(t, cap)?,
                q_tilde: TruncatedSeries::approximate(q_tilde, cap)?,
                horizon: n,
                last_gap: gap,
            });
        }
    }
    Err(Error::non_convergence("q coefficients", HORIZON_CAP, gap))
}

/// The `R`, `R~` side: inverse iterates above 1.
#[derive(Debug, Clone)]
pub struct RSystem {
    a: ShiftedMap,
    b: ShiftedMap,
    a_dist: OffspringDistribution,
    b_dist: OffspringDistribution,
}

impl RSystem {
    pub fn new(ctx: &IterationContext) -> Result<Self> {
        ctx.a().require_exact("inverse iterates")?;
        ctx.b().require_exact("inverse iterates")?;
        Ok(Self {
            a: ShiftedMap::at(ctx.a(), 1.0),
            b: ShiftedMap::at(ctx.b(), 1.0),
            a_dist: ctx.a().clone(),
            b_dist: ctx.b().clone(),
        })
    }

    fn maps(&self, order: Order) -> (&ShiftedMap, &ShiftedMap) {
        match order {
            Order::Ab => (&self.a, &self.b),
            Order::Ba => (&self.b, &self.a),
        }
    }

    fn check(s: f64) -> Result<()> {
        if s.is_finite() && s >= 1.0 {
            Ok(())
        } else {
            Err(Error::domain(format!("R arguments must be finite and >= 1, got {s}")))
        }
    }

    /// `u_n = g_n(order; s) - 1` and `R_n(s) = Gamma_n u_n` (with `Gamma~`
    /// for the `ba` ordering).
    pub fn inverse_step(&self, order: Order, n: usize, s: f64) -> Result<(f64, f64)> {
        Self::check(s)?;
        let (first, second) = self.maps(order);
        let mut u = s - 1.0;
        let mut r = u;
        for k in 0..n {
            let map = if k % 2 == 0 { first } else { second };
            let next = map.inverse(u)?;
            r *= map.slope() / map.factor(next);
            u = next;
        }
        Ok((u, r))
    }

    pub fn r_n_eval(&self, order: Order, n: usize, s: f64) -> Result<f64> {
        Ok(self.inverse_step(order, n, s)?.1)
    }

    /// `R(s)` (or `R~(s)`), checking that `R_n` never increases.
    pub fn r_point(&self, order: Order, s: f64, tol: f64) -> Result<ProbeValue> {
        Self::check(s)?;
        let (first, second) = self.maps(order);
        let mut u = s - 1.0;
        let mut r = u;
        for k in 0..2 * HORIZON_CAP {
            let map = if k % 2 == 0 { first } else { second };
            let next_u = map.inverse(u)?;
            let next = r * (map.slope() / map.factor(next_u));
            if next > r {
                return Err(Error::MonotonicityViolation(format!(
                    "R_{}({s}) = {next} exceeds R_{k}({s}) = {r}",
                    k + 1
                )));
            }
            let (done, gap) = converged(r, next, tol);
            r = next;
            u = next_u;
            if done {
                return Ok(ProbeValue {
                    s,
                    value: r,
                    horizon: k + 1,
                    last_gap: gap,
                });
            }
        }
        Err(Error::non_convergence(format!("R({s})"), 2 * HORIZON_CAP, (r * tol).abs()))
    }

    pub fn r_limit(&self, order: Order, probes: &[f64], tol: f64) -> Result<LimitFunctionApprox> {
        let values = probes
            .par_iter()
            .map(|&s| self.r_point(order, s, tol))
            .collect::<Result<Vec<_>>>()?;
        let kind = match order {
            Order::Ab => LimitKind::R,
            Order::Ba => LimitKind::RTilde,
        };
        Ok(LimitFunctionApprox::new(kind, values))
    }

    /// One-sided Richardson estimate of `R'(1)` from `R(1+h)` and `R(1+2h)`.
    pub fn derivative_at_one(&self, order: Order, tol: f64) -> Result<f64> {
        let h = 1e-4;
        let r1 = self.r_point(order, 1.0 + h, tol)?.value;
        let r2 = self.r_point(order, 1.0 + 2.0 * h, tol)?.value;
        Ok((4.0 * r1 - r2) / (2.0 * h))
    }

    /// Largest residual of `R(f(a;s)) = m_a R~(s)` and `R~(f(b;s)) = m_b R(s)`
    /// over `s` in the probes. Returns the residual per probe as well.
    pub fn functional_residual(&self, probes: &[f64], tol: f64) -> Result<(f64, Vec<f64>)> {
        let (m_a, m_b) = (self.a.slope(), self.b.slope());
        let per_probe = probes
            .par_iter()
            .map(|&s| -> Result<f64> {
                let r = self.r_point(Order::Ab, s, tol)?.value;
                let rt = self.r_point(Order::Ba, s, tol)?.value;
                let r_at_fa = self.r_point(Order::Ab, self.a_dist.value(s), tol)?.value;
                let rt_at_fb = self.r_point(Order::Ba, self.b_dist.value(s), tol)?.value;
                Ok((r_at_fa - m_a * rt).abs().max((rt_at_fb - m_b * r).abs()))
            })
            .collect::<Result<Vec<_>>>()?;
        let max = per_probe.iter().copied().fold(0.0, f64::max);
        Ok((max, per_probe))
    }

    /// `f_n(ab; 1 + v)` in shifted form: returns `f_n - 1`.
    fn forward_shifted(&self, n: usize, v: f64) -> f64 {
        let mut v = v;
        for k in (0..n).rev() {
            let map = if k % 2 == 0 { &self.a } else { &self.b };
            v = map.apply(v);
        }
        v
    }
}

/// `E[exp(theta W_n)] = f_n(ab; exp(theta / Gamma_n))`, evaluated around 1 so
/// that the tiny exponent survives.
pub fn mgf_wn(ctx: &IterationContext, n: usize, theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::domain(format!("theta must be finite, got {theta}")));
    }
    if theta > 0.0 && !ctx.is_exact() {
        return Err(Error::domain("moment generating function above 1 needs exact mechanisms"));
    }
    let gamma = NormalizerTable::new(ctx).gamma(n);
    let v0 = (theta / gamma).exp_m1();
    if !v0.is_finite() {
        return Err(Error::Overflow(format!("exp({theta} / Gamma_{n}) overflows")));
    }
    let sys = RSystem {
        a: ShiftedMap::at(ctx.a(), 1.0),
        b: ShiftedMap::at(ctx.b(), 1.0),
        a_dist: ctx.a().clone(),
        b_dist: ctx.b().clone(),
    };
    let v = sys.forward_shifted(n, v0);
    let out = 1.0 + v;
    if !out.is_finite() {
        return Err(Error::Overflow(format!("E[exp({theta} W_{n})] overflows")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theta1Bound {
    /// Certified lower bound for `inf_n Gamma_n log g_{n-1}(ba; s0)`.
    pub theta1: f64,
    /// Minimum over `1 <= n <= N`.
    pub finite_min: f64,
    pub argmin: usize,
    /// Lower bound for every term with `n > N`.
    pub tail_lower_bound: f64,
    /// `m_a R~(s0)`, the limit of the sequence.
    pub limit: f64,
    pub horizon: usize,
}

/// `theta_1 = inf_n Gamma_n log g_{n-1}(ba; s0)`.
///
/// Terms up to `N` are computed directly. For `n > N` each term equals
/// `m_a R~_{n-1}(s0) log(1+u)/u` with `u = g_{n-1}(ba; s0) - 1`; since `R~_n`
/// decreases to `R~(s0)` and `log(1+u)/u` decreases in `u`, every later term is
/// at least `m_a R~(s0) log(1+u_N)/u_N`. The returned `theta1` is the smaller of
/// the two, so it is a valid lower bound of the infimum.
pub fn theta1_bound(ctx: &IterationContext, s0: f64, n_max: usize, tol: f64) -> Result<Theta1Bound> {
    if !(s0 > 1.0 && s0.is_finite()) {
        return Err(Error::domain(format!("s0 must be > 1, got {s0}")));
    }
    if n_max == 0 {
        return Err(Error::domain("N must be >= 1"));
    }
    let sys = RSystem::new(ctx)?;
    let m_a = sys.a.slope();
    let mut finite_min = f64::INFINITY;
    let mut argmin = 1;
    let (first, second) = sys.maps(Order::Ba);
    let mut u = s0 - 1.0;
    let mut r_tilde = u;
    for n in 1..=n_max {
        // term_n = Gamma_n * ln(1 + u_{n-1}) = m_a * R~_{n-1} * ln(1+u)/u
        let term = m_a * r_tilde * (u.ln_1p() / u);
        if term < finite_min {
            finite_min = term;
            argmin = n;
        }
        let map = if (n - 1) % 2 == 0 { first } else { second };
        let next = map.inverse(u)?;
        r_tilde *= map.slope() / map.factor(next);
        u = next;
    }
    let limit_point = sys.r_point(Order::Ba, s0, tol)?;
    let limit = m_a * limit_point.value;
    let tail_lower_bound = limit * (u.ln_1p() / u) * (1.0 - 1e-9);
    let theta1 = finite_min.min(tail_lower_bound);
    if !(theta1 > 0.0) {
        return Err(Error::non_convergence("theta_1 bound", n_max, theta1));
    }
    Ok(Theta1Bound {
        theta1,
        finite_min,
        argmin,
        tail_lower_bound,
        limit,
        horizon: limit_point.horizon,
    })
}
