//! Iterated generating functions of the alternating system, extinction
//! probabilities, exact laws of `Z_n`, and inverse generating functions.
//!
//! With `Z_0 = 1`, `E[s^{Z_n}] = f_n(s)` where
//! `f_n = f(mech_0; f(mech_1; ... f(mech_{n-1}; s)))` and `mech_k` is `a` for
//! even `k`, `b` for odd `k`. So `f_{2k} = alpha^k` with `alpha = a o b`, and
//! `f_{2k+1} = f_{2k} o a`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::{
    smallest_fixed_point, Criticality, FixedPointOptions, MechanismSchedule, OffspringDistribution, PgfMap,
};
use crate::series::{compose_outer, TruncatedSeries};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Which ordering of the pair an inverse iterate starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Ab,
    Ba,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationContext {
    schedule: MechanismSchedule,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl IterationContext {
    pub fn new(schedule: MechanismSchedule, tolerance: f64, max_iter: usize) -> Result<Self> {
        schedule.as_pair()?;
        let mut errors = Vec::new();
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            errors.push(format!("tolerance must be > 0, got {tolerance}"));
        }
        if max_iter == 0 {
            errors.push("max_iter must be >= 1".to_string());
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(Self {
            schedule,
            tolerance,
            max_iter,
        })
    }

    /// Context with default tolerance and iteration cap.
    pub fn pair(a: OffspringDistribution, b: OffspringDistribution) -> Self {
        Self::new(MechanismSchedule::pair(a, b), DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).expect("defaults are valid")
    }

    pub fn schedule(&self) -> &MechanismSchedule {
        &self.schedule
    }

    pub fn a(&self) -> &OffspringDistribution {
        &self.schedule.mechanisms()[0]
    }

    pub fn b(&self) -> &OffspringDistribution {
        &self.schedule.mechanisms()[1]
    }

    /// Mechanism active at generation `n`.
    pub fn mech(&self, n: usize) -> &OffspringDistribution {
        if n % 2 == 0 {
            self.a()
        } else {
            self.b()
        }
    }

    /// The same system with the roles of `a` and `b` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            schedule: MechanismSchedule::pair(self.b().clone(), self.a().clone()),
            tolerance: self.tolerance,
            max_iter: self.max_iter,
        }
    }

    pub fn mean_product(&self) -> f64 {
        self.a().mean() * self.b().mean()
    }

    pub fn regime(&self) -> Criticality {
        Criticality::from_mean_product(self.mean_product())
    }

    pub fn is_exact(&self) -> bool {
        self.a().is_exact() && self.b().is_exact()
    }

    pub(crate) fn fixed_point_options(&self) -> FixedPointOptions {
        FixedPointOptions {
            tolerance: self.tolerance,
            max_iter: self.max_iter.max(200),
        }
    }

    fn check_argument(&self, s: f64) -> Result<()> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::domain(format!("argument must be finite and >= 0, got {s}")));
        }
        if s > 1.0 && !self.is_exact() {
            return Err(Error::domain(format!(
                "cannot evaluate at s = {s} > 1 with truncated mechanisms"
            )));
        }
        Ok(())
    }

    /// `f_n(ab; s)`, the generating function of `Z_n`.
    pub fn f_n_eval(&self, n: usize, s: f64) -> Result<f64> {
        self.check_argument(s)?;
        let mut v = s;
        for k in (0..n).rev() {
            v = self.mech(k).value(v);
        }
        if !v.is_finite() {
            return Err(Error::Overflow(format!("f_{n}({s}) overflows")));
        }
        Ok(v)
    }

    /// `alpha_k(s) = f_{2k}(ab; s)`.
    pub fn alpha_eval(&self, k: usize, s: f64) -> Result<f64> {
        self.f_n_eval(2 * k, s)
    }

    /// `beta_k(s)`, the `k`-fold iterate of `b o a`.
    pub fn beta_eval(&self, k: usize, s: f64) -> Result<f64> {
        self.check_argument(s)?;
        let mut v = s;
        for _ in 0..k {
            v = self.b().value(self.a().value(v));
        }
        if !v.is_finite() {
            return Err(Error::Overflow(format!("beta_{k}({s}) overflows")));
        }
        Ok(v)
    }

    pub fn extinction(&self) -> Result<ExtinctionResult> {
        let opts = self.fixed_point_options();
        let (a, b) = (self.a(), self.b());
        let rho_a = smallest_fixed_point(a, opts)?;
        let rho_b = smallest_fixed_point(b, opts)?;
        let rho_ab = smallest_fixed_point(&Composed { outer: a, inner: b }, opts)?;
        let rho_ba = smallest_fixed_point(&Composed { outer: b, inner: a }, opts)?;
        let regime = self.regime();
        let (witness, horizon) = if regime == Criticality::Supercritical {
            self.extinction_witness()?
        } else {
            (1.0, 0)
        };
        Ok(ExtinctionResult {
            rho_a,
            rho_b,
            rho_ab,
            rho_ba,
            regime,
            witness,
            horizon,
        })
    }

    /// Iterates `alpha_k(0)` upward until both the step and its geometric
    /// extrapolation fall below a tenth of the tolerance.
    fn extinction_witness(&self) -> Result<(f64, usize)> {
        let target = self.tolerance / 10.0;
        let mut prev = 0.0;
        let mut prev_gap = f64::NAN;
        for k in 1..=self.max_iter {
            let next = self.a().value(self.b().value(prev));
            let gap = next - prev;
            if gap <= target {
                let ratio = if prev_gap > 0.0 { gap / prev_gap } else { 0.0 };
                let remainder = if ratio < 1.0 { gap * ratio / (1.0 - ratio) } else { f64::INFINITY };
                if gap <= 0.0 || remainder <= target {
                    return Ok((next, k));
                }
            }
            prev = next;
            prev_gap = gap;
        }
        Err(Error::non_convergence("extinction witness iteration", self.max_iter, prev_gap))
    }

    /// Exact law of `Z_n` given `Z_0 = 1` as a series cut at `degree_cap`.
    pub fn zn_distribution(&self, n: usize, degree_cap: usize) -> Result<TruncatedSeries> {
        let mut series = TruncatedSeries::identity(degree_cap)?;
        for k in (0..n).rev() {
            series = compose_outer(self.mech(k), &series)?;
        }
        Ok(series)
    }

    /// Laws of `Z_0, ..., Z_{n_max}`, built from two incremental tracks:
    /// `f_{2k+2} = a o b o f_{2k}` and `f_{2k+1} = a o beta_k`.
    pub fn zn_distributions(&self, n_max: usize, degree_cap: usize) -> Result<Vec<TruncatedSeries>> {
        let (a, b) = (self.a(), self.b());
        let id = TruncatedSeries::identity(degree_cap)?;
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(id.clone());
        let mut even = id.clone();
        let mut beta = id;
        let mut n = 0;
        while n < n_max {
            out.push(compose_outer(a, &beta)?);
            n += 1;
            if n == n_max {
                break;
            }
            even = compose_outer(a, &compose_outer(b, &even)?)?;
            out.push(even.clone());
            n += 1;
            if n < n_max {
                beta = compose_outer(b, &compose_outer(a, &beta)?)?;
            }
        }
        Ok(out)
    }

    /// `g_n(order; s)`: the inverse of `f_n` for the given ordering, computed
    /// as `g(mech_{n-1}; ... g(mech_0; s))`.
    pub fn g_n_eval(&self, order: Order, n: usize, s: f64) -> Result<f64> {
        let (first, second) = match order {
            Order::Ab => (self.a(), self.b()),
            Order::Ba => (self.b(), self.a()),
        };
        let mut v = s;
        for k in 0..n {
            let mech = if k % 2 == 0 { first } else { second };
            v = g_eval(mech, v)?;
        }
        Ok(v)
    }
}

/// `outer o inner` as a fixed-point map.
pub(crate) struct Composed<'a> {
    pub outer: &'a OffspringDistribution,
    pub inner: &'a OffspringDistribution,
}

impl PgfMap for Composed<'_> {
    fn apply(&self, s: f64) -> f64 {
        self.outer.value(self.inner.value(s))
    }

    fn slope_at_one(&self) -> f64 {
        self.outer.mean() * self.inner.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionResult {
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_ab: f64,
    pub rho_ba: f64,
    pub regime: Criticality,
    /// `alpha_k(0)` at the end of the witness iteration.
    pub witness: f64,
    /// Number of double steps the witness iteration needed.
    pub horizon: usize,
}

/// Inverse generating function: the unique `g >= 0` with `f(dist; g) = s`.
///
/// Every admissible mechanism is strictly increasing on `[0, inf)` from `p_0`,
/// so `g` is defined for `s >= p_0`. Newton steps from the right of the root
/// decrease monotonically by convexity; bisection takes over if a step leaves
/// the bracket.
pub fn g_eval(dist: &OffspringDistribution, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::domain(format!("inverse argument must be finite, got {s}")));
    }
    let p0 = dist.prob(0);
    if s < p0 {
        return Err(Error::domain(format!("inverse argument {s} lies below f(0) = {p0}")));
    }
    if s > 1.0 && !dist.is_exact() {
        return Err(Error::domain("inverse above 1 needs an exact distribution"));
    }
    if s == 1.0 {
        return Ok(1.0);
    }
    if s == p0 {
        return Ok(0.0);
    }
    let mut lo = if s < 1.0 { 0.0 } else { 1.0 };
    let mut hi = s.max(1.0);
    while dist.value(hi) < s {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Overflow(format!("no finite preimage for {s}")));
        }
    }
    if dist.value(lo) > s {
        return Err(Error::NonMonotone(format!(
            "f(lo = {lo}) exceeds the target {s}"
        )));
    }
    let mut x = hi;
    for _ in 0..300 {
        let fx = dist.value(x) - s;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dist.derivative(x);
        let mut next = if d > 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
