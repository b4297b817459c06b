//! Offspring distributions, their generating functions, and fixed points.
//!
//! A mechanism is a probability mass function on `{0, 1, 2, ...}` with finite
//! retained support `p_0..p_K`. Distributions with unbounded support must be cut
//! by the caller; the discarded probability is kept as `tail_mass` so that
//! operations which cannot be certified (evaluation above 1, derivatives of the
//! tail) refuse instead of silently returning a wrong number.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(p) + tail_mass == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Equality band around `m_a * m_b == 1` used for criticality.
pub const CRITICALITY_TOL: f64 = 1e-12;

/// Largest support index accepted from documents.
pub const MAX_SUPPORT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub second_factorial_moment: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
    moments: MomentSummary,
}

impl OffspringDistribution {
    /// An exact distribution with finite support.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::truncated(probs, 0.0)
    }

    /// A distribution whose mass beyond the last index was cut off; `tail_mass`
    /// records how much.
    pub fn truncated(mut probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        let mut errors = Vec::new();
        validate_probs("probs", &probs, tail_mass, &mut errors);
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        while probs.len() > 1 && probs[probs.len() - 1] == 0.0 {
            probs.pop();
        }
        let moments = compute_moments(&probs);
        Ok(Self {
            probs,
            tail_mass,
            moments,
        })
    }

    /// Convenience constructor from `(index, probability)` pairs.
    pub fn from_sparse(entries: &[(usize, f64)]) -> Result<Self> {
        let len = entries.iter().map(|&(j, _)| j + 1).max().unwrap_or(1);
        if len > MAX_SUPPORT {
            return Err(Error::Validation(vec![format!(
                "probs: index {} exceeds the supported maximum {MAX_SUPPORT}",
                len - 1
            )]));
        }
        let mut probs = vec![0.0; len];
        for &(j, p) in entries {
            probs[j] += p;
        }
        Self::new(probs)
    }

    /// The point mass at `k`.
    pub fn point_mass(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self::new(probs).expect("point mass at k >= 1 is valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `p_j`, zero beyond the retained support.
    pub fn prob(&self, j: usize) -> f64 {
        self.probs.get(j).copied().unwrap_or(0.0)
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn is_exact(&self) -> bool {
        self.tail_mass == 0.0
    }

    /// Largest index with positive probability.
    pub fn max_support(&self) -> usize {
        self.probs.len() - 1
    }

    /// Smallest index with positive probability.
    pub fn min_support(&self) -> usize {
        self.probs.iter().position(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn moments(&self) -> MomentSummary {
        self.moments
    }

    pub fn mean(&self) -> f64 {
        self.moments.mean
    }

    pub fn variance(&self) -> f64 {
        self.moments.variance
    }

    /// `sum_j p_j s^j` without domain checks. Meaningful for `s` in `[0, 1]`,
    /// or any `s >= 0` when the distribution is exact.
    pub fn value(&self, s: f64) -> f64 {
        horner(&self.probs, s)
    }

    /// Checked generating-function evaluation.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::domain(format!("pgf argument must be finite and >= 0, got {s}")));
        }
        if s > 1.0 && !self.is_exact() {
            return Err(Error::domain(format!(
                "cannot evaluate at s = {s} > 1 with truncated tail mass {}",
                self.tail_mass
            )));
        }
        let v = self.value(s);
        if !v.is_finite() {
            return Err(Error::Overflow(format!("f({s}) is not finite")));
        }
        Ok(v)
    }

    /// First or second derivative of the generating function.
    pub fn pgf_derivative(&self, s: f64, order: u32) -> Result<f64> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::domain(format!("derivative argument must be finite and >= 0, got {s}")));
        }
        if s > 1.0 && !self.is_exact() {
            return Err(Error::domain("derivative above 1 needs an exact distribution"));
        }
        match order {
            1 => Ok(self.derivative(s)),
            2 => Ok(self.second_derivative(s)),
            _ => Err(Error::domain(format!("derivative order must be 1 or 2, got {order}"))),
        }
    }

    pub(crate) fn derivative(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for j in (1..self.probs.len()).rev() {
            acc = acc * s + j as f64 * self.probs[j];
        }
        acc
    }

    pub(crate) fn second_derivative(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for j in (2..self.probs.len()).rev() {
            acc = acc * s + (j * (j - 1)) as f64 * self.probs[j];
        }
        acc
    }

    /// Taylor coefficients of the generating function around `x0`:
    /// `f(x0 + v) = sum_i c_i v^i`.
    pub fn taylor_at(&self, x0: f64) -> Vec<f64> {
        // Repeated synthetic division by (x - x0).
        let mut work = self.probs.clone();
        let n = work.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            for j in (i..n - 1).rev() {
                let carry = work[j + 1] * x0;
                work[j] += carry;
            }
            out.push(work[i]);
        }
        out
    }

    pub(crate) fn require_exact(&self, what: &str) -> Result<()> {
        if self.is_exact() {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "{what} needs finite support, but tail mass is {}",
                self.tail_mass
            )))
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut doc = serde_json::json!({ "probs": self.probs });
        if self.tail_mass > 0.0 {
            doc["tail_mass"] = serde_json::json!(self.tail_mass);
        }
        doc
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(text)
            .map_err(|e| Error::Validation(vec![format!("distribution document: {e}")]))?;
        let mut errors = Vec::new();
        let dist = doc.build("", &mut errors);
        match dist {
            Some(d) if errors.is_empty() => Ok(d),
            _ => Err(Error::Validation(errors)),
        }
    }
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, p)| format!("p{j}={p}"))
            .collect();
        write!(f, "{{{}}}", terms.join(", "))
    }
}

fn validate_probs(field: &str, probs: &[f64], tail_mass: f64, errors: &mut Vec<String>) {
    if probs.is_empty() {
        errors.push(format!("{field}: empty probability vector"));
        return;
    }
    if probs.len() > MAX_SUPPORT {
        errors.push(format!("{field}: support length {} exceeds {MAX_SUPPORT}", probs.len()));
        return;
    }
    let mut ok = true;
    for (j, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            errors.push(format!("{field}[{j}]: probability must be finite and >= 0, got {p}"));
            ok = false;
        }
    }
    if !tail_mass.is_finite() || !(0.0..=1.0).contains(&tail_mass) {
        errors.push(format!("{field}: tail_mass must lie in [0, 1], got {tail_mass}"));
        ok = false;
    }
    if !ok {
        return;
    }
    let sum: f64 = probs.iter().sum();
    if ((sum + tail_mass) - 1.0).abs() > NORMALIZATION_TOL {
        errors.push(format!(
            "{field}: probabilities sum to {sum} (plus tail mass {tail_mass}), expected 1"
        ));
        return;
    }
    if probs[1..].iter().all(|&p| p == 0.0) && tail_mass == 0.0 {
        errors.push(format!(
            "{field}: all mass sits at 0 (degenerate mechanism is not supported)"
        ));
    }
}

fn compute_moments(probs: &[f64]) -> MomentSummary {
    let mut mean = 0.0;
    let mut fact2 = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        let j = j as f64;
        mean += j * p;
        fact2 += j * (j - 1.0) * p;
    }
    MomentSummary {
        mean,
        second_factorial_moment: fact2,
        variance: (fact2 + mean - mean * mean).max(0.0),
    }
}

pub(crate) fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// A convex increasing self-map of `[0, 1]` fixing 1, such as a generating
/// function or a composition of generating functions.
pub trait PgfMap {
    fn apply(&self, s: f64) -> f64;
    fn slope_at_one(&self) -> f64;
}

impl PgfMap for OffspringDistribution {
    fn apply(&self, s: f64) -> f64 {
        self.value(s)
    }

    fn slope_at_one(&self) -> f64 {
        self.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iter: 200,
        }
    }
}

/// Smallest root of `map(s) = s` on `[0, 1]`.
///
/// When the slope at 1 is at most 1 the only root is 1 and that value is
/// returned exactly, except for the identity map where every point is fixed
/// and 0 is returned. Otherwise the root in `[0, 1)` is bracketed and bisected
/// down to `tolerance`, then refined by one interpolation step that stays
/// inside the final bracket.
pub fn smallest_fixed_point<M: PgfMap + ?Sized>(map: &M, opts: FixedPointOptions) -> Result<f64> {
    if map.slope_at_one() <= 1.0 + CRITICALITY_TOL {
        // A convex map with f(0) = 0, f(1) = 1 and unit slope at 1 is the
        // identity, whose smallest root is 0.
        if map.apply(0.0) == 0.0 && map.slope_at_one() >= 1.0 - CRITICALITY_TOL {
            return Ok(0.0);
        }
        return Ok(1.0);
    }
    let gap = |s: f64| map.apply(s) - s;
    let g0 = gap(0.0);
    if g0 <= 0.0 {
        return Ok(0.0);
    }
    // Walk toward 1 until the gap turns negative.
    let (mut lo, mut g_lo) = (0.0, g0);
    let mut hi = f64::NAN;
    let mut g_hi = f64::NAN;
    for k in 1..=52 {
        let t = 1.0 - 0.5f64.powi(k);
        let g = gap(t);
        if g < 0.0 {
            hi = t;
            g_hi = g;
            break;
        }
        if g == 0.0 {
            return Ok(t);
        }
        lo = t;
        g_lo = g;
    }
    if hi.is_nan() {
        return Err(Error::non_convergence("fixed-point bracketing", 52, g_lo));
    }
    let mut iterations = 0;
    while hi - lo > opts.tolerance {
        if iterations >= opts.max_iter {
            return Err(Error::non_convergence("fixed-point bisection", iterations, hi - lo));
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = gap(mid);
        if g == 0.0 {
            return Ok(mid);
        } else if g > 0.0 {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
            g_hi = g;
        }
    }
    let interp = lo + g_lo * (hi - lo) / (g_lo - g_hi);
    Ok(interp.clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criticality::Subcritical => "subcritical",
            Criticality::Critical => "critical",
            Criticality::Supercritical => "supercritical",
        };
        f.write_str(s)
    }
}

impl Criticality {
    pub fn from_mean_product(m: f64) -> Self {
        if (m - 1.0).abs() <= CRITICALITY_TOL {
            Criticality::Critical
        } else if m > 1.0 {
            Criticality::Supercritical
        } else {
            Criticality::Subcritical
        }
    }
}

/// The cycle of mechanisms applied generation by generation: generation `n`
/// reproduces with `mechanisms[n mod len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSchedule {
    mechanisms: Vec<OffspringDistribution>,
}

impl MechanismSchedule {
    pub fn new(mechanisms: Vec<OffspringDistribution>) -> Result<Self> {
        if mechanisms.is_empty() {
            return Err(Error::Validation(vec!["mechanisms: schedule is empty".into()]));
        }
        Ok(Self { mechanisms })
    }

    pub fn pair(a: OffspringDistribution, b: OffspringDistribution) -> Self {
        Self {
            mechanisms: vec![a, b],
        }
    }

    pub fn mechanisms(&self) -> &[OffspringDistribution] {
        &self.mechanisms
    }

    pub fn len(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mechanisms.is_empty()
    }

    /// Mechanism used by individuals of generation `n`.
    pub fn at(&self, n: usize) -> &OffspringDistribution {
        &self.mechanisms[n % self.mechanisms.len()]
    }

    /// The `(a, b)` pair; analytic operations only accept period-two schedules.
    pub fn as_pair(&self) -> Result<(&OffspringDistribution, &OffspringDistribution)> {
        match self.mechanisms.as_slice() {
            [a, b] => Ok((a, b)),
            other => Err(Error::precondition(format!(
                "analytic operations need exactly two mechanisms, schedule has {}",
                other.len()
            ))),
        }
    }

    pub fn swapped(&self) -> Result<Self> {
        let (a, b) = self.as_pair()?;
        Ok(Self::pair(b.clone(), a.clone()))
    }

    pub fn classify(&self) -> Result<Criticality> {
        let (a, b) = self.as_pair()?;
        Ok(Criticality::from_mean_product(a.mean() * b.mean()))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "mechanisms": self.mechanisms.iter().map(|m| m.to_json_value()).collect::<Vec<_>>()
        })
    }

    /// Parses `{"mechanisms": [ {"probs": ...}, ... ]}`. Every failing field is
    /// reported, not just the first.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ScheduleDoc = serde_json::from_str(text)
            .map_err(|e| Error::Validation(vec![format!("schedule document: {e}")]))?;
        let mut errors = Vec::new();
        if doc.mechanisms.is_empty() {
            errors.push("mechanisms: schedule is empty".to_string());
        }
        let mechanisms: Vec<_> = doc
            .mechanisms
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.build(&format!("mechanisms[{i}]."), &mut errors))
            .collect();
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Self::new(mechanisms)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProbsDoc {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionDoc {
    probs: ProbsDoc,
    #[serde(default)]
    tail_mass: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    mechanisms: Vec<DistributionDoc>,
}

impl DistributionDoc {
    fn build(&self, prefix: &str, errors: &mut Vec<String>) -> Option<OffspringDistribution> {
        let field = format!("{prefix}probs");
        let dense = match &self.probs {
            ProbsDoc::Dense(v) => v.clone(),
            ProbsDoc::Sparse(map) => {
                let mut entries = Vec::with_capacity(map.len());
                let mut bad = false;
                for (key, &p) in map {
                    match key.trim().parse::<usize>() {
                        Ok(j) if j < MAX_SUPPORT => entries.push((j, p)),
                        Ok(j) => {
                            errors.push(format!("{field}[\"{key}\"]: index {j} exceeds {MAX_SUPPORT}"));
                            bad = true;
                        }
                        Err(_) => {
                            errors.push(format!("{field}[\"{key}\"]: key is not a nonnegative integer"));
                            bad = true;
                        }
                    }
                }
                if bad {
                    return None;
                }
                let len = entries.iter().map(|&(j, _)| j + 1).max().unwrap_or(0);
                let mut v = vec![0.0; len];
                for (j, p) in entries {
                    v[j] = p;
                }
                v
            }
        };
        let before = errors.len();
        validate_probs(&field, &dense, self.tail_mass, errors);
        if errors.len() > before {
            return None;
        }
        OffspringDistribution::truncated(dense, self.tail_mass).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(entries: &[(usize, f64)]) -> OffspringDistribution {
        OffspringDistribution::from_sparse(entries).unwrap()
    }

    #[test]
    fn pgf_examples() {
        assert_eq!(d(&[(1, 1.0)]).pgf(0.5).unwrap(), 0.5);
        let q = d(&[(0, 0.25), (2, 0.75)]);
        assert_eq!(q.pgf(1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(q.pgf(1.0 / 3.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pgf_refuses_uncertifiable_values() {
        let t = OffspringDistribution::truncated(vec![0.5, 0.4], 0.1).unwrap();
        assert!(matches!(t.pgf(1.2), Err(Error::Domain(_))));
        assert!(t.pgf(0.9).is_ok());
        assert!(matches!(d(&[(1, 1.0)]).pgf(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        let q = d(&[(0, 0.25), (2, 0.75)]);
        assert_eq!(q.pgf_derivative(1.0, 1).unwrap(), 1.5);
        assert_eq!(q.pgf_derivative(0.0, 1).unwrap(), 0.0);
        assert_eq!(d(&[(1, 1.0)]).pgf_derivative(0.3, 2).unwrap(), 0.0);
        assert!(q.pgf_derivative(0.5, 3).is_err());
    }

    #[test]
    fn moment_examples() {
        let m = d(&[(1, 0.5), (3, 0.5)]).moments();
        assert_eq!((m.mean, m.variance), (2.0, 1.0));
        let m = d(&[(2, 1.0)]).moments();
        assert_eq!((m.mean, m.variance), (2.0, 0.0));
        let m = d(&[(0, 0.25), (2, 0.75)]).moments();
        assert_abs_diff_eq!(m.mean, 1.5);
        assert_abs_diff_eq!(m.variance, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_examples() {
        let opts = FixedPointOptions::default();
        let rho = smallest_fixed_point(&d(&[(0, 0.25), (2, 0.75)]), opts).unwrap();
        assert_abs_diff_eq!(rho, 1.0 / 3.0, epsilon = 1e-14);
        assert_eq!(smallest_fixed_point(&d(&[(1, 1.0)]), opts).unwrap(), 0.0);
        assert_eq!(smallest_fixed_point(&d(&[(0, 0.5), (1, 0.5)]), opts).unwrap(), 1.0);
        assert_eq!(smallest_fixed_point(&d(&[(0, 0.5), (2, 0.5)]), opts).unwrap(), 1.0);
        assert_eq!(smallest_fixed_point(&d(&[(1, 0.5), (2, 0.5)]), opts).unwrap(), 0.0);
    }

    #[test]
    fn classify_examples() {
        let pair = |a, b| MechanismSchedule::pair(a, b).classify().unwrap();
        assert_eq!(pair(d(&[(2, 1.0)]), d(&[(3, 1.0)])), Criticality::Supercritical);
        assert_eq!(pair(d(&[(2, 1.0)]), d(&[(0, 0.5), (1, 0.5)])), Criticality::Critical);
        let sub = d(&[(0, 0.6), (1, 0.4)]);
        assert_eq!(pair(sub.clone(), sub), Criticality::Subcritical);
    }

    #[test]
    fn taylor_shift_matches_direct_evaluation() {
        let f = d(&[(0, 0.1), (1, 0.2), (3, 0.3), (4, 0.4)]);
        let c = f.taylor_at(0.7);
        for v in [-0.5, -0.1, 0.0, 0.2, 0.9] {
            assert_abs_diff_eq!(horner(&c, v), f.value(0.7 + v), epsilon = 1e-14);
        }
    }

    #[test]
    fn validation_names_offending_entries() {
        let err = OffspringDistribution::new(vec![0.5, -0.1, 0.6]).unwrap_err();
        assert!(err.to_string().contains("probs[1]"), "{err}");
        let err = OffspringDistribution::new(vec![0.5, 0.4]).unwrap_err();
        assert!(err.to_string().contains("sum to 0.9"), "{err}");
        assert!(OffspringDistribution::new(vec![1.0]).is_err());
    }

    #[test]
    fn json_dense_and_sparse_forms() {
        let dense = OffspringDistribution::from_json_str(r#"{"probs": [0, 0.5, 0.5]}"#).unwrap();
        let sparse = OffspringDistribution::from_json_str(r#"{"probs": {"1": 0.5, "2": 0.5}}"#).unwrap();
        assert_eq!(dense, sparse);
        let sched = MechanismSchedule::from_json_str(
            r#"{"mechanisms":[{"probs":[0,1]},{"probs":[0,1]}]}"#,
        )
        .unwrap();
        assert_eq!(sched.len(), 2);
        assert_eq!(sched.at(3).mean(), 1.0);
    }

    #[test]
    fn json_lists_every_failure() {
        let err = MechanismSchedule::from_json_str(
            r#"{"mechanisms":[{"probs":[0.5,0.4]},{"probs":{"x":1.0}},{"probs":[0.2,-0.2,1.0]}]}"#,
        )
        .unwrap_err();
        let Error::Validation(list) = err else { panic!() };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list[0].contains("mechanisms[0]") && list[0].contains("0.9"));
        assert!(list[1].contains("mechanisms[1]"));
        assert!(list[2].contains("mechanisms[2].probs[1]"));
    }
}
