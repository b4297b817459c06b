//! Truncated power series with a certified bound on what was cut off.
//!
//! Coefficients are stored up to the last nonzero entry; `coefficient(j)` reads
//! zeros for every index up to the degree cap. Because coefficient `j` of a
//! product or composition only depends on coefficients `<= j` of the factors,
//! everything at or below the cap is computed exactly (up to rounding). The
//! tail bound accounts for the mass that lives beyond the cap.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mechanism::{horner, OffspringDistribution};

pub const DEFAULT_DEGREE_CAP: usize = 4096;
pub const MAX_DEGREE_CAP: usize = 1 << 20;

/// Multiply-adds allowed in a single truncated product.
const PRODUCT_WORK_BUDGET: f64 = 4e9;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    coeffs: Vec<f64>,
    degree_cap: usize,
    tail_bound: f64,
    exact: bool,
}

fn check_cap(degree_cap: usize) -> Result<()> {
    if degree_cap > MAX_DEGREE_CAP {
        Err(Error::DegreeOverflow(format!(
            "degree cap {degree_cap} exceeds the maximum {MAX_DEGREE_CAP}"
        )))
    } else {
        Ok(())
    }
}

fn trim(v: &mut Vec<f64>) {
    while v.len() > 1 && v[v.len() - 1] == 0.0 {
        v.pop();
    }
    if v.is_empty() {
        v.push(0.0);
    }
}

impl TruncatedSeries {
    /// An exact series; coefficients above the cap are rejected.
    pub fn new(coeffs: Vec<f64>, degree_cap: usize) -> Result<Self> {
        Self::with_tail(coeffs, degree_cap, 0.0)
    }

    /// A series known only up to `degree_cap`, with `tail_bound` covering the
    /// rest.
    pub fn with_tail(mut coeffs: Vec<f64>, degree_cap: usize, tail_bound: f64) -> Result<Self> {
        check_cap(degree_cap)?;
        trim(&mut coeffs);
        if coeffs.len() > degree_cap + 1 {
            return Err(Error::DegreeOverflow(format!(
                "series of degree {} does not fit under cap {degree_cap}",
                coeffs.len() - 1
            )));
        }
        if !(tail_bound >= 0.0) {
            return Err(Error::domain(format!("tail bound must be >= 0, got {tail_bound}")));
        }
        Ok(Self {
            coeffs,
            degree_cap,
            tail_bound,
            exact: tail_bound == 0.0,
        })
    }

    /// Coefficients of a limiting object with no certificate for the part
    /// beyond the cap: flagged inexact, tail bound left at 0.
    pub fn approximate(coeffs: Vec<f64>, degree_cap: usize) -> Result<Self> {
        let mut s = Self::with_tail(coeffs, degree_cap, 0.0)?;
        s.exact = false;
        Ok(s)
    }

    /// The identity map `s`.
    pub fn identity(degree_cap: usize) -> Result<Self> {
        check_cap(degree_cap)?;
        if degree_cap == 0 {
            return Ok(Self {
                coeffs: vec![0.0],
                degree_cap,
                tail_bound: 1.0,
                exact: false,
            });
        }
        Self::new(vec![0.0, 1.0], degree_cap)
    }

    /// The generating function of `dist`, cut at `degree_cap`.
    pub fn from_distribution(dist: &OffspringDistribution, degree_cap: usize) -> Result<Self> {
        check_cap(degree_cap)?;
        let p = dist.probs();
        let keep = p.len().min(degree_cap + 1);
        let dropped: f64 = p[keep..].iter().sum();
        let mut coeffs = p[..keep].to_vec();
        trim(&mut coeffs);
        let tail = dropped + dist.tail_mass();
        Ok(Self {
            coeffs,
            degree_cap,
            tail_bound: tail,
            exact: tail == 0.0,
        })
    }

    /// Stored coefficients (trailing zeros below the cap are omitted).
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Highest index with a stored coefficient.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficient(&self, j: usize) -> Result<f64> {
        if j > self.degree_cap {
            return Err(Error::IndexOutOfRange {
                index: j,
                cap: self.degree_cap,
            });
        }
        Ok(self.coeffs.get(j).copied().unwrap_or(0.0))
    }

    /// Enclosure `[lo, hi]` of the represented function at `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let lo = horner(&self.coeffs, s);
        if self.tail_bound == 0.0 {
            return (lo, lo);
        }
        let cap = i32::try_from(self.degree_cap).unwrap_or(i32::MAX);
        (lo, lo + self.tail_bound * s.powi(cap))
    }

    /// Sum of the stored coefficients.
    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    /// `sum_j j c_j` and `sum_j j^2 c_j`.
    pub fn first_two_moments(&self) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate() {
            let j = j as f64;
            m1 += j * c;
            m2 += j * j * c;
        }
        (m1, m2)
    }

    /// Mean and variance of the represented distribution (exact series).
    pub fn mean_and_variance(&self) -> (f64, f64) {
        let (m1, m2) = self.first_two_moments();
        (m1, m2 - m1 * m1)
    }

    pub fn differentiate(&self) -> Result<Self> {
        if !self.exact {
            return Err(Error::InexactInput(self.tail_bound));
        }
        let mut coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &c)| j as f64 * c)
            .collect();
        trim(&mut coeffs);
        Ok(Self {
            coeffs,
            degree_cap: self.degree_cap.saturating_sub(1),
            tail_bound: 0.0,
            exact: true,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut coeffs: Vec<f64> = self.coeffs.iter().map(|c| c * factor).collect();
        trim(&mut coeffs);
        Self {
            coeffs,
            degree_cap: self.degree_cap,
            tail_bound: self.tail_bound * factor.abs(),
            exact: self.exact,
        }
    }

    /// Product truncated at the smaller of the two caps. The tail bound is
    /// only meaningful for nonnegative series.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        let cap = self.degree_cap.min(other.degree_cap);
        let (coeffs, truncated) = truncated_product(&self.coeffs, &other.coeffs, cap)?;
        let (sa, sb) = (self.sum(), other.sum());
        let full = (sa + self.tail_bound) * (sb + other.tail_bound);
        let exact = self.exact && other.exact && !truncated;
        let tail = if exact {
            0.0
        } else {
            (full - coeffs.iter().sum::<f64>()).max(0.0)
        };
        Ok(Self {
            coeffs,
            degree_cap: cap,
            tail_bound: tail,
            exact,
        })
    }

    /// Same coefficients under a smaller cap; dropped mass moves to the tail.
    pub fn truncate(&self, degree_cap: usize) -> Self {
        if degree_cap >= self.degree() {
            let mut out = self.clone();
            out.degree_cap = degree_cap.min(self.degree_cap);
            return out;
        }
        let mut coeffs = self.coeffs[..=degree_cap].to_vec();
        let dropped: f64 = self.coeffs[degree_cap + 1..].iter().map(|c| c.abs()).sum();
        trim(&mut coeffs);
        Self {
            coeffs,
            degree_cap,
            tail_bound: self.tail_bound + dropped,
            exact: false,
        }
    }

    /// Writes `index,coefficient` rows under a header comment carrying the
    /// exactness flag and tail bound.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# exact={} tail_bound={} degree_cap={}",
            self.exact, self.tail_bound, self.degree_cap
        );
        out.push_str("index,coefficient\n");
        for (j, c) in self.coeffs.iter().enumerate() {
            let _ = writeln!(out, "{j},{c}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Validation(vec![msg]);
        let mut exact = None;
        let mut tail_bound = None;
        let mut degree_cap = None;
        let mut coeffs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("exact", v)) => exact = v.parse::<bool>().ok(),
                        Some(("tail_bound", v)) => tail_bound = v.parse::<f64>().ok(),
                        Some(("degree_cap", v)) => degree_cap = v.parse::<usize>().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line.starts_with("index") {
                continue;
            }
            let (j, c) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("line {}: expected index,coefficient", lineno + 1)))?;
            let j: usize = j
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad index {j:?}", lineno + 1)))?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad coefficient {c:?}", lineno + 1)))?;
            if j >= coeffs.len() {
                coeffs.resize(j + 1, 0.0);
            }
            coeffs[j] = c;
        }
        let tail_bound = tail_bound.ok_or_else(|| bad("missing tail_bound header".into()))?;
        let degree_cap = degree_cap.ok_or_else(|| bad("missing degree_cap header".into()))?;
        let mut s = Self::with_tail(coeffs, degree_cap, tail_bound)?;
        s.exact = exact.unwrap_or(tail_bound == 0.0);
        Ok(s)
    }
}

/// Largest `k * K` accepted by [`convolution_power`].
pub const CONVOLUTION_BUDGET: usize = 1_000_000;

/// Law of the sum of `k` independent draws from `dist`, by repeated dense
/// convolution.
pub fn convolution_power(dist: &OffspringDistribution, k: usize) -> Result<Vec<f64>> {
    let kk = dist.max_support();
    if k.saturating_mul(kk) > CONVOLUTION_BUDGET {
        return Err(Error::DegreeOverflow(format!(
            "{k}-fold convolution of support {kk} exceeds the budget {CONVOLUTION_BUDGET}"
        )));
    }
    let mut acc = vec![1.0];
    for _ in 0..k {
        acc = convolve(&acc, dist.probs());
    }
    Ok(acc)
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Dense product of two coefficient vectors, keeping degrees `<= cap`.
/// The flag reports whether any nonzero term was discarded.
pub(crate) fn truncated_product(a: &[f64], b: &[f64], cap: usize) -> Result<(Vec<f64>, bool)> {
    let full = a.len() + b.len() - 1;
    let len = full.min(cap + 1);
    let work = a.len().min(len) as f64 * b.len().min(len) as f64;
    if work > PRODUCT_WORK_BUDGET {
        return Err(Error::DegreeOverflow(format!(
            "product of degrees {} and {} exceeds the work budget",
            a.len() - 1,
            b.len() - 1
        )));
    }
    let mut out = vec![0.0; len];
    for (i, &x) in a.iter().enumerate().take(len) {
        if x == 0.0 {
            continue;
        }
        let lim = (len - i).min(b.len());
        for (o, &y) in out[i..i + lim].iter_mut().zip(&b[..lim]) {
            *o += x * y;
        }
    }
    let truncated = full > len && {
        let a_top = a.iter().rposition(|&x| x != 0.0).unwrap_or(0);
        let b_top = b.iter().rposition(|&x| x != 0.0).unwrap_or(0);
        a_top + b_top > cap
    };
    trim(&mut out);
    Ok((out, truncated))
}

/// Coefficients of `sum_j outer.p_j * inner(s)^j`, cut at the inner cap.
///
/// Coefficients at or below the cap are exact. The tail bound is the
/// difference between an upper bound on the composed total mass and the mass
/// that was kept.
pub fn compose_outer(outer: &OffspringDistribution, inner: &TruncatedSeries) -> Result<TruncatedSeries> {
    let cap = inner.degree_cap;
    let p = outer.probs();
    let mut truncated = false;
    let mut acc = vec![p[p.len() - 1]];
    for j in (0..p.len() - 1).rev() {
        let (mut next, cut) = truncated_product(&acc, &inner.coeffs, cap)?;
        truncated |= cut;
        next[0] += p[j];
        acc = next;
    }
    trim(&mut acc);
    let exact = inner.exact && outer.is_exact() && !truncated;
    let tail_bound = if exact {
        0.0
    } else {
        let upper_inner = inner.sum() + inner.tail_bound;
        let upper = outer.value(upper_inner) + outer.tail_mass();
        (upper - acc.iter().sum::<f64>()).max(0.0)
    };
    Ok(TruncatedSeries {
        coeffs: acc,
        degree_cap: cap,
        tail_bound,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(entries: &[(usize, f64)]) -> OffspringDistribution {
        OffspringDistribution::from_sparse(entries).unwrap()
    }

    #[test]
    fn compose_examples() {
        let id = TruncatedSeries::identity(16).unwrap();
        let inner = TruncatedSeries::new(vec![0.0, 0.5, 0.5], 16).unwrap();
        assert_eq!(compose_outer(&dist(&[(1, 1.0)]), &inner).unwrap(), inner);
        let f = dist(&[(1, 0.5), (2, 0.5)]);
        assert_eq!(compose_outer(&f, &id).unwrap().coeffs(), &[0.0, 0.5, 0.5]);
        let ff = compose_outer(&f, &inner).unwrap();
        assert_eq!(ff.coeffs(), &[0.0, 0.25, 0.375, 0.25, 0.125]);
        assert!(ff.is_exact());
    }

    #[test]
    fn truncated_composition_records_lost_mass() {
        let f = dist(&[(1, 0.5), (2, 0.5)]);
        let inner = TruncatedSeries::new(vec![0.0, 0.5, 0.5], 3).unwrap();
        let ff = compose_outer(&f, &inner).unwrap();
        assert!(!ff.is_exact());
        assert_abs_diff_eq!(ff.tail_bound(), 0.125, epsilon = 1e-15);
        assert_eq!(ff.coefficient(3).unwrap(), 0.25);
        assert!(matches!(ff.coefficient(4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn positive_constant_term_stays_exact_below_cap() {
        let f = dist(&[(0, 0.25), (2, 0.75)]);
        let id = TruncatedSeries::identity(64).unwrap();
        let f1 = compose_outer(&f, &id).unwrap();
        let f2 = compose_outer(&f, &f1).unwrap();
        assert!(f2.is_exact());
        assert_abs_diff_eq!(f2.eval(1.0).0, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f2.eval(0.3).0, f.value(f.value(0.3)), epsilon = 1e-15);
    }

    #[test]
    fn eval_examples() {
        let s = TruncatedSeries::new(vec![0.0, 1.0], 8).unwrap();
        assert_eq!(s.eval(0.7), (0.7, 0.7));
        let pure_tail = TruncatedSeries::with_tail(vec![0.0; 3], 2, 0.1).unwrap();
        assert_eq!(pure_tail.eval(1.0), (0.0, 0.1));
    }

    #[test]
    fn differentiate_examples() {
        let d = |c: Vec<f64>| TruncatedSeries::new(c, 8).unwrap().differentiate().unwrap();
        assert_eq!(d(vec![0.0, 1.0]).coeffs(), &[1.0]);
        assert_eq!(d(vec![0.0, 0.0, 1.0]).coeffs(), &[0.0, 2.0]);
        assert_eq!(d(vec![0.0, 0.5, 0.5]).coeffs(), &[0.5, 1.0]);
        let inexact = TruncatedSeries::with_tail(vec![0.0, 1.0], 1, 0.1).unwrap();
        assert!(matches!(inexact.differentiate(), Err(Error::InexactInput(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let s = TruncatedSeries::with_tail(vec![0.1, 1.0 / 3.0, 0.0, 2e-300], 10, 0.01).unwrap();
        let back = TruncatedSeries::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn oversized_cap_is_refused() {
        assert!(matches!(
            TruncatedSeries::identity(MAX_DEGREE_CAP + 1),
            Err(Error::DegreeOverflow(_))
        ));
    }
}
