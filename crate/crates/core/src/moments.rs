//! Mean normalizers `Gamma_n`, one-step means `omega_n`, and second moments of
//! `Z_n` and of the martingale limit `W`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::iterate::IterationContext;
use crate::mechanism::{MechanismSchedule, CRITICALITY_TOL};
use crate::series::convolution_power;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizerTable {
    pub m_a: f64,
    pub m_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    /// `m_a * m_b`
    pub m: f64,
    /// `var_a * m_b^2 + var_b * m_a`
    pub sigma_sq: f64,
}

impl NormalizerTable {
    pub fn new(ctx: &IterationContext) -> Self {
        let (a, b) = (ctx.a().moments(), ctx.b().moments());
        Self {
            m_a: a.mean,
            m_b: b.mean,
            var_a: a.variance,
            var_b: b.variance,
            m: a.mean * b.mean,
            sigma_sq: a.variance * b.mean * b.mean + b.variance * a.mean,
        }
    }

    /// One-step mean at generation `n`.
    pub fn omega(&self, n: usize) -> f64 {
        if n % 2 == 0 {
            self.m_a
        } else {
            self.m_b
        }
    }

    /// `Gamma_n = omega_0 * ... * omega_{n-1}`, by running product.
    pub fn gamma(&self, n: usize) -> f64 {
        (0..n).fold(1.0, |acc, k| acc * self.omega(k))
    }

    /// `Gamma_n` for the swapped ordering `b, a, b, ...`.
    pub fn gamma_tilde(&self, n: usize) -> f64 {
        (0..n).fold(1.0, |acc, k| acc * self.omega(k + 1))
    }

    /// Two-case closed form of `Gamma_n`.
    pub fn gamma_closed(&self, n: usize) -> f64 {
        let k = (n / 2) as i32;
        if n % 2 == 0 {
            self.m.powi(k)
        } else {
            self.m.powi(k) * self.m_a
        }
    }

    pub fn mean_zn(&self, n: usize) -> f64 {
        self.gamma(n)
    }

    pub fn is_critical(&self) -> bool {
        (self.m - 1.0).abs() < CRITICALITY_TOL
    }

    /// `(m^k - 1) / (m - 1)` without cancellation near `m = 1`.
    fn geometric(&self, k: usize) -> f64 {
        let d = self.m - 1.0;
        (k as f64 * d.ln_1p()).exp_m1() / d
    }

    /// `Var(Z_n)` from the closed two-case formula; singular at `m = 1`.
    pub fn var_zn(&self, n: usize) -> Result<f64> {
        if self.is_critical() {
            return Err(Error::CriticalCase(self.m));
        }
        let k = n / 2;
        let even = self.sigma_sq * self.m.powi(k as i32 - 1) * self.geometric(k);
        if n % 2 == 0 {
            Ok(even)
        } else {
            Ok(even * self.m_a * self.m_a + self.var_a * self.m.powi(k as i32))
        }
    }

    /// `Var(W_n) = Var(Z_n) / Gamma_n^2`.
    pub fn var_wn(&self, n: usize) -> Result<f64> {
        let g = self.gamma(n);
        Ok(self.var_zn(n)? / (g * g))
    }

    /// `Var(W) = sigma^2 / (m^2 - m)`.
    pub fn var_w(&self) -> Result<f64> {
        if self.m <= 1.0 + CRITICALITY_TOL {
            return Err(Error::domain(format!(
                "Var(W) needs a supercritical pair, m = {}",
                self.m
            )));
        }
        Ok(self.sigma_sq / (self.m * self.m - self.m))
    }
}

/// Running-product normalizer for a schedule of any period.
pub fn schedule_gamma(schedule: &MechanismSchedule, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * schedule.at(k).mean())
}

/// Exact `E[Z_{n+1} | Z_n = k]`, from the `k`-fold convolution of the
/// mechanism active at generation `n`.
pub fn conditional_mean_next(ctx: &IterationContext, n: usize, k: usize) -> Result<f64> {
    let law = convolution_power(ctx.mech(n), k)?;
    Ok(law.iter().enumerate().map(|(j, &p)| j as f64 * p).sum())
}
