//! Monte Carlo against exact results on one pair, as a single pass/fail report.

use serde::Serialize;

use crate::deviation::ratio_deviation_sequence;
use crate::error::Result;
use crate::iterate::IterationContext;
use crate::mechanism::{MechanismSchedule, OffspringDistribution};
use crate::montecarlo::{simulate, Estimate, SimConfig};
use crate::moments::NormalizerTable;
use crate::series::DEFAULT_DEGREE_CAP;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub paths: usize,
    /// Horizon for the moment checks.
    pub n_max: usize,
    /// Horizon for the ratio-deviation checks.
    pub ratio_n_max: usize,
    pub epsilon: f64,
    /// Width of the acceptance band in standard errors.
    pub sigmas: f64,
    pub degree_cap: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: 100_000,
            n_max: 12,
            ratio_n_max: 6,
            epsilon: 0.25,
            sigmas: 3.0,
            degree_cap: DEFAULT_DEGREE_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub n: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub reference: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub schedule: serde_json::Value,
    pub checks: Vec<Check>,
    pub skipped: Vec<String>,
    pub pass: bool,
}

/// `a = b = {p_1 = 0.5, p_2 = 0.5}`.
pub fn default_pair() -> MechanismSchedule {
    let d = OffspringDistribution::from_sparse(&[(1, 0.5), (2, 0.5)]).expect("valid");
    MechanismSchedule::pair(d.clone(), d)
}

fn check(name: &str, n: usize, est: Estimate, reference: f64, sigmas: f64) -> Check {
    Check {
        name: name.to_string(),
        n,
        estimate: est.value,
        standard_error: est.standard_error,
        reference,
        pass: est.within(reference, sigmas),
    }
}

pub fn verify(schedule: &MechanismSchedule, opts: &VerifyOptions) -> Result<VerifyReport> {
    let (a, b) = schedule.as_pair()?;
    let ctx = IterationContext::pair(a.clone(), b.clone());
    let horizon = opts.n_max.max(opts.ratio_n_max + 1);
    let ens = simulate(&SimConfig::new(schedule.clone(), horizon, opts.paths, opts.seed))?;
    let table = NormalizerTable::new(&ctx);
    let mut checks = Vec::new();
    let mut skipped = Vec::new();

    for n in 0..=opts.n_max {
        let m = ens.empirical_w_moments(n, &[])?;
        let mean = Estimate {
            value: m.mean,
            standard_error: m.mean_se,
            sample_size: opts.paths,
        };
        checks.push(check("mean_w", n, mean, 1.0, opts.sigmas));
        match table.var_wn(n) {
            Ok(v) => {
                let var = Estimate {
                    value: m.variance,
                    standard_error: m.variance_se,
                    sample_size: opts.paths,
                };
                checks.push(check("var_w", n, var, v, opts.sigmas));
            }
            Err(e) => skipped.push(format!("var_w n={n}: {e}")),
        }
    }

    match ratio_deviation_sequence(&ctx, opts.ratio_n_max, opts.epsilon, opts.degree_cap) {
        Ok(exact) => {
            for rep in &exact {
                let est = ens.estimate_ratio_deviation(rep.n, opts.epsilon)?;
                let reference = rep.exact.unwrap_or(f64::NAN);
                checks.push(check("ratio_deviation", rep.n, est, reference, opts.sigmas));
            }
        }
        Err(e) => skipped.push(format!("ratio_deviation: {e}")),
    }

    let ext = ctx.extinction()?;
    let freq = ens.extinction_frequency(horizon)?;
    let mut ext_check = check("extinction_frequency", horizon, freq, ext.rho_ab, opts.sigmas);
    // Finite-horizon extinction lags the limit by `rho_ab - f_n(0)`.
    let lag = ext.rho_ab - ctx.f_n_eval(horizon, 0.0)?;
    ext_check.pass = (freq.value - ext.rho_ab).abs() <= opts.sigmas * freq.standard_error + lag + 1e-12;
    checks.push(ext_check);

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        options: opts.clone(),
        schedule: schedule.to_json_value(),
        checks,
        skipped,
        pass,
    })
}
