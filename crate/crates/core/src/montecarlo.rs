//! Seeded trajectory simulation and empirical estimators.
//!
//! Every path owns a ChaCha8 generator keyed by `(seed, path)`; generation `n`
//! reads stream `n` from word 0. Draws therefore depend only on
//! `(seed, path, generation)`, and the ensemble is identical for any number of
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::{MechanismSchedule, OffspringDistribution};
use crate::moments::schedule_gamma;
use crate::numerics::linear_fit;

/// Above this population, offspring counts per support point are drawn as a
/// multinomial vector instead of one categorical draw per individual.
pub const DEFAULT_BATCH_THRESHOLD: u64 = 10_000;
pub const DEFAULT_DRAW_BUDGET: f64 = 1e9;
/// Expected populations beyond 2^53 are refused: counts stop being exact
/// in `f64` and are close to overflowing `u64`.
pub const MAX_EXPECTED_POPULATION: f64 = 9_007_199_254_740_992.0;
/// Smallest `Gamma_N` accepted for the proxy `W_N`.
pub const PROXY_MIN_GAMMA: f64 = 1e4;
/// Smallest `Gamma_N / Gamma_n` accepted for the proxy `W_N`.
pub const PROXY_MIN_RATIO: f64 = 100.0;
/// Conditioned estimates need at least this many paths inside the event.
pub const MIN_CONDITIONED_PATHS: usize = 200;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub schedule: MechanismSchedule,
    pub n_max: usize,
    pub paths: usize,
    pub seed: u64,
    pub z0: u64,
    pub batch_threshold: u64,
    pub draw_budget: f64,
}

impl SimConfig {
    pub fn new(schedule: MechanismSchedule, n_max: usize, paths: usize, seed: u64) -> Self {
        Self {
            schedule,
            n_max,
            paths,
            seed,
            z0: 1,
            batch_threshold: DEFAULT_BATCH_THRESHOLD,
            draw_budget: DEFAULT_DRAW_BUDGET,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.paths == 0 {
            errs.push("paths must be >= 1".to_string());
        }
        if self.n_max == 0 {
            errs.push("n_max must be >= 1".to_string());
        }
        if self.z0 == 0 {
            errs.push("z0 must be >= 1".to_string());
        }
        if !(self.draw_budget > 0.0) {
            errs.push(format!("draw budget must be > 0, got {}", self.draw_budget));
        }
        for (i, m) in self.schedule.mechanisms().iter().enumerate() {
            if !m.is_exact() {
                errs.push(format!(
                    "mechanisms[{i}] carries tail mass {}; simulation needs finite support",
                    m.tail_mass()
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Expected number of random variates: one per individual below the batch
    /// threshold, one binomial per support point above it.
    pub fn expected_draws(&self) -> f64 {
        let mut gamma = 1.0;
        let mut total = 0.0;
        for n in 0..self.n_max {
            let mech = self.schedule.at(n);
            let pop = self.z0 as f64 * gamma;
            let per_gen = if pop <= self.batch_threshold as f64 {
                pop
            } else {
                (mech.max_support() + 1) as f64
            };
            total += per_gen;
            gamma *= mech.mean();
        }
        total * self.paths as f64
    }
}

enum Sampler {
    Point(u64),
    Categorical {
        alias: WeightedAliasIndex<f64>,
        probs: Vec<f64>,
        /// `suffix[i] = sum_{j >= i} p_j`
        suffix: Vec<f64>,
    },
}

impl Sampler {
    fn new(dist: &OffspringDistribution) -> Result<Self> {
        let p = dist.probs();
        let nonzero: Vec<usize> = (0..p.len()).filter(|&j| p[j] > 0.0).collect();
        if nonzero.len() == 1 {
            return Ok(Sampler::Point(nonzero[0] as u64));
        }
        let alias = WeightedAliasIndex::new(p.to_vec())
            .map_err(|e| Error::domain(format!("alias table: {e}")))?;
        let mut suffix = vec![0.0; p.len()];
        let mut acc = 0.0;
        for j in (0..p.len()).rev() {
            acc += p[j];
            suffix[j] = acc;
        }
        Ok(Sampler::Categorical {
            alias,
            probs: p.to_vec(),
            suffix,
        })
    }

    /// Total offspring of `z` individuals.
    fn offspring(&self, z: u64, threshold: u64, rng: &mut ChaCha8Rng) -> Result<u64> {
        let overflow = || Error::Overflow("population exceeds u64".into());
        match self {
            Sampler::Point(k) => z.checked_mul(*k).ok_or_else(overflow),
            Sampler::Categorical { alias, probs, suffix } => {
                if z <= threshold {
                    let mut total = 0u64;
                    for _ in 0..z {
                        total += alias.sample(rng) as u64;
                    }
                    return Ok(total);
                }
                let mut left = z;
                let mut total = 0u64;
                let last = probs.len() - 1;
                for j in 0..last {
                    if left == 0 {
                        break;
                    }
                    let p = (probs[j] / suffix[j]).clamp(0.0, 1.0);
                    let count = Binomial::new(left, p)
                        .map_err(|e| Error::domain(format!("binomial: {e}")))?
                        .sample(rng);
                    left -= count;
                    total = (j as u64)
                        .checked_mul(count)
                        .and_then(|c| total.checked_add(c))
                        .ok_or_else(overflow)?;
                }
                (last as u64)
                    .checked_mul(left)
                    .and_then(|c| total.checked_add(c))
                    .ok_or_else(overflow)
            }
        }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(path as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    /// `trajectories[path][n] = Z_n`, `n = 0..=n_max`.
    pub trajectories: Vec<Vec<u64>>,
    pub seed: u64,
    pub z0: u64,
    pub schedule: MechanismSchedule,
    /// `Gamma_n` of the schedule.
    pub gammas: Vec<f64>,
}

/// Runs `config.paths` independent trajectories.
pub fn simulate(config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let gammas: Vec<f64> = (0..=config.n_max)
        .map(|n| schedule_gamma(&config.schedule, n))
        .collect();
    let peak = config.z0 as f64 * gammas.iter().cloned().fold(0.0, f64::max);
    if peak > MAX_EXPECTED_POPULATION {
        return Err(Error::ResourceBudget(format!(
            "expected population {peak:.3e} exceeds {MAX_EXPECTED_POPULATION:e}"
        )));
    }
    let expected = config.expected_draws();
    if expected > config.draw_budget {
        return Err(Error::ResourceBudget(format!(
            "about {expected:.3e} offspring draws expected, budget is {:.3e}",
            config.draw_budget
        )));
    }
    let samplers: Vec<Sampler> = config
        .schedule
        .mechanisms()
        .iter()
        .map(Sampler::new)
        .collect::<Result<_>>()?;
    let period = samplers.len();
    let trajectories = (0..config.paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(config.seed, path);
            let mut z = Vec::with_capacity(config.n_max + 1);
            z.push(config.z0);
            for n in 0..config.n_max {
                let current = z[n];
                let next = if current == 0 {
                    0
                } else {
                    rng.set_stream(n as u64);
                    rng.set_word_pos(0);
                    samplers[n % period].offspring(current, config.batch_threshold, &mut rng)?
                };
                z.push(next);
            }
            Ok(z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        trajectories,
        seed: config.seed,
        z0: config.z0,
        schedule: config.schedule.clone(),
        gammas,
    })
}

/// A sample frequency or mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub sample_size: usize,
}

impl Estimate {
    fn frequency(hits: usize, total: usize) -> Self {
        let p = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self {
            value: p,
            standard_error: (p * (1.0 - p) / total.max(1) as f64).sqrt(),
            sample_size: total,
        }
    }

    /// `|value - reference| <= k * standard_error`, with a floor of one
    /// rounding unit so that zero-variance estimates compare exactly.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        let slack = 1e-12 * reference.abs().max(1.0);
        (self.value - reference).abs() <= k * self.standard_error + slack
    }
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_max(&self) -> usize {
        self.gammas.len() - 1
    }

    pub fn z(&self, path: usize, n: usize) -> u64 {
        self.trajectories[path][n]
    }

    /// `W_n = Z_n / (z0 Gamma_n)`.
    pub fn w(&self, path: usize, n: usize) -> f64 {
        self.trajectories[path][n] as f64 / (self.z0 as f64 * self.gammas[n])
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n > self.n_max() {
            return Err(Error::precondition(format!(
                "generation {n} is beyond the simulated horizon {}",
                self.n_max()
            )));
        }
        Ok(())
    }

    fn require_no_death(&self) -> Result<()> {
        if self.schedule.mechanisms().iter().any(|m| m.prob(0) > 0.0) {
            return Err(Error::precondition(
                "ratio estimates need p_0 = 0 for every mechanism (the ratio is undefined after extinction)",
            ));
        }
        Ok(())
    }

    /// Fraction of paths extinct by generation `n`.
    pub fn extinction_frequency(&self, n: usize) -> Result<Estimate> {
        self.check_n(n)?;
        let dead = self.trajectories.iter().filter(|t| t[n] == 0).count();
        Ok(Estimate::frequency(dead, self.paths()))
    }

    fn ratio_event(&self, path: usize, n: usize, epsilon: f64) -> bool {
        let k = self.z(path, n) as f64;
        let next = self.z(path, n + 1) as f64;
        let m = self.schedule.at(n).mean();
        let slack = 1e-12 * (k * (m + epsilon) + 1.0);
        (next - k * m).abs() - k * epsilon > slack
    }

    /// Empirical `P(|Z_{n+1}/Z_n - omega_n| > eps)`.
    pub fn estimate_ratio_deviation(&self, n: usize, epsilon: f64) -> Result<Estimate> {
        self.check_n(n + 1)?;
        self.require_no_death()?;
        let hits = (0..self.paths())
            .filter(|&p| self.ratio_event(p, n, epsilon))
            .count();
        Ok(Estimate::frequency(hits, self.paths()))
    }

    fn check_proxy(&self, n: usize, proxy: usize) -> Result<()> {
        self.check_n(proxy)?;
        let (gn, gp) = (self.gammas[n], self.gammas[proxy]);
        if gp < PROXY_MIN_GAMMA || gp / gn < PROXY_MIN_RATIO {
            return Err(Error::ProxyTooClose(format!(
                "Gamma_N = {gp:.6e} at N = {proxy}, Gamma_N / Gamma_n = {:.6e}; need >= {PROXY_MIN_GAMMA:e} and >= {PROXY_MIN_RATIO}",
                gp / gn
            )));
        }
        Ok(())
    }

    fn w_deviation_frequency(&self, n: usize, epsilon: f64, proxy: usize) -> Estimate {
        let hits = (0..self.paths())
            .filter(|&p| (self.w(p, n) - self.w(p, proxy)).abs() > epsilon)
            .count();
        Estimate::frequency(hits, self.paths())
    }

    /// Empirical `P(|W_n - W_N| > eps)` with `W_N` standing in for `W`.
    pub fn estimate_w_deviation(&self, n: usize, epsilon: f64, proxy: usize) -> Result<WDeviationEstimate> {
        if !(epsilon > 0.0) {
            return Err(Error::domain(format!("epsilon must be > 0, got {epsilon}")));
        }
        self.check_proxy(n, proxy)?;
        let estimate = self.w_deviation_frequency(n, epsilon, proxy);
        Ok(WDeviationEstimate {
            n,
            proxy_horizon: proxy,
            epsilon,
            estimate,
            proxy_bias: self.proxy_bias(epsilon, proxy),
        })
    }

    /// Fits `log p = log C - c Gamma_m^{1/3}` over the generations where the
    /// proxy is admissible and the frequency is resolvable, then extrapolates
    /// to `m = N`.
    fn proxy_bias(&self, epsilon: f64, proxy: usize) -> ProxyBias {
        let floor = 10.0 / self.paths() as f64;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in 0..proxy {
            if self.check_proxy(m, proxy).is_err() {
                continue;
            }
            let p = self.w_deviation_frequency(m, epsilon, proxy).value;
            if (floor..=0.5).contains(&p) {
                xs.push(self.gammas[m].cbrt());
                ys.push(p.ln());
            }
        }
        let fit = linear_fit(&xs, &ys).filter(|f| f.slope < 0.0);
        ProxyBias {
            points: xs.len(),
            log_c: fit.map(|f| f.intercept),
            rate: fit.map(|f| -f.slope),
            bound: fit.map(|f| (f.intercept + f.slope * self.gammas[proxy].cbrt()).exp().min(1.0)),
        }
    }

    /// Empirical `P(|Z_{n+1}/Z_n - omega_n| > eps | W_N >= delta)`.
    pub fn estimate_conditional_deviation(
        &self,
        n: usize,
        epsilon: f64,
        delta: f64,
        proxy: usize,
    ) -> Result<ConditionalEstimate> {
        if !(delta > 0.0) {
            return Err(Error::domain(format!("delta must be > 0, got {delta}")));
        }
        self.check_n(n + 1)?;
        self.check_n(proxy)?;
        self.require_no_death()?;
        let inside: Vec<usize> = (0..self.paths())
            .filter(|&p| self.w(p, proxy) >= delta)
            .collect();
        if inside.len() < MIN_CONDITIONED_PATHS {
            return Err(Error::UnderpoweredCondition {
                found: inside.len(),
                required: MIN_CONDITIONED_PATHS,
            });
        }
        let hits = inside
            .iter()
            .filter(|&&p| self.ratio_event(p, n, epsilon))
            .count();
        Ok(ConditionalEstimate {
            n,
            proxy_horizon: proxy,
            epsilon,
            delta,
            estimate: Estimate::frequency(hits, inside.len()),
            condition_frequency: Estimate::frequency(inside.len(), self.paths()),
        })
    }

    /// Sample mean, variance and moment generating function of `W_n`.
    pub fn empirical_w_moments(&self, n: usize, thetas: &[f64]) -> Result<WMoments> {
        self.check_n(n)?;
        let count = self.paths() as f64;
        let ws: Vec<f64> = (0..self.paths()).map(|p| self.w(p, n)).collect();
        let mean = ws.iter().sum::<f64>() / count;
        let (mut m2, mut m4) = (0.0, 0.0);
        for w in &ws {
            let d = (w - mean) * (w - mean);
            m2 += d;
            m4 += d * d;
        }
        let variance = if ws.len() > 1 { m2 / (count - 1.0) } else { 0.0 };
        let central2 = m2 / count;
        let central4 = m4 / count;
        let mgf = thetas
            .iter()
            .map(|&theta| {
                let v = ws.iter().map(|w| (theta * w).exp()).sum::<f64>() / count;
                (theta, v)
            })
            .collect();
        Ok(WMoments {
            n,
            mean,
            mean_se: (variance / count).sqrt(),
            variance,
            variance_se: ((central4 - central2 * central2).max(0.0) / count).sqrt(),
            mgf,
        })
    }

    /// Mean of `Z_{n+1}` within the `top` most populated cells `Z_n = k`.
    pub fn martingale_cells(&self, n: usize, top: usize) -> Result<Vec<MartingaleCell>> {
        self.check_n(n + 1)?;
        let mut cells: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
        for t in &self.trajectories {
            if t[n] > 0 {
                cells.entry(t[n]).or_default().push(t[n + 1] as f64);
            }
        }
        let mut ranked: Vec<(u64, Vec<f64>)> = cells.into_iter().collect();
        ranked.sort_by(|x, y| y.1.len().cmp(&x.1.len()).then(x.0.cmp(&y.0)));
        let omega = self.schedule.at(n).mean();
        Ok(ranked
            .into_iter()
            .take(top)
            .map(|(k, next)| {
                let c = next.len() as f64;
                let mean = next.iter().sum::<f64>() / c;
                let var = if next.len() > 1 {
                    next.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (c - 1.0)
                } else {
                    0.0
                };
                MartingaleCell {
                    k,
                    count: next.len(),
                    mean_next: Estimate {
                        value: mean,
                        standard_error: (var / c).sqrt(),
                        sample_size: next.len(),
                    },
                    expected: omega * k as f64,
                }
            })
            .collect())
    }

    /// Per-generation mean and variance of `Z_n`, survivors and mean `W_n`.
    pub fn generation_summary(&self) -> Vec<GenerationSummary> {
        let count = self.paths() as f64;
        (0..=self.n_max())
            .map(|n| {
                let zs: Vec<f64> = self.trajectories.iter().map(|t| t[n] as f64).collect();
                let mean = zs.iter().sum::<f64>() / count;
                let var = if zs.len() > 1 {
                    zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (count - 1.0)
                } else {
                    0.0
                };
                GenerationSummary {
                    n,
                    mean_z: mean,
                    var_z: var,
                    survivors: zs.iter().filter(|&&z| z > 0.0).count(),
                    mean_w: mean / (self.z0 as f64 * self.gammas[n]),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyBias {
    /// Generations that entered the fit.
    pub points: usize,
    pub log_c: Option<f64>,
    pub rate: Option<f64>,
    /// Fitted `C exp(-c Gamma_N^{1/3})`; an extrapolation, not a proof.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WDeviationEstimate {
    pub n: usize,
    pub proxy_horizon: usize,
    pub epsilon: f64,
    pub estimate: Estimate,
    pub proxy_bias: ProxyBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalEstimate {
    pub n: usize,
    pub proxy_horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub estimate: Estimate,
    /// `P(W_N >= delta)` on the same sample.
    pub condition_frequency: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WMoments {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub mgf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleCell {
    pub k: u64,
    pub count: usize,
    pub mean_next: Estimate,
    pub expected: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub n: usize,
    pub mean_z: f64,
    pub var_z: f64,
    pub survivors: usize,
    pub mean_w: f64,
}
