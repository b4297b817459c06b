//! One function per subcommand; each builds a report from the core library.

use gwc_core::deviation::{
    chernoff_rate, integral_condition, limit_sum, moment_condition_check, phi_table, qk_integral,
    ratio_deviation_sequence, Side,
};
use gwc_core::limits::{
    q_probes, r_probes, theta1_bound, QSystem, RSystem, HORIZON_CAP, PROBE_COUNT,
};
use gwc_core::montecarlo::{simulate, SimConfig, DEFAULT_BATCH_THRESHOLD, DEFAULT_DRAW_BUDGET};
use gwc_core::verify::{default_pair, verify, VerifyOptions};
use gwc_core::{Error, IterationContext, MechanismSchedule, NormalizerTable, Order, Result};
use serde_json::Value;

use crate::report::{num, opt, Format, Report};
use crate::{Command, GlobalOpts, PointOpts, SimulateOpts};

pub struct Outcome {
    pub text: String,
    pub status: u8,
}

const DEFAULT_SIM_PATHS: usize = 1000;
const DEFAULT_SIM_N_MAX: usize = 10;
const DEFAULT_CHERNOFF_K: usize = 20;
const DEFAULT_LDP_N_MAX: usize = 20;
const DEFAULT_THETA_N: usize = 30;
const QK_QUAD_POINTS: usize = 32;

fn flag_error(flag: &str, msg: String) -> Error {
    Error::Validation(vec![format!("{flag}: {msg}")])
}

fn check_globals(g: &GlobalOpts) -> Result<()> {
    let mut errs = Vec::new();
    if !(g.tol > 0.0 && g.tol.is_finite()) {
        errs.push(format!("--tol: must be > 0, got {}", g.tol));
    }
    if g.max_iter == 0 {
        errs.push("--max-iter: must be >= 1".to_string());
    }
    if !(g.epsilon > 0.0 && g.epsilon.is_finite()) {
        errs.push(format!("--epsilon: must be > 0, got {}", g.epsilon));
    }
    if !(g.delta > 0.0 && g.delta.is_finite()) {
        errs.push(format!("--delta: must be > 0, got {}", g.delta));
    }
    if !(g.s0 > 1.0 && g.s0.is_finite()) {
        errs.push(format!("--s0: must be > 1, got {}", g.s0));
    }
    if let Some(r) = g.r {
        if !(r > 0.0 && r.is_finite()) {
            errs.push(format!("--r: must be > 0, got {r}"));
        }
    }
    if g.paths == Some(0) {
        errs.push("--paths: must be >= 1".to_string());
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

/// Reads `--config` as inline JSON when it starts with `{`, else as a path.
pub fn load_schedule(config: Option<&str>) -> Result<MechanismSchedule> {
    let Some(source) = config else {
        return Ok(default_pair());
    };
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        std::fs::read_to_string(source).map_err(|e| flag_error("--config", format!("{source}: {e}")))?
    };
    MechanismSchedule::from_json_str(&text)
}

fn context(g: &GlobalOpts, schedule: &MechanismSchedule) -> Result<IterationContext> {
    schedule.as_pair()?;
    IterationContext::new(schedule.clone(), g.tol, g.max_iter)
}

fn header(r: &mut Report, g: &GlobalOpts, schedule: &MechanismSchedule) {
    r.param("schedule", schedule.to_json_value().to_string())
        .param("tol", g.tol)
        .param("max_iter", g.max_iter)
        .param("degree_cap", g.degree);
}

pub fn run(g: &GlobalOpts, cmd: &Command) -> Result<Outcome> {
    check_globals(g)?;
    let schedule = load_schedule(g.config.as_deref())?;
    let format = g.format.unwrap_or(Format::Csv);
    let report = match cmd {
        Command::Extinction => extinction(g, &schedule)?,
        Command::Moments(p) => moments(g, &schedule, p)?,
        Command::Iterate(p) => iterate(g, &schedule, p)?,
        Command::Dist(p) => dist(g, &schedule, p)?,
        Command::Qfunc(p) => qfunc(g, &schedule, p)?,
        Command::Rfunc(p) => rfunc(g, &schedule, p)?,
        Command::Chernoff(p) => chernoff(g, &schedule, p)?,
        Command::Ldp(p) => ldp(g, &schedule, p)?,
        Command::Simulate(p) => simulate_cmd(g, &schedule, p)?,
        Command::Verify => return verify_cmd(g, &schedule),
    };
    Ok(Outcome {
        text: report.render(format),
        status: 0,
    })
}

fn extinction(g: &GlobalOpts, schedule: &MechanismSchedule) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let e = ctx.extinction()?;
    let mut r = Report::new(
        "extinction",
        &["rho_a", "rho_b", "rho_ab", "rho_ba", "regime", "witness", "horizon"],
    );
    header(&mut r, g, schedule);
    r.param("mean_product", ctx.mean_product());
    r.row(vec![
        num(e.rho_a),
        num(e.rho_b),
        num(e.rho_ab),
        num(e.rho_ba),
        Value::from(e.regime.to_string()),
        num(e.witness),
        Value::from(e.horizon),
    ]);
    Ok(r)
}

fn n_range(p: &PointOpts, default_n: usize) -> Vec<usize> {
    match (p.n, p.n_max) {
        (Some(n), _) => vec![n],
        (None, Some(n_max)) => (0..=n_max).collect(),
        (None, None) => vec![default_n],
    }
}

fn moments(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let t = NormalizerTable::new(&ctx);
    let mut r = Report::new("moments", &["n", "mean", "variance", "var_w", "formula"]);
    header(&mut r, g, schedule);
    r.param("m", t.m).param("sigma_sq", t.sigma_sq).param("var_w_limit", opt(t.var_w().ok()));
    for n in n_range(p, 0) {
        let gamma = t.gamma(n);
        let (mean, var, formula) = match t.var_zn(n) {
            Ok(v) => (gamma, v, "closed"),
            Err(Error::CriticalCase(_)) => {
                let law = ctx.zn_distribution(n, g.degree)?;
                if !law.is_exact() {
                    return Err(Error::InexactInput(law.tail_bound()));
                }
                let (m, v) = law.mean_and_variance();
                (m, v, "exact")
            }
            Err(e) => return Err(e),
        };
        r.row(vec![
            Value::from(n),
            num(mean),
            num(var),
            num(var / (gamma * gamma)),
            Value::from(formula),
        ]);
    }
    Ok(r)
}

fn iterate(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let s = p.s.unwrap_or(0.5);
    let mut r = Report::new("iterate", &["n", "s", "f_n_ab", "f_n_ba", "g_n_ab", "g_n_ba"]);
    header(&mut r, g, schedule);
    let swapped = ctx.swapped();
    for n in n_range(p, 1) {
        r.row(vec![
            Value::from(n),
            num(s),
            opt(ctx.f_n_eval(n, s).ok()),
            opt(swapped.f_n_eval(n, s).ok()),
            opt(ctx.g_n_eval(Order::Ab, n, s).ok()),
            opt(ctx.g_n_eval(Order::Ba, n, s).ok()),
        ]);
    }
    Ok(r)
}

fn dist(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let n = p.n.unwrap_or(1);
    let law = ctx.zn_distribution(n, g.degree)?;
    let (mean, var) = law.mean_and_variance();
    let mut r = Report::new("dist", &["index", "probability"]);
    header(&mut r, g, schedule);
    r.param("n", n)
        .param("exact", law.is_exact())
        .param("tail_bound", law.tail_bound())
        .param("mean", mean)
        .param("variance", var);
    for (j, &c) in law.coeffs().iter().enumerate() {
        r.row(vec![Value::from(j), num(c)]);
    }
    Ok(r)
}

fn probes_or(p: &PointOpts, default: Vec<f64>) -> Vec<f64> {
    p.s.map_or(default, |s| vec![s])
}

fn qfunc(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let sys = QSystem::new(&ctx)?;
    let probes = probes_or(p, q_probes());
    let (q, qt) = sys.q_limit(&probes, g.tol)?;
    let (max_res, res) = sys.functional_residual(&probes, g.tol)?;
    let e = sys.extinction();
    let c = sys.normalizer();
    let mut r = Report::new(
        "qfunc",
        &["s", "q", "q_tilde", "horizon_q", "horizon_q_tilde", "residual"],
    );
    header(&mut r, g, schedule);
    r.param("probe_count", probes.len())
        .param("horizon_cap", HORIZON_CAP)
        .param("rho_ab", e.rho_ab)
        .param("rho_ba", e.rho_ba)
        .param("c_a", c.c_a)
        .param("c_b", c.c_b)
        .param("max_residual", max_res);
    for i in 0..probes.len() {
        r.row(vec![
            num(probes[i]),
            num(q.probes[i].value),
            num(qt.probes[i].value),
            Value::from(q.probes[i].horizon),
            Value::from(qt.probes[i].horizon),
            num(res[i]),
        ]);
    }
    Ok(r)
}

fn rfunc(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let sys = RSystem::new(&ctx)?;
    let probes = probes_or(p, r_probes(&ctx, g.s0));
    let rr = sys.r_limit(Order::Ab, &probes, g.tol)?;
    let rt = sys.r_limit(Order::Ba, &probes, g.tol)?;
    let (max_res, res) = sys.functional_residual(&probes, g.tol)?;
    let theta_n = p.n_max.unwrap_or(DEFAULT_THETA_N);
    let theta = theta1_bound(&ctx, g.s0, theta_n, g.tol)?;
    let mut r = Report::new("rfunc", &["s", "r", "r_tilde", "horizon_r", "horizon_r_tilde", "residual"]);
    header(&mut r, g, schedule);
    r.param("s0", g.s0)
        .param("probe_count", probes.len())
        .param("default_probe_count", PROBE_COUNT)
        .param("horizon_cap", HORIZON_CAP)
        .param("r_prime_one", sys.derivative_at_one(Order::Ab, g.tol)?)
        .param("r_tilde_prime_one", sys.derivative_at_one(Order::Ba, g.tol)?)
        .param("max_residual", max_res)
        .param("theta1", theta.theta1)
        .param("theta1_n_max", theta_n)
        .param("theta1_finite_min", theta.finite_min)
        .param("theta1_argmin", theta.argmin)
        .param("theta1_tail_lower_bound", theta.tail_lower_bound)
        .param("theta1_limit", theta.limit);
    for i in 0..probes.len() {
        r.row(vec![
            num(probes[i]),
            num(rr.probes[i].value),
            num(rt.probes[i].value),
            Value::from(rr.probes[i].horizon),
            Value::from(rt.probes[i].horizon),
            num(res[i]),
        ]);
    }
    Ok(r)
}

fn chernoff(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let k_max = p.n_max.unwrap_or(DEFAULT_CHERNOFF_K);
    let mut r = Report::new("chernoff", &["side", "k", "phi_exact", "chernoff_bound"]);
    header(&mut r, g, schedule);
    r.param("epsilon", g.epsilon).param("k_max", k_max);
    for (name, dist) in [("a", ctx.a()), ("b", ctx.b())] {
        let rate = chernoff_rate(dist, g.epsilon)?;
        r.param(&format!("lambda_{name}"), rate.lambda)
            .param(&format!("alpha_star_{name}"), opt(rate.alpha_star))
            .param(&format!("beta_star_{name}"), opt(rate.beta_star))
            .param(&format!("upper_rate_{name}"), rate.upper_rate)
            .param(&format!("lower_rate_{name}"), rate.lower_rate);
        let phi = phi_table(dist, k_max, g.epsilon)?;
        for k in 1..=k_max {
            r.row(vec![
                Value::from(name),
                Value::from(k),
                num(phi[k]),
                num(rate.bound(k)),
            ]);
        }
    }
    Ok(r)
}

fn ldp(g: &GlobalOpts, schedule: &MechanismSchedule, p: &PointOpts) -> Result<Report> {
    let ctx = context(g, schedule)?;
    let n_max = p.n_max.unwrap_or(DEFAULT_LDP_N_MAX);
    let seq = ratio_deviation_sequence(&ctx, n_max, g.epsilon, g.degree)?;
    let mut r = Report::new(
        "ldp",
        &["n", "exact", "truncation_bound", "chernoff_bound", "normalized"],
    );
    header(&mut r, g, schedule);
    r.param("epsilon", g.epsilon).param("n_max", n_max);
    for (name, side) in [("a", Side::A), ("b", Side::B)] {
        match limit_sum(&ctx, g.epsilon, side, g.tol) {
            Ok(ls) => {
                r.param(&format!("limit_sum_{name}"), ls.value)
                    .param(&format!("limit_sum_{name}_terms"), ls.terms)
                    .param(&format!("limit_sum_{name}_tail"), ls.tail_certificate)
                    .param(&format!("limit_sum_{name}_geometric"), ls.geometric_certificate);
            }
            Err(e) if !e.is_numerical() => {
                r.param(&format!("limit_sum_{name}"), Value::Null)
                    .param(&format!("limit_sum_{name}_error"), e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(exp) = g.r {
        r.param("r", exp)
            .param("delta", g.delta)
            .param("integral_condition", integral_condition(&ctx, exp))
            .param("moment_condition", moment_condition_check(&ctx, exp, g.delta));
        let qk = qk_integral(&ctx, exp, QK_QUAD_POINTS)?;
        r.param("qk_integral", qk.value)
            .param("qk_error_estimate", qk.error_estimate)
            .param("qk_quad_points", QK_QUAD_POINTS);
    }
    for rep in seq {
        r.row(vec![
            Value::from(rep.n),
            opt(rep.exact),
            num(rep.truncation_bound),
            opt(rep.chernoff_bound),
            opt(rep.normalized),
        ]);
    }
    Ok(r)
}

fn simulate_cmd(g: &GlobalOpts, schedule: &MechanismSchedule, p: &SimulateOpts) -> Result<Report> {
    let paths = g.paths.unwrap_or(DEFAULT_SIM_PATHS);
    let n_max = p.n_max.unwrap_or(DEFAULT_SIM_N_MAX);
    let ens = simulate(&SimConfig::new(schedule.clone(), n_max, paths, g.seed))?;
    let columns: &[&str] = if p.summary {
        &["n", "mean_z", "var_z", "survivors", "mean_w"]
    } else {
        &["path", "n", "z"]
    };
    let mut r = Report::new("simulate", columns);
    r.param("schedule", schedule.to_json_value().to_string())
        .param("seed", g.seed)
        .param("paths", paths)
        .param("n_max", n_max)
        .param("z0", 1)
        .param("batch_threshold", DEFAULT_BATCH_THRESHOLD)
        .param("draw_budget", DEFAULT_DRAW_BUDGET);
    if p.summary {
        for s in ens.generation_summary() {
            r.row(vec![
                Value::from(s.n),
                num(s.mean_z),
                num(s.var_z),
                Value::from(s.survivors),
                num(s.mean_w),
            ]);
        }
    } else {
        for (path, t) in ens.trajectories.iter().enumerate() {
            for (n, &z) in t.iter().enumerate() {
                r.row(vec![Value::from(path), Value::from(n), Value::from(z)]);
            }
        }
    }
    Ok(r)
}

fn verify_cmd(g: &GlobalOpts, schedule: &MechanismSchedule) -> Result<Outcome> {
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        seed: g.seed,
        paths: g.paths.unwrap_or(defaults.paths),
        epsilon: g.epsilon,
        degree_cap: g.degree,
        ..defaults
    };
    let rep = verify(schedule, &opts)?;
    let status = if rep.pass { 0 } else { 2 };
    let text = match g.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rep).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut r = Report::new(
                "verify",
                &["name", "n", "estimate", "standard_error", "reference", "pass"],
            );
            let o = &rep.options;
            r.param("schedule", rep.schedule.to_string())
                .param("seed", o.seed)
                .param("paths", o.paths)
                .param("n_max", o.n_max)
                .param("ratio_n_max", o.ratio_n_max)
                .param("epsilon", o.epsilon)
                .param("sigmas", o.sigmas)
                .param("degree_cap", o.degree_cap)
                .param("skipped", rep.skipped.join("; "))
                .param("pass", rep.pass);
            for c in &rep.checks {
                r.row(vec![
                    Value::from(c.name.clone()),
                    Value::from(c.n),
                    num(c.estimate),
                    num(c.standard_error),
                    num(c.reference),
                    Value::from(c.pass),
                ]);
            }
            r.render(Format::Csv)
        }
    };
    Ok(Outcome { text, status })
}
