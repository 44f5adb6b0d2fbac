//! Named checks over a cached session of replica runs.

use serde_json::json;

use crate::coupling::SandwichMode;
use crate::equilibrium::CorrelationKernel;
use crate::oracle::{exact_correlation, DEFAULT_CAP};
use crate::rng::derive_seed;
use crate::stats::{jackknife, ks_lattice_normal, mean_estimate, sample_variance, Estimate};

use super::runs::*;
use super::{CheckRow, EstimatorError, ExperimentConfig, ResolvedModel, Result};

pub const CHECKS: &[&str] = &["lln", "variance", "clt", "qspeed", "corr", "cor32", "decomp", "slant", "sspeed", "sandwich"];

const TAG_CURRENTS: u64 = 1;
const TAG_CORR: u64 = 2;
const TAG_DEFECT: u64 = 3;
const TAG_DEFECT_RAW: u64 = 4;
const TAG_TWO_DENSITY: u64 = 5;
const TAG_SANDWICH: u64 = 6;

const DEFAULT_N_MAX: i64 = 20;
const TRUNCATION_EXTRA: i64 = 8;

/// |V - C| Var(ω), the limiting Var J^(V)(t) / t.
pub fn diffusivity(v: f64, speed: f64, var: f64) -> f64 {
    (v - speed).abs() * var
}

/// Limit of Var J^(V)/t - Var J^(0)/t, written in the split form
/// [2(V - C⁺)⁺ - V] Var for V > 0 and [2(V + C⁻)⁻ + V] Var for V < 0.
pub fn slant_correction(v: f64, speed: f64, var: f64) -> f64 {
    let pos = |x: f64| x.max(0.0);
    let neg = |x: f64| (-x).max(0.0);
    if v > 0.0 {
        (2.0 * pos(v - pos(speed)) - v) * var
    } else if v < 0.0 {
        (2.0 * neg(v + neg(speed)) + v) * var
    } else {
        0.0
    }
}

/// (E r(θ2) - E r(θ1)) / (ρ(θ2) - ρ(θ1)), the speed of a tagged second class
/// particle between two densities.
pub fn two_density_speed(lower: &ResolvedModel, upper: &ResolvedModel) -> f64 {
    (upper.moments.er - lower.moments.er) / (upper.moments.rho - lower.moments.rho)
}

/// Exact mean of J^(V)(t) from a stationary start on the ring.
pub fn current_mean(model: &ResolvedModel, v: f64, t: f64) -> f64 {
    t * model.moments.er - (v * t).trunc() * model.moments.rho
}

fn variance_rate(js: &[i64], t: f64, groups: usize) -> Estimate {
    let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
    jackknife(&xs, groups, |d| sample_variance(d) / t)
}

fn mean_of<T: Copy>(xs: &[T], f: impl Fn(T) -> f64) -> Estimate {
    let v: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    mean_estimate(&v)
}

fn combined_z(a: Estimate, b: Estimate) -> (f64, f64) {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    let d = a.value - b.value;
    (d, if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY })
}

/// Configuration, resolved model and cached replica runs shared by checks.
pub struct Session {
    pub config: ExperimentConfig,
    pub model: ResolvedModel,
    currents: Option<CurrentSamples>,
    correlations: Option<CorrelationSamples>,
}

impl Session {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let model = config.resolve()?;
        Ok(Session { config, model, currents: None, correlations: None })
    }

    fn seed(&self, tag: u64) -> u64 {
        derive_seed(self.config.seed, tag)
    }

    fn velocities(&self) -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend(self.config.v.iter().filter(|&&x| x != 0.0));
        v
    }

    fn positive_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.config.t.iter().cloned().filter(|&t| t > 0.0).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }

    /// J^(V)(t) for V in {0} ∪ config V, cached.
    pub fn currents(&mut self) -> Result<&CurrentSamples> {
        if self.currents.is_none() {
            let c = &self.config;
            let samples = run_currents(&self.model, c.len, &c.t, &self.velocities(), c.replicas, self.seed(TAG_CURRENTS))?;
            self.currents = Some(samples);
        }
        Ok(self.currents.as_ref().unwrap())
    }

    fn lags(&self) -> Vec<i64> {
        let n_max = self.config.n_max.unwrap_or(DEFAULT_N_MAX) + TRUNCATION_EXTRA;
        let mut lags: Vec<i64> = (-n_max..=n_max).collect();
        lags.extend(&self.config.n);
        lags.sort();
        lags.dedup();
        lags
    }

    pub fn correlations(&mut self) -> Result<&CorrelationSamples> {
        if self.correlations.is_none() {
            let c = &self.config;
            let samples =
                run_correlations(&self.model, c.len, &c.t, &self.lags(), c.replicas, self.seed(TAG_CORR))?;
            self.correlations = Some(samples);
        }
        Ok(self.correlations.as_ref().unwrap())
    }

    pub fn run_all(&mut self) -> Result<Vec<CheckRow>> {
        let names = self.config.checks.clone();
        let mut rows = vec![];
        for name in &names {
            rows.extend(self.run_check(name)?);
        }
        Ok(rows)
    }

    pub fn run_check(&mut self, name: &str) -> Result<Vec<CheckRow>> {
        match name {
            "lln" => self.lln(),
            "variance" => self.variance(),
            "clt" => self.clt(),
            "qspeed" => self.qspeed(),
            "corr" => self.corr(),
            "cor32" => self.cor32(),
            "decomp" => self.decomp(),
            "slant" => self.slant(),
            "sspeed" => self.sspeed(),
            "sandwich" => self.sandwich(),
            other => Err(EstimatorError::Config(format!("unknown check '{other}'; expected one of {}", CHECKS.join(", ")))),
        }
    }

    pub fn lln(&mut self) -> Result<Vec<CheckRow>> {
        let model = self.model.clone();
        let cur = self.currents()?;
        let mut rows = vec![];
        for (ti, &t) in cur.times.iter().enumerate() {
            if t <= 0.0 {
                continue;
            }
            for (vi, &v) in cur.velocities.iter().enumerate() {
                let est = mean_of(&cur.column(ti, vi), |j| j as f64 / t);
                let target = current_mean(&model, v, t) / t;
                let limit = model.moments.er - v * model.moments.rho;
                rows.push(CheckRow::compare("lln", json!({"V": v, "t": t, "limit": limit}), est, target, None));
            }
        }
        Ok(rows)
    }

    pub fn variance(&mut self) -> Result<Vec<CheckRow>> {
        let (speed, var, groups, tol) = (self.model.speed, self.model.moments.var, self.config.groups, self.config.rel_tol);
        let cur = self.currents()?;
        let mut rows = vec![];
        for (ti, &t) in cur.times.iter().enumerate() {
            if t <= 0.0 {
                continue;
            }
            for (vi, &v) in cur.velocities.iter().enumerate() {
                let est = variance_rate(&cur.column(ti, vi), t, groups);
                let target = diffusivity(v, speed, var);
                rows.push(CheckRow::compare("variance", json!({"V": v, "t": t}), est, target, tol));
            }
        }
        Ok(rows)
    }

    pub fn clt(&mut self) -> Result<Vec<CheckRow>> {
        let (speed, var, ks_max) = (self.model.speed, self.model.moments.var, self.config.ks_max);
        let cur = self.currents()?;
        let mut rows = vec![];
        for (ti, &t) in cur.times.iter().enumerate() {
            for (vi, &v) in cur.velocities.iter().enumerate() {
                let d = diffusivity(v, speed, var);
                let params = json!({"V": v, "t": t});
                if t <= 0.0 || d < 1e-12 {
                    let reason = if t <= 0.0 { "t = 0" } else { "zero diffusivity" };
                    let mut p = params;
                    p["skipped"] = json!(reason);
                    rows.push(CheckRow::new("clt", p, 0.0));
                    continue;
                }
                let js = cur.column(ti, vi);
                let mean = js.iter().map(|&j| j as f64).sum::<f64>() / js.len() as f64;
                let ks = ks_lattice_normal(&js, mean, (d * t).sqrt());
                let mut row = CheckRow::new("clt", params, ks);
                row.target = Some(0.0);
                row.pass = Some(ks < ks_max);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    pub fn qspeed(&mut self) -> Result<Vec<CheckRow>> {
        let times = self.positive_times();
        let c = &self.config;
        let (times, runs) = run_defects(&self.model, c.len, &times, c.replicas, self.seed(TAG_DEFECT), true)?;
        let mut rows = vec![];
        for (ti, &t) in times.iter().enumerate() {
            let qs: Vec<f64> = runs.iter().map(|r| r.q.as_ref().unwrap()[ti] as f64 / t).collect();
            let est = mean_estimate(&qs);
            rows.push(CheckRow::compare("qspeed", json!({"t": t}), est, self.model.speed, None));
            for n in 1..=4 {
                let m = mean_of(&qs, |x| x.abs().powi(n));
                let mut row = CheckRow::new("qspeed_moment", json!({"t": t, "n": n}), m.value);
                row.ci95 = Some(m.ci95());
                rows.push(row);
            }
        }
        Ok(rows)
    }

    pub fn corr(&mut self) -> Result<Vec<CheckRow>> {
        let lags = if self.config.n.is_empty() { vec![0, 1] } else { self.config.n.clone() };
        let (spec, theta, var, len, oracle) =
            (self.model.spec.clone(), self.model.theta, self.model.moments.var, self.config.len, self.config.oracle);
        let cs = self.correlations()?.clone();
        let mut rows = vec![];
        for (ti, &t) in cs.times.iter().enumerate() {
            for &n in &lags {
                let li = cs.lag_index(n).unwrap();
                let est = mean_estimate(&cs.column(ti, li));
                let params = json!({"n": n, "t": t});
                let target = if t == 0.0 {
                    Some(if n.rem_euclid(len as i64) == 0 { var } else { 0.0 })
                } else if oracle {
                    Some(exact_correlation(&spec, theta, len, n, t, DEFAULT_CAP)?)
                } else {
                    None
                };
                rows.push(match target {
                    Some(x) => CheckRow::compare("corr", params, est, x, None),
                    None => {
                        let mut r = CheckRow::new("corr", params, est.value);
                        r.ci95 = Some(est.ci95());
                        r
                    }
                });
            }
        }
        Ok(rows)
    }

    pub fn cor32(&mut self) -> Result<Vec<CheckRow>> {
        let lags = if self.config.n.is_empty() { (-2..=2).collect() } else { self.config.n.clone() };
        let kernel = CorrelationKernel::new(&self.model.marginal);
        let var = self.model.moments.var;
        let mut rows = vec![];
        let total = kernel.total(&self.model.marginal);
        rows.push(CheckRow::exact("cor32_kernel_total", json!({}), total, var, (total - var).abs() < 1e-9));

        let c = &self.config;
        let replicas = c.replicas;
        let (times, runs) = run_defects(&self.model, c.len, &c.t, replicas, self.seed(TAG_DEFECT_RAW), false)?;
        let cs = self.correlations()?.clone();
        for (ti, &t) in times.iter().enumerate() {
            let cti = cs.times.iter().position(|&x| x == t).unwrap();
            for &n in &lags {
                let lhs = mean_estimate(&cs.column(cti, cs.lag_index(n).unwrap()));
                let hits: Vec<f64> = runs
                    .iter()
                    .map(|r| match &r.q {
                        Some(q) if q[ti] == n => kernel.at(r.omega0),
                        _ => 0.0,
                    })
                    .collect();
                let rhs = mean_estimate(&hits);
                let p_hit = runs.iter().filter(|r| r.q.as_ref().is_some_and(|q| q[ti] == n)).count() as f64 / replicas as f64;
                let (d, z) = combined_z(lhs, rhs);
                let mut params = json!({"n": n, "t": t, "lhs": lhs.value, "lhs_ci95": lhs.ci95(), "rhs": rhs.value, "rhs_ci95": rhs.ci95()});
                let insufficient = p_hit < 10.0 / replicas as f64;
                if insufficient {
                    params["insufficient_samples"] = json!(true);
                }
                rows.push(CheckRow {
                    ci95: Some(1.96 * (lhs.se * lhs.se + rhs.se * rhs.se).sqrt()),
                    target: Some(0.0),
                    zscore: Some(z),
                    pass: if insufficient { None } else { Some(z.abs() < 3.0) },
                    ..CheckRow::new("cor32", params, d)
                });
            }
        }
        Ok(rows)
    }

    pub fn decomp(&mut self) -> Result<Vec<CheckRow>> {
        let n_max = self.config.n_max.unwrap_or(DEFAULT_N_MAX);
        let groups = self.config.groups;
        let m = self.model.moments;
        let cs = self.correlations()?.clone();
        let mut rows = vec![];
        let weighted = |r: &[f64], sign: i64, upto: i64| -> f64 {
            (1..=upto).map(|n| n as f64 * r[cs.lag_index(sign * n).unwrap()]).sum()
        };
        for (ti, &t) in cs.times.iter().enumerate() {
            // per replica: (J, Σ n c(n), Σ n c(-n), both again at n_max + extra)
            let data: Vec<[f64; 5]> = cs
                .corr
                .iter()
                .zip(&cs.j0)
                .map(|(c, j)| {
                    let r = &c[ti];
                    [
                        j[ti] as f64,
                        weighted(r, 1, n_max),
                        weighted(r, -1, n_max),
                        weighted(r, 1, n_max + TRUNCATION_EXTRA),
                        weighted(r, -1, n_max + TRUNCATION_EXTRA),
                    ]
                })
                .collect();
            let var_j = |d: &[[f64; 5]]| sample_variance(&d.iter().map(|x| x[0]).collect::<Vec<_>>());
            let mean_k = |d: &[[f64; 5]], k: usize| d.iter().map(|x| x[k]).sum::<f64>() / d.len() as f64;
            let line1 = |d: &[[f64; 5]], k: usize| t * m.er - 2.0 * t * m.erstar_w1 + 2.0 * mean_k(d, k);
            let line2 = |d: &[[f64; 5]], k: usize| t * m.er + 2.0 * t * m.erstar_w0 + 2.0 * mean_k(d, k);
            let direct = jackknife(&data, groups, var_j);
            for (name, k, line) in [("decomp_line1", 1usize, &line1 as &dyn Fn(&[[f64; 5]], usize) -> f64), ("decomp_line2", 2, &line2)] {
                let value = line(&data, k);
                let diff = jackknife(&data, groups, |d| line(d, k) - var_j(d));
                let params = json!({"t": t, "n_max": n_max, "direct_var": direct.value, "direct_ci95": direct.ci95()});
                let z = diff.zscore(0.0);
                rows.push(CheckRow {
                    ci95: Some(diff.ci95()),
                    target: Some(direct.value),
                    zscore: Some(z),
                    pass: Some(z.abs() < 3.0),
                    ..CheckRow::new(name, params, value)
                });
                let sum = jackknife(&data, groups, |d| 2.0 * mean_k(d, k));
                let shift_est = jackknife(&data, groups, |d| 2.0 * (mean_k(d, k + 2) - mean_k(d, k)));
                let shift = shift_est.value;
                let mut row = CheckRow::new(
                    "decomp_truncation",
                    json!({"t": t, "line": k, "n_max": n_max, "n_max_extended": n_max + TRUNCATION_EXTRA}),
                    shift.abs(),
                );
                row.ci95 = Some(sum.ci95());
                row.zscore = Some(shift_est.zscore(0.0));
                row.pass = Some(shift.abs() < sum.ci95().max(1e-12));
                rows.push(row);
            }
        }
        Ok(rows)
    }

    pub fn slant(&mut self) -> Result<Vec<CheckRow>> {
        let (speed, var, groups) = (self.model.speed, self.model.moments.var, self.config.groups);
        let cur = self.currents()?;
        let mut rows = vec![];
        for (ti, &t) in cur.times.iter().enumerate() {
            if t <= 0.0 {
                continue;
            }
            let base = cur.column(ti, 0);
            for (vi, &v) in cur.velocities.iter().enumerate().skip(1) {
                let pairs: Vec<(f64, f64)> =
                    base.iter().zip(cur.column(ti, vi)).map(|(&a, b)| (a as f64, b as f64)).collect();
                let est = jackknife(&pairs, groups, |d| {
                    let a: Vec<f64> = d.iter().map(|p| p.0).collect();
                    let b: Vec<f64> = d.iter().map(|p| p.1).collect();
                    (sample_variance(&b) - sample_variance(&a)) / t
                });
                let target = slant_correction(v, speed, var);
                rows.push(CheckRow::compare("slant", json!({"V": v, "t": t}), est, target, None));
            }
        }
        Ok(rows)
    }

    fn theta_pair(&self) -> Result<(f64, f64)> {
        match (self.config.theta1, self.config.theta2) {
            (Some(a), Some(b)) if a < b => Ok((a, b)),
            (Some(_), Some(_)) => Err(EstimatorError::Config("theta1 must be below theta2".into())),
            _ => Err(EstimatorError::Config("theta1 and theta2 are required".into())),
        }
    }

    pub fn sspeed(&mut self) -> Result<Vec<CheckRow>> {
        let (t1, t2) = self.theta_pair()?;
        let lower = self.model.at_theta(t1)?;
        let upper = self.model.at_theta(t2)?;
        let c = two_density_speed(&lower, &upper);
        let flux = upper.moments.er - lower.moments.er;
        let times = self.positive_times();
        let cfg = &self.config;
        let samples = run_two_density(&lower, &upper, cfg.len, &times, cfg.replicas, self.seed(TAG_TWO_DENSITY))?;
        let mut rows = vec![];
        for (ti, &t) in samples.times.iter().enumerate() {
            let params = json!({"theta1": t1, "theta2": t2, "t": t});
            let s: Vec<f64> = samples.s.iter().map(|r| r[ti] as f64 / t).collect();
            rows.push(CheckRow::compare("sspeed", params.clone(), mean_estimate(&s), c, None));
            let j: Vec<f64> = samples.j2nd0.iter().map(|r| r[ti] as f64 / t).collect();
            rows.push(CheckRow::compare("j2nd", params, mean_estimate(&j), flux, None));
            for n in 1..=4 {
                let m = mean_of(&s, |x| x.abs().powi(n));
                let mut row = CheckRow::new("sspeed_moment", json!({"t": t, "n": n}), m.value);
                row.ci95 = Some(m.ci95());
                rows.push(row);
            }
        }
        // c(θ, θ + h) against the characteristic speed on a grid
        let h = 1e-2;
        let mut worst: f64 = 0.0;
        for k in 0..=20 {
            let th = t1 + (t2 - t1) * k as f64 / 20.0;
            let at = self.model.at_theta(th)?;
            let next = self.model.at_theta(th + h)?;
            worst = worst.max((two_density_speed(&at, &next) - at.speed).abs());
        }
        rows.push(CheckRow::exact("sspeed_limit", json!({"theta1": t1, "theta2": t2, "h": h}), worst, 0.0, worst < 1e-2));
        Ok(rows)
    }

    pub fn sandwich(&mut self) -> Result<Vec<CheckRow>> {
        let mode = match self.config.mode.as_deref().unwrap_or("both") {
            "upper" => SandwichMode::Upper,
            "lower" => SandwichMode::Lower,
            "both" => SandwichMode::Both,
            m => return Err(EstimatorError::Config(format!("unknown sandwich mode '{m}'"))),
        };
        let theta = self.model.theta;
        let t1 = self.config.theta1.unwrap_or(theta - 0.5);
        let t2 = self.config.theta2.unwrap_or(theta + 0.5);
        let times = self.positive_times();
        let cfg = &self.config;
        let (times, runs) =
            run_sandwiches(&self.model, mode, t1, t2, cfg.len, &times, cfg.replicas, self.seed(TAG_SANDWICH))?;
        let violations: u64 = runs.iter().map(|r| r.audit.order_violations).sum();
        let events: u64 = runs.iter().map(|r| r.audit.events).sum();
        let observed: usize = runs
            .iter()
            .map(|r| {
                (0..times.len())
                    .filter(|&k| r.s[k].is_some_and(|s| s < r.q[k]) || r.s_prime[k].is_some_and(|s| s > r.q[k]))
                    .count()
            })
            .sum();
        let min_rate = runs.iter().map(|r| r.audit.min_row_rate).fold(f64::INFINITY, f64::min);
        let params = json!({"mode": format!("{mode:?}").to_lowercase(), "theta1": t1, "theta2": t2, "events": events});
        let total = (violations + observed as u64) as f64;
        rows_push_sandwich(times, runs, params, total, min_rate)
    }
}

fn rows_push_sandwich(
    times: Vec<f64>,
    runs: Vec<SandwichRun>,
    params: serde_json::Value,
    violations: f64,
    min_rate: f64,
) -> Result<Vec<CheckRow>> {
    let mut rows = vec![CheckRow::exact("sandwich_order", params.clone(), violations, 0.0, violations == 0.0)];
    if min_rate.is_finite() {
        rows.push(CheckRow::exact("sandwich_min_rate", params, min_rate, 0.0, min_rate >= -1e-12));
    }
    for (k, &t) in times.iter().enumerate() {
        let q = mean_estimate(&runs.iter().map(|r| r.q[k] as f64 / t).collect::<Vec<_>>());
        let s: Vec<f64> = runs.iter().filter_map(|r| r.s[k]).map(|x| x as f64 / t).collect();
        let sp: Vec<f64> = runs.iter().filter_map(|r| r.s_prime[k]).map(|x| x as f64 / t).collect();
        let mut ok = true;
        let mut push = |name: &str, e: Estimate| {
            let mut row = CheckRow::new(name, json!({"t": t}), e.value);
            row.ci95 = Some(e.ci95());
            rows.push(row);
        };
        push("sandwich_q", q);
        if !s.is_empty() {
            let e = mean_estimate(&s);
            ok &= e.value >= q.value;
            push("sandwich_s", e);
        }
        if !sp.is_empty() {
            let e = mean_estimate(&sp);
            ok &= e.value <= q.value;
            push("sandwich_s_prime", e);
        }
        rows.push(CheckRow::exact("sandwich_bracket", json!({"t": t}), q.value, q.value, ok));
    }
    Ok(rows)
}
