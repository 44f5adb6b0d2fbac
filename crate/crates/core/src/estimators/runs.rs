//! Replica runners. Each returns raw per-replica samples in replica order.

use crate::coupling::{two_density_init, CoupledState, OriginLaw, Sandwich, SandwichAudit, SandwichMode, TagStart};
use crate::dynamics::{CurrentObserver, Observer, ProfileObserver, RingState};
use crate::equilibrium::sample_configuration;
use crate::rng::run_replicas;

use super::{ResolvedModel, Result};

fn sorted(times: &[f64]) -> Vec<f64> {
    let mut t = times.to_vec();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup();
    t
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// J^(V)(t) per replica, indexed `[replica][time][velocity]`.
#[derive(Debug, Clone)]
pub struct CurrentSamples {
    pub times: Vec<f64>,
    pub velocities: Vec<f64>,
    pub j: Vec<Vec<Vec<i64>>>,
}

impl CurrentSamples {
    pub fn column(&self, ti: usize, vi: usize) -> Vec<i64> {
        self.j.iter().map(|r| r[ti][vi]).collect()
    }
}

pub fn run_currents(
    model: &ResolvedModel,
    len: usize,
    times: &[f64],
    velocities: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<CurrentSamples> {
    let times = sorted(times);
    CurrentObserver::new(&times, velocities, len)?;
    let t_end = times.last().copied().unwrap_or(0.0);
    let j = collect(run_replicas(replicas, seed, |_, rng| {
        let mut state = RingState::init(&model.spec, &model.marginal, len, rng);
        let mut obs = CurrentObserver::new(&times, velocities, len)?;
        state.run_until(t_end, &mut [&mut obs as &mut dyn Observer], rng);
        Ok(obs.records)
    }))?;
    Ok(CurrentSamples { times, velocities: velocities.to_vec(), j })
}

/// Translation-averaged centered correlations (1/L) Σ_i ω̃_i(0) ω̃_{i+n}(t)
/// and J^(0)(t), per replica.
#[derive(Debug, Clone)]
pub struct CorrelationSamples {
    pub times: Vec<f64>,
    pub lags: Vec<i64>,
    /// `[replica][time][lag]`
    pub corr: Vec<Vec<Vec<f64>>>,
    /// `[replica][time]`
    pub j0: Vec<Vec<i64>>,
}

impl CorrelationSamples {
    pub fn lag_index(&self, n: i64) -> Option<usize> {
        self.lags.iter().position(|&l| l == n)
    }

    pub fn column(&self, ti: usize, li: usize) -> Vec<f64> {
        self.corr.iter().map(|r| r[ti][li]).collect()
    }
}

pub fn translation_correlation(w0: &[i64], wt: &[i64], rho: f64, n: i64) -> f64 {
    let len = w0.len();
    let shift = n.rem_euclid(len as i64) as usize;
    let mut acc = 0.0;
    for i in 0..len {
        acc += (w0[i] as f64 - rho) * (wt[(i + shift) % len] as f64 - rho);
    }
    acc / len as f64
}

pub fn run_correlations(
    model: &ResolvedModel,
    len: usize,
    times: &[f64],
    lags: &[i64],
    replicas: usize,
    seed: u64,
) -> Result<CorrelationSamples> {
    let times = sorted(times);
    let t_end = times.last().copied().unwrap_or(0.0);
    let rho = model.moments.rho;
    let rows = collect(run_replicas(replicas, seed, |_, rng| {
        let mut state = RingState::init(&model.spec, &model.marginal, len, rng);
        let mut prof = ProfileObserver::new(&times);
        let mut cur = CurrentObserver::new(&times, &[0.0], len)?;
        state.run_until(t_end, &mut [&mut prof as &mut dyn Observer, &mut cur], rng);
        let w0 = state.omega0();
        let corr: Vec<Vec<f64>> = prof
            .snapshots
            .iter()
            .map(|wt| lags.iter().map(|&n| translation_correlation(w0, wt, rho, n)).collect())
            .collect();
        let j0: Vec<i64> = cur.records.iter().map(|r| r[0]).collect();
        Ok((corr, j0))
    }))?;
    let (corr, j0) = rows.into_iter().unzip();
    Ok(CorrelationSamples { times, lags: lags.to_vec(), corr, j0 })
}

/// One defect run started from ω + δ_0 with ω drawn from the product law.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectRun {
    /// ω_0(0) as drawn, before any conditioning.
    pub omega0: i64,
    /// Q at each time; `None` when ω_0(0) sat at the top of the support and
    /// the run was skipped.
    pub q: Option<Vec<i64>>,
}

/// Defect runs. With `condition` set, an origin at the top of the support
/// is redrawn below it so every replica carries a defect.
pub fn run_defects(
    model: &ResolvedModel,
    len: usize,
    times: &[f64],
    replicas: usize,
    seed: u64,
    condition: bool,
) -> Result<(Vec<f64>, Vec<DefectRun>)> {
    let times = sorted(times);
    let max = model.spec.support().omega_max;
    if let Some(m) = max {
        if model.marginal.cdf_at(m - 1) <= 0.0 {
            return Err(super::EstimatorError::Config("no room for a defect at this density".into()));
        }
    }
    let runs = collect(run_replicas(replicas, seed, |_, rng| {
        let mut omega = sample_configuration(&model.marginal, len, rng);
        let omega0 = omega[0];
        if Some(omega0) == max {
            if !condition {
                return Ok(DefectRun { omega0, q: None });
            }
            while Some(omega[0]) == max {
                omega[0] = model.marginal.sample(rng);
            }
        }
        let mut plus = omega.clone();
        plus[0] += 1;
        let mut state = CoupledState::new(&model.spec, omega, plus, TagStart::FirstAtOrAfterOrigin)?;
        let mut q = Vec::with_capacity(times.len());
        for &t in &times {
            state.advance(t, rng)?;
            q.push(state.swarm().position().expect("defect is tagged"));
        }
        Ok(DefectRun { omega0, q: Some(q) })
    }))?;
    Ok((times, runs))
}

/// Two-density coupling η ≤ ζ at θ1 < θ2: the tagged second class particle S
/// (Palm origin) and the second class flux through edge (0, 1) (product
/// origin), at each time.
#[derive(Debug, Clone)]
pub struct TwoDensitySamples {
    pub times: Vec<f64>,
    /// `[replica][time]`
    pub s: Vec<Vec<i64>>,
    pub j2nd0: Vec<Vec<i64>>,
}

pub fn run_two_density(
    lower: &ResolvedModel,
    upper: &ResolvedModel,
    len: usize,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<TwoDensitySamples> {
    let times = sorted(times);
    let spec = &lower.spec;
    let rows = collect(run_replicas(replicas, seed, |_, rng| {
        let mut palm = two_density_init(spec, &lower.marginal, &upper.marginal, len, OriginLaw::Palm, rng)?;
        let mut product = two_density_init(spec, &lower.marginal, &upper.marginal, len, OriginLaw::Product, rng)?;
        let mut s = Vec::with_capacity(times.len());
        let mut j = Vec::with_capacity(times.len());
        for &t in &times {
            palm.advance(t, rng)?;
            product.advance(t, rng)?;
            s.push(palm.swarm().position().expect("tagged"));
            j.push(product.swarm().j2nd(0));
        }
        Ok((s, j))
    }))?;
    let (s, j2nd0) = rows.into_iter().unzip();
    Ok(TwoDensitySamples { times, s, j2nd0 })
}

/// Positions of S', Q and S at each time plus the event audit of one run.
#[derive(Debug, Clone)]
pub struct SandwichRun {
    pub q: Vec<i64>,
    pub s: Vec<Option<i64>>,
    pub s_prime: Vec<Option<i64>>,
    pub audit: SandwichAudit,
}

#[allow(clippy::too_many_arguments)]
pub fn run_sandwiches(
    model: &ResolvedModel,
    mode: SandwichMode,
    theta1: f64,
    theta2: f64,
    len: usize,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<SandwichRun>)> {
    let times = sorted(times);
    let runs = collect(run_replicas(replicas, seed, |_, rng| {
        let mut sw = Sandwich::new(&model.spec, mode, theta1, model.theta, theta2, len, rng)?;
        let mut run = SandwichRun { q: vec![], s: vec![], s_prime: vec![], audit: SandwichAudit::default() };
        for &t in &times {
            sw.run(t, rng)?;
            run.q.push(sw.q());
            run.s.push(sw.s());
            run.s_prime.push(sw.s_prime());
        }
        run.audit = sw.audit();
        Ok(run)
    }))?;
    Ok((times, runs))
}

/// Outcome of a long basic-coupling run checked after every event.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SoakReport {
    pub events: u64,
    pub order_violations: u64,
    pub discrepancy_drift: u64,
    pub label_errors: u64,
    /// Set when a channel rate went negative; the run stops there.
    pub negative_rate: Option<String>,
}

impl SoakReport {
    pub fn clean(&self) -> bool {
        self.order_violations == 0 && self.discrepancy_drift == 0 && self.label_errors == 0 && self.negative_rate.is_none()
    }
}

/// Runs the basic coupling of two product configurations at θ1 <= θ2 for a
/// fixed number of events. With θ1 = θ2 the upper one carries a single
/// extra particle at the origin.
pub fn coupling_soak(
    lower: &ResolvedModel,
    upper: &ResolvedModel,
    len: usize,
    events: u64,
    seed: u64,
) -> Result<SoakReport> {
    let mut rng = crate::rng::replica_rng(seed, 0);
    let mut state = if lower.theta == upper.theta {
        crate::coupling::attach_defect(&lower.spec, &lower.marginal, len, &mut rng)?.0
    } else {
        two_density_init(&lower.spec, &lower.marginal, &upper.marginal, len, OriginLaw::Product, &mut rng)?
    };
    let d0 = state.discrepancy();
    let mut rep = SoakReport::default();
    for _ in 0..events {
        match state.basic_step(&mut rng) {
            Ok(_) => {}
            Err(crate::coupling::CouplingError::NegativeChannelRate { at, values, rate }) => {
                rep.negative_rate = Some(format!("rate {rate} at {at} for {values:?}"));
                break;
            }
            Err(e) => return Err(e.into()),
        }
        rep.events += 1;
        if !state.is_ordered() {
            rep.order_violations += 1;
        }
        if state.discrepancy() != d0 {
            rep.discrepancy_drift += 1;
        }
        if rep.events % 1024 == 0 && !state.swarm().consistent(state.lower(), state.upper()) {
            rep.label_errors += 1;
        }
    }
    Ok(rep)
}
