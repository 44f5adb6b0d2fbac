//! Exact computations on small rings by enumerating the full state space.
//!
//! Infinite supports are cut to [-cap, cap]; transitions leaving the cut
//! are dropped and their total rate is reported as leak.

use rand::Rng;
use thiserror::Error;

use crate::dynamics::{DynamicsError, RingState};
use crate::equilibrium::{build_marginal, EquilibriumError, FINE_EPS};
use crate::models::ModelSpec;
use crate::rng::{replica_rng, run_replicas};
use crate::stats::total_variation;

pub const MAX_STATES: usize = 200_000;
pub const DEFAULT_CAP: i64 = 8;
const POISSON_TAIL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("state space has {size} states, above the limit {limit}")]
    SpaceTooLarge { size: f64, limit: usize },
    #[error("start configuration is not in the state space")]
    UnknownState,
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// All configurations of a ring of `len` sites over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub len: usize,
    pub alphabet: Vec<i64>,
    pub size: usize,
}

impl StateSpace {
    pub fn new(spec: &ModelSpec, len: usize, cap: i64) -> Result<Self, OracleError> {
        let (lo, hi) = spec.support().clip(cap);
        let alphabet: Vec<i64> = (lo..=hi).collect();
        let size = (alphabet.len() as f64).powi(len as i32);
        if size > MAX_STATES as f64 {
            return Err(OracleError::SpaceTooLarge { size, limit: MAX_STATES });
        }
        Ok(StateSpace { len, alphabet, size: size as usize })
    }

    fn base(&self) -> usize {
        self.alphabet.len()
    }

    /// Site 0 is the most significant digit.
    pub fn index(&self, config: &[i64]) -> Option<usize> {
        let lo = self.alphabet[0];
        let mut idx = 0usize;
        for &z in config {
            let d = z - lo;
            if d < 0 || d >= self.base() as i64 {
                return None;
            }
            idx = idx * self.base() + d as usize;
        }
        Some(idx)
    }

    pub fn decode(&self, mut idx: usize, out: &mut [i64]) {
        for k in (0..self.len).rev() {
            out[k] = self.alphabet[0] + (idx % self.base()) as i64;
            idx /= self.base();
        }
    }

    pub fn config(&self, idx: usize) -> Vec<i64> {
        let mut v = vec![0; self.len];
        self.decode(idx, &mut v);
        v
    }
}

/// Sparse generator: off-diagonal entries in CSR form plus the diagonal.
#[derive(Debug, Clone)]
pub struct Generator {
    pub space: StateSpace,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pub diag: Vec<f64>,
    /// Rate of dropped transitions out of each state.
    pub leak: Vec<f64>,
}

impl Generator {
    fn build(spec: &ModelSpec, len: usize, cap: i64, reversed: bool) -> Result<Self, OracleError> {
        let space = StateSpace::new(spec, len, cap)?;
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (vec![], vec![]);
        let mut diag = vec![0.0; space.size];
        let mut leak = vec![0.0; space.size];
        let mut cfg = vec![0; len];
        for s in 0..space.size {
            space.decode(s, &mut cfg);
            for i in 0..len {
                let j = (i + 1) % len;
                // forward: unit from i to j; reversed: unit from j to i
                let (rate, di, dj) = if reversed {
                    (spec.reversed_rate(cfg[i], cfg[j]), 1, -1)
                } else {
                    (spec.rate(cfg[i], cfg[j]), -1, 1)
                };
                if rate <= 0.0 {
                    continue;
                }
                cfg[i] += di;
                cfg[j] += dj;
                match space.index(&cfg) {
                    Some(t) => {
                        cols.push(t);
                        vals.push(rate);
                        diag[s] -= rate;
                    }
                    None => leak[s] += rate,
                }
                cfg[i] -= di;
                cfg[j] -= dj;
            }
            row_ptr.push(cols.len());
        }
        Ok(Generator { space, row_ptr, cols, vals, diag, leak })
    }

    /// (Q v)(s) = Σ_t Q(s, t) v(t)
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.space.size)
            .map(|s| {
                let mut acc = self.diag[s] * v[s];
                for k in self.row_ptr[s]..self.row_ptr[s + 1] {
                    acc += self.vals[k] * v[self.cols[k]];
                }
                acc
            })
            .collect()
    }

    /// (pᵀ Q)(t) = Σ_s p(s) Q(s, t)
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.diag.iter().zip(p).map(|(d, x)| d * x).collect();
        #[allow(clippy::needless_range_loop)]
        for s in 0..self.space.size {
            for k in self.row_ptr[s]..self.row_ptr[s + 1] {
                out[self.cols[k]] += p[s] * self.vals[k];
            }
        }
        out
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.space.size).flat_map(move |s| (self.row_ptr[s]..self.row_ptr[s + 1]).map(move |k| (s, self.cols[k], self.vals[k])))
    }

    fn uniform_rate(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |a, d| a.max(-d)).max(1e-300)
    }

    /// e^{tQ} v by uniformization.
    pub fn expm_apply(&self, v: &[f64], t: f64) -> Vec<f64> {
        self.uniformize(v, t, false)
    }

    /// pᵀ e^{tQ} by uniformization.
    pub fn expm_apply_transpose(&self, p: &[f64], t: f64) -> Vec<f64> {
        self.uniformize(p, t, true)
    }

    fn uniformize(&self, v: &[f64], t: f64, transpose: bool) -> Vec<f64> {
        let lam = self.uniform_rate();
        let a = lam * t;
        let mut out = vec![0.0; v.len()];
        let mut cur = v.to_vec();
        let mut mass = 0.0;
        let mut k = 0u64;
        loop {
            let w = (-a + k as f64 * a.max(1e-300).ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0)).exp();
            let w = if a == 0.0 { if k == 0 { 1.0 } else { 0.0 } } else { w };
            for (o, c) in out.iter_mut().zip(&cur) {
                *o += w * c;
            }
            mass += w;
            if (1.0 - mass < POISSON_TAIL && k as f64 >= a) || k > 100_000 {
                break;
            }
            let q = if transpose { self.apply_transpose(&cur) } else { self.apply(&cur) };
            for (c, qv) in cur.iter_mut().zip(q) {
                *c += qv / lam;
            }
            k += 1;
        }
        out
    }
}

pub fn build_generator(spec: &ModelSpec, len: usize, cap: i64) -> Result<Generator, OracleError> {
    Generator::build(spec, len, cap, false)
}

/// Generator of the reversed dynamics: rate r*(ω_i, ω_{i+1}) moves a unit
/// from i+1 to i.
pub fn build_reversed_generator(spec: &ModelSpec, len: usize, cap: i64) -> Result<Generator, OracleError> {
    Generator::build(spec, len, cap, true)
}

/// Product of the one-site marginal over the ring, restricted to the alphabet.
pub fn product_measure(spec: &ModelSpec, theta: f64, space: &StateSpace) -> Result<Vec<f64>, OracleError> {
    let m = build_marginal(spec, theta, FINE_EPS)?;
    let w: Vec<f64> = space.alphabet.iter().map(|z| m.pmf(*z)).collect();
    let z: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|x| x / z).collect();
    let lo = space.alphabet[0];
    let mut cfg = vec![0; space.len];
    Ok((0..space.size)
        .map(|s| {
            space.decode(s, &mut cfg);
            cfg.iter().map(|c| w[(c - lo) as usize]).product()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    /// max_t |(μᵀQ)(t)|
    pub residual: f64,
    /// Σ_s μ(s) leak(s)
    pub leak: f64,
    pub states: usize,
}

pub fn stationarity_residual(spec: &ModelSpec, theta: f64, len: usize, cap: i64) -> Result<StationarityReport, OracleError> {
    let g = build_generator(spec, len, cap)?;
    let mu = product_measure(spec, theta, &g.space)?;
    let r = g.apply_transpose(&mu);
    Ok(StationarityReport {
        residual: r.iter().fold(0.0f64, |a, x| a.max(x.abs())),
        leak: mu.iter().zip(&g.leak).map(|(m, l)| m * l).sum(),
        states: g.space.size,
    })
}

/// Off-diagonal entries that change the total Σ ω.
pub fn sector_violations(g: &Generator) -> usize {
    g.entries()
        .filter(|(s, t, _)| g.space.config(*s).iter().sum::<i64>() != g.space.config(*t).iter().sum::<i64>())
        .count()
}

/// E[ω̃_0(0) ω̃_n(t)] under the stationary product measure on the ring.
pub fn exact_correlation(spec: &ModelSpec, theta: f64, len: usize, n: i64, t: f64, cap: i64) -> Result<f64, OracleError> {
    let g = build_generator(spec, len, cap)?;
    let mu = product_measure(spec, theta, &g.space)?;
    let mut cfg = vec![0; len];
    let mut first = vec![0.0; g.space.size];
    let mut site_n = vec![0.0; g.space.size];
    let k = n.rem_euclid(len as i64) as usize;
    for s in 0..g.space.size {
        g.space.decode(s, &mut cfg);
        first[s] = cfg[0] as f64;
        site_n[s] = cfg[k] as f64;
    }
    let rho: f64 = mu.iter().zip(&first).map(|(m, x)| m * x).sum();
    let centered: Vec<f64> = site_n.iter().map(|x| x - rho).collect();
    let evolved = g.expm_apply(&centered, t);
    Ok((0..g.space.size).map(|s| mu[s] * (first[s] - rho) * evolved[s]).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    /// max over trials of |E(ψ Lφ) - E(φ L*ψ)|
    pub max_discrepancy: f64,
    /// min over trials of -E(φ Lφ)
    pub min_dirichlet: f64,
    pub trials: usize,
}

/// Checks that the reversed-rate generator is the adjoint of L in L²(μ).
pub fn adjoint_check<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: f64,
    len: usize,
    cap: i64,
    trials: usize,
    rng: &mut R,
) -> Result<AdjointReport, OracleError> {
    let g = build_generator(spec, len, cap)?;
    let gs = build_reversed_generator(spec, len, cap)?;
    let mu = product_measure(spec, theta, &g.space)?;
    let dot = |a: &[f64], b: &[f64]| -> f64 { mu.iter().zip(a).zip(b).map(|((m, x), y)| m * x * y).sum() };
    let mut rep = AdjointReport { max_discrepancy: 0.0, min_dirichlet: f64::INFINITY, trials };
    for _ in 0..trials {
        let psi: Vec<f64> = (0..g.space.size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..g.space.size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lphi = g.apply(&phi);
        let lspsi = gs.apply(&psi);
        let d = (dot(&psi, &lphi) - dot(&phi, &lspsi)).abs();
        rep.max_discrepancy = rep.max_discrepancy.max(d);
        rep.min_dirichlet = rep.min_dirichlet.min(-dot(&phi, &lphi));
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallTimeReport {
    pub tv: f64,
    pub replicas: usize,
    pub exact: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Compares the simulator's law at time `eps` from `start` with the exact row
/// of e^{eps Q}.
pub fn simulator_smalltime_check(
    spec: &ModelSpec,
    start: &[i64],
    eps: f64,
    replicas: usize,
    seed: u64,
) -> Result<SmallTimeReport, OracleError> {
    let g = build_generator(spec, start.len(), DEFAULT_CAP)?;
    let s0 = g.space.index(start).ok_or(OracleError::UnknownState)?;
    let mut p = vec![0.0; g.space.size];
    p[s0] = 1.0;
    let exact = g.expm_apply_transpose(&p, eps);
    let start_state = RingState::from_configuration(spec, start.to_vec())?;
    let ends = run_replicas(replicas, seed, |_, rng| {
        let mut s = start_state.clone();
        s.advance(eps, rng);
        g.space.index(s.omega())
    });
    let mut counts = vec![0u64; g.space.size];
    for e in ends.into_iter().flatten() {
        counts[e] += 1;
    }
    Ok(SmallTimeReport { tv: total_variation(&counts, &exact), replicas, exact, counts })
}

/// Random ψ, φ helper for callers that want their own stream.
pub fn adjoint_check_seeded(spec: &ModelSpec, theta: f64, len: usize, cap: i64, trials: usize, seed: u64) -> Result<AdjointReport, OracleError> {
    adjoint_check(spec, theta, len, cap, trials, &mut replica_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::*;

    #[test]
    fn index_roundtrip() {
        let spec = builtin(Family::PAExclusion, &ModelParams { c: Some(0.3), a: Some(1.0), ..Default::default() }).unwrap();
        let sp = StateSpace::new(&spec, 4, 8).unwrap();
        assert_eq!(sp.size, 81);
        for s in 0..sp.size {
            assert_eq!(sp.index(&sp.config(s)), Some(s));
        }
        assert!(StateSpace::new(&builtin(Family::ZR, &ModelParams::default()).unwrap(), 6, 8).is_err());
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let spec = simple_exclusion();
        let g = build_generator(&spec, 6, 8).unwrap();
        let ones = vec![1.0; g.space.size];
        assert!(g.apply(&ones).iter().all(|x| x.abs() < 1e-14));
        assert_eq!(sector_violations(&g), 0);
        assert!(g.leak.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn truncated_generator_reports_leak() {
        let spec = builtin(Family::ZR, &ModelParams::default()).unwrap();
        let g = build_generator(&spec, 3, 3).unwrap();
        assert!(g.leak.iter().any(|l| *l > 0.0));
        let ones = vec![1.0; g.space.size];
        assert!(g.apply(&ones).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn expm_matches_two_state_chain() {
        // SE on 2 sites with one particle: the particle hops at rate 1 each way
        let spec = simple_exclusion();
        let g = build_generator(&spec, 2, 8).unwrap();
        let a = g.space.index(&[1, 0]).unwrap();
        let b = g.space.index(&[0, 1]).unwrap();
        let mut p = vec![0.0; g.space.size];
        p[a] = 1.0;
        let t = 0.7;
        let q = g.expm_apply_transpose(&p, t);
        let stay = 0.5 * (1.0 + (-2.0 * t).exp());
        assert!((q[a] - stay).abs() < 1e-10);
        assert!((q[b] - (1.0 - stay)).abs() < 1e-10);
    }

    #[test]
    fn se_product_measure_is_stationary() {
        let theta = (0.3f64 / 0.7).ln();
        let rep = stationarity_residual(&simple_exclusion(), theta, 6, 8).unwrap();
        assert!(rep.residual < 1e-12);
        assert_eq!(rep.leak, 0.0);
    }

    #[test]
    fn equal_time_correlation_is_variance_on_site() {
        let theta = (0.3f64 / 0.7).ln();
        let c = exact_correlation(&simple_exclusion(), theta, 6, 0, 0.0, 8).unwrap();
        assert!((c - 0.21).abs() < 1e-12);
        let c = exact_correlation(&simple_exclusion(), theta, 6, 1, 0.0, 8).unwrap();
        assert!(c.abs() < 1e-12);
    }
}
