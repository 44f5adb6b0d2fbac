//! Threshold coupling of several configurations of a bricklayer-form model.
//!
//! The bricklayer at site i lays on its right (column i, moving a unit from
//! i to i+1) at rate f(ω_i) and on its left (column i-1, moving a unit from
//! i-1 to i) at rate f(-ω_i). Each (site, side) clock runs at the largest
//! rate over all configurations and carries a mark U uniform on [0, rate);
//! a configuration lays when U falls below its own rate. Where a defect and
//! a tagged second class particle share a site, the tagged particle's step is
//! decided by a sub-interval of U chosen so that their order is preserved.

use rand::Rng;

use super::laws::{upper_given_lower, PairLaw};
use super::swarm::{LabeledSwarm, TagStart};
use super::{check_rate, CouplingError};
use crate::dynamics::SumTree;
use crate::equilibrium::{build_marginal, Marginal, DEFAULT_EPS};
use crate::models::{Bricklayer, ModelSpec};
use crate::rng::exp_time;

const MAX_CONFIGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lay {
    pub site: usize,
    pub right: bool,
    pub u: f64,
}

#[derive(Debug, Clone)]
struct BrickEngine {
    b: Bricklayer,
    configs: Vec<Vec<i64>>,
    tree: SumTree,
    now: f64,
    events: u64,
}

impl BrickEngine {
    fn new(b: Bricklayer, configs: Vec<Vec<i64>>) -> Self {
        let len = configs[0].len();
        let mut e = BrickEngine { b, configs, tree: SumTree::new(&vec![0.0; 2 * len]), now: 0.0, events: 0 };
        for i in 0..len {
            e.refresh(i);
        }
        e
    }

    fn len(&self) -> usize {
        self.configs[0].len()
    }

    fn refresh(&mut self, i: usize) {
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for c in &self.configs {
            lo = lo.min(c[i]);
            hi = hi.max(c[i]);
        }
        self.tree.set(2 * i, self.b.right(hi));
        self.tree.set(2 * i + 1, self.b.left(lo));
    }

    /// Next lay before `t_end`, or `None` with the clock moved to `t_end`.
    fn next<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Option<Lay> {
        let total = self.tree.total();
        if total > 0.0 {
            let t = self.now + exp_time(rng, total);
            if t <= t_end {
                self.now = t;
                let (leaf, u) = self.tree.find(rng.gen::<f64>() * total);
                return Some(Lay { site: leaf / 2, right: leaf % 2 == 0, u });
            }
        }
        self.now = self.now.max(t_end);
        None
    }

    fn own_rate(&self, c: usize, lay: &Lay) -> f64 {
        let z = self.configs[c][lay.site];
        if lay.right {
            self.b.right(z)
        } else {
            self.b.left(z)
        }
    }

    fn threshold(&self, lay: &Lay) -> [bool; MAX_CONFIGS] {
        let mut out = [false; MAX_CONFIGS];
        for (c, o) in out.iter_mut().enumerate().take(self.configs.len()) {
            *o = lay.u < self.own_rate(c, lay);
        }
        out
    }

    fn apply(&mut self, lay: &Lay, lays: &[bool; MAX_CONFIGS]) {
        let n = self.len();
        let i = lay.site;
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        for (c, cfg) in self.configs.iter_mut().enumerate() {
            if !lays[c] {
                continue;
            }
            if lay.right {
                cfg[i] -= 1;
                cfg[next] += 1;
            } else {
                cfg[prev] -= 1;
                cfg[i] += 1;
            }
        }
        self.refresh(prev);
        self.refresh(i);
        self.refresh(next);
        self.events += 1;
        if self.events.is_multiple_of(1 << 20) {
            self.tree.rebuild();
        }
    }
}

/// Whether the second class particle of the pair (lower, upper) moves.
fn pair_moves(lay: &Lay, lays: &[bool; MAX_CONFIGS], lower: usize, upper: usize) -> bool {
    if lay.right {
        lays[upper] && !lays[lower]
    } else {
        lays[lower] && !lays[upper]
    }
}

fn pair_inverted(lay: &Lay, lays: &[bool; MAX_CONFIGS], lower: usize, upper: usize) -> bool {
    if lay.right {
        lays[lower] && !lays[upper]
    } else {
        lays[upper] && !lays[lower]
    }
}

/// Which side of the defect the tracked swarm sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Swarm between ω and a denser ζ, tracked particle S >= Q.
    Upper,
    /// Swarm between a sparser η' and ζ' = ω + δ_Q, tracked particle S' <= Q.
    Lower,
}

/// Rates of the four joint outcomes when the defect and the tracked
/// particle share a site holding `lo` and `hi` in the swarm's two
/// configurations. Order: swarm particle other than the tracked one and
/// the defect; defect alone or tracked alone; both; neither (joint lay).
pub fn table_rows(b: &Bricklayer, side: Side, right: bool, lo: i64, hi: i64) -> [f64; 4] {
    let f = |z| b.f(z);
    let d = (hi - lo) as f64;
    match (side, right) {
        (Side::Upper, false) => {
            let dl = f(-lo) - f(-hi);
            [f(-lo - 1) - f(-hi), (f(-lo) - f(-lo - 1)) - dl / d, dl / d, f(-hi)]
        }
        (Side::Upper, true) => {
            let dr = f(hi) - f(lo);
            [(d - 1.0) / d * dr, dr / d - (f(lo + 1) - f(lo)), f(lo + 1) - f(lo), f(lo)]
        }
        (Side::Lower, false) => {
            let dl = f(-lo) - f(-hi);
            [(d - 1.0) / d * dl, dl / d - (f(-hi + 1) - f(-hi)), f(-hi + 1) - f(-hi), f(-hi)]
        }
        (Side::Lower, true) => {
            let dr = f(hi) - f(lo);
            [f(hi - 1) - f(lo), (f(hi) - f(hi - 1)) - dr / d, dr / d, f(lo)]
        }
    }
}

/// Whether the tracked particle rides the step of a second class particle
/// leaving its site, given the mark `u`.
fn tracked_steps(b: &Bricklayer, side: Side, right: bool, lo: i64, hi: i64, u: f64) -> bool {
    let f = |z| b.f(z);
    let d = (hi - lo) as f64;
    // each slice is clamped to nest with the defect's interval; by convexity
    // the clamp only absorbs round-off
    match (side, right) {
        (Side::Upper, true) => u < (f(lo) + (f(hi) - f(lo)) / d).max(f(lo + 1)),
        (Side::Upper, false) => u >= (f(-lo) - (f(-lo) - f(-hi)) / d).max(f(-lo - 1)),
        (Side::Lower, true) => u >= (f(hi) - (f(hi) - f(lo)) / d).max(f(hi - 1)),
        (Side::Lower, false) => u < (f(-hi) + (f(-lo) - f(-hi)) / d).max(f(-hi + 1)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichMode {
    Upper,
    Lower,
    Both,
}

/// Counters collected while a sandwich runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichAudit {
    pub events: u64,
    /// Events at a site shared by the defect and a tracked particle.
    pub coincidences: u64,
    pub order_violations: u64,
    /// Smallest table row rate seen at a coincidence, before round-off clamping.
    pub min_row_rate: f64,
}

impl Default for SandwichAudit {
    fn default() -> Self {
        SandwichAudit { events: 0, coincidences: 0, order_violations: 0, min_row_rate: f64::INFINITY }
    }
}

/// A defect Q in ω together with tracked second class particles S (against
/// a denser ζ) and/or S' (between a sparser η' and ω + δ_Q).
#[derive(Debug, Clone)]
pub struct Sandwich {
    engine: BrickEngine,
    mode: SandwichMode,
    lo: Option<usize>,
    base: usize,
    plus: usize,
    hi: Option<usize>,
    q: LabeledSwarm,
    s: Option<LabeledSwarm>,
    s_prime: Option<LabeledSwarm>,
    audit: SandwichAudit,
}

impl Sandwich {
    /// θ1 < θ < θ2; θ1 is ignored in `Upper` mode and θ2 in `Lower` mode.
    pub fn new<R: Rng + ?Sized>(
        spec: &ModelSpec,
        mode: SandwichMode,
        theta1: f64,
        theta: f64,
        theta2: f64,
        len: usize,
        rng: &mut R,
    ) -> Result<Self, CouplingError> {
        spec.bricklayer().ok_or(CouplingError::Unsupported)?;
        let with_lower = mode != SandwichMode::Upper;
        let with_upper = mode != SandwichMode::Lower;
        if (with_lower && theta1 >= theta) || (with_upper && theta2 <= theta) {
            return Err(CouplingError::NoSecondClassParticles);
        }
        let m = build_marginal(spec, theta, DEFAULT_EPS)?;
        let m1 = if with_lower { Some(build_marginal(spec, theta1, DEFAULT_EPS)?) } else { None };
        let m2 = if with_upper { Some(build_marginal(spec, theta2, DEFAULT_EPS)?) } else { None };
        let (eta, omega, zeta) = initial_triple(&m1, &m, &m2, len, rng)?;
        Self::from_configurations(spec, mode, eta, omega, zeta)
    }

    /// Starts from explicit configurations with the defect at 0.
    pub fn from_configurations(
        spec: &ModelSpec,
        mode: SandwichMode,
        eta: Option<Vec<i64>>,
        omega: Vec<i64>,
        zeta: Option<Vec<i64>>,
    ) -> Result<Self, CouplingError> {
        let b = spec.bricklayer().ok_or(CouplingError::Unsupported)?.clone();
        let mut plus = omega.clone();
        plus[0] += 1;
        let mut configs = Vec::new();
        let lo = eta.map(|e| {
            configs.push(e);
            configs.len() - 1
        });
        configs.push(omega);
        let base = configs.len() - 1;
        configs.push(plus);
        let plus = configs.len() - 1;
        let hi = zeta.map(|z| {
            configs.push(z);
            configs.len() - 1
        });
        if (mode != SandwichMode::Upper) != lo.is_some() || (mode != SandwichMode::Lower) != hi.is_some() {
            return Err(CouplingError::InvalidConfiguration("configurations do not match the mode".into()));
        }
        let q = LabeledSwarm::new(&configs[base], &configs[plus], TagStart::FirstAtOrAfterOrigin)?;
        let s = match hi {
            Some(h) => Some(LabeledSwarm::new(&configs[base], &configs[h], TagStart::FirstAtOrAfterOrigin)?),
            None => None,
        };
        let s_prime = match lo {
            Some(l) => Some(LabeledSwarm::new(&configs[l], &configs[plus], TagStart::LastAtOrBeforeOrigin)?),
            None => None,
        };
        Ok(Sandwich { engine: BrickEngine::new(b, configs), mode, lo, base, plus, hi, q, s, s_prime, audit: SandwichAudit::default() })
    }

    pub fn mode(&self) -> SandwichMode {
        self.mode
    }

    pub fn now(&self) -> f64 {
        self.engine.now
    }

    pub fn q(&self) -> i64 {
        self.q.position().expect("defect is always tagged")
    }

    pub fn s(&self) -> Option<i64> {
        self.s.as_ref().and_then(|s| s.position())
    }

    pub fn s_prime(&self) -> Option<i64> {
        self.s_prime.as_ref().and_then(|s| s.position())
    }

    /// Net flux of the upper swarm through edge (0, 1).
    pub fn j2nd0(&self) -> Option<i64> {
        self.s.as_ref().map(|s| s.j2nd(0))
    }

    pub fn audit(&self) -> SandwichAudit {
        self.audit
    }

    pub fn omega(&self) -> &[i64] {
        &self.engine.configs[self.base]
    }

    /// Label bookkeeping of all tracked swarms agrees with the configurations.
    pub fn swarms_consistent(&self) -> bool {
        let c = &self.engine.configs;
        self.q.consistent(&c[self.base], &c[self.plus])
            && self.s.as_ref().is_none_or(|s| s.consistent(&c[self.base], &c[self.hi.unwrap()]))
            && self.s_prime.as_ref().is_none_or(|s| s.consistent(&c[self.lo.unwrap()], &c[self.plus]))
    }

    fn audit_rows(&mut self, side: Side, lay: &Lay, lo: i64, hi: i64) -> Result<(), CouplingError> {
        let rows = table_rows(&self.engine.b, side, lay.right, lo, hi);
        self.audit.coincidences += 1;
        let scale = rows.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        for r in rows {
            self.audit.min_row_rate = self.audit.min_row_rate.min(r);
            check_rate(r, scale, lay.site, &[lo, hi])?;
        }
        Ok(())
    }

    /// Applies one lay before `t_end`; returns false once the clock reaches it.
    pub fn step<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Result<bool, CouplingError> {
        let Some(lay) = self.engine.next(t_end, rng) else {
            return Ok(false);
        };
        let i = lay.site;
        let lays = self.engine.threshold(&lay);
        let val = |e: &BrickEngine, c: usize| e.configs[c][i];
        let q_pos = self.q();
        let q_here = self.q.tagged_site() == Some(i);

        let q_moves = pair_moves(&lay, &lays, self.base, self.plus);
        let mut s_step = None;
        if let (Some(h), Some(s)) = (self.hi, self.s.as_ref()) {
            if pair_inverted(&lay, &lays, self.base, h) {
                self.audit.order_violations += 1;
            }
            if s.tagged_site() == Some(i) {
                let (lo, hi) = (val(&self.engine, self.base), val(&self.engine, h));
                if q_here && s.position() == Some(q_pos) {
                    self.audit_rows(Side::Upper, &lay, lo, hi)?;
                }
                if pair_moves(&lay, &lays, self.base, h) {
                    s_step = Some(tracked_steps(&self.engine.b, Side::Upper, lay.right, lo, hi, lay.u));
                }
            } else if pair_moves(&lay, &lays, self.base, h) {
                s_step = Some(false);
            }
        }
        let mut sp_step = None;
        if let (Some(l), Some(sp)) = (self.lo, self.s_prime.as_ref()) {
            if pair_inverted(&lay, &lays, l, self.plus) {
                self.audit.order_violations += 1;
            }
            if sp.tagged_site() == Some(i) {
                let (lo, hi) = (val(&self.engine, l), val(&self.engine, self.plus));
                if q_here && sp.position() == Some(q_pos) {
                    self.audit_rows(Side::Lower, &lay, lo, hi)?;
                }
                if pair_moves(&lay, &lays, l, self.plus) {
                    sp_step = Some(tracked_steps(&self.engine.b, Side::Lower, lay.right, lo, hi, lay.u));
                }
            } else if pair_moves(&lay, &lays, l, self.plus) {
                sp_step = Some(false);
            }
        }

        self.engine.apply(&lay, &lays);
        if q_moves {
            self.q.jump(i, lay.right, true);
        }
        if let (Some(carried), Some(s)) = (s_step, self.s.as_mut()) {
            s.jump(i, lay.right, carried);
        }
        if let (Some(carried), Some(sp)) = (sp_step, self.s_prime.as_mut()) {
            sp.jump(i, lay.right, carried);
        }

        self.audit.events += 1;
        let q = self.q();
        if self.s().is_some_and(|s| q > s) {
            self.audit.order_violations += 1;
        }
        if self.s_prime().is_some_and(|sp| sp > q) {
            self.audit.order_violations += 1;
        }
        if !self.local_order_ok(i) {
            self.audit.order_violations += 1;
        }
        Ok(true)
    }

    fn local_order_ok(&self, i: usize) -> bool {
        let n = self.engine.len();
        let c = &self.engine.configs;
        [(i + n - 1) % n, i, (i + 1) % n].iter().all(|&k| {
            let d = c[self.plus][k] - c[self.base][k];
            (0..=1).contains(&d)
                && self.lo.is_none_or(|l| c[l][k] <= c[self.plus][k])
                && self.hi.is_none_or(|h| c[self.base][k] <= c[h][k])
        })
    }

    pub fn run<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Result<(), CouplingError> {
        while self.step(t_end, rng)? {}
        Ok(())
    }
}

type Triple = (Option<Vec<i64>>, Vec<i64>, Option<Vec<i64>>);

/// Draws (η', ω, ζ) so that (η', ω + δ_0) has the shifted law at the origin,
/// (ω, ζ) is the quantile-coupled product pair, and other sites share one
/// quantile.
fn initial_triple<R: Rng + ?Sized>(
    m1: &Option<Marginal>,
    m: &Marginal,
    m2: &Option<Marginal>,
    len: usize,
    rng: &mut R,
) -> Result<Triple, CouplingError> {
    let mut eta = m1.as_ref().map(|_| Vec::with_capacity(len));
    let mut omega = Vec::with_capacity(len);
    let mut zeta = m2.as_ref().map(|_| Vec::with_capacity(len));
    for i in 0..len {
        if i == 0 {
            let w = match m1 {
                Some(m1) => {
                    let (x, y) = PairLaw::quantile_coupling(m1, m)?.shifted(m)?.sample(rng);
                    eta.as_mut().unwrap().push(x);
                    y - 1
                }
                None => m.sample(rng),
            };
            omega.push(w);
            if let Some(m2) = m2 {
                zeta.as_mut().unwrap().push(upper_given_lower(m, m2, w, rng));
            }
        } else {
            let u: f64 = rng.gen();
            if let Some(m1) = m1 {
                eta.as_mut().unwrap().push(m1.quantile(u));
            }
            omega.push(m.quantile(u));
            if let Some(m2) = m2 {
                zeta.as_mut().unwrap().push(m2.quantile(u));
            }
        }
    }
    Ok((eta, omega, zeta))
}

/// Two defects Q in ω and Q' in ω' with ω <= ω' and Q <= Q'.
#[derive(Debug, Clone)]
pub struct MonotoneDefectPair {
    engine: BrickEngine,
    q: LabeledSwarm,
    q_prime: LabeledSwarm,
    pub order_violations: u64,
}

impl MonotoneDefectPair {
    /// Both defects start at the origin.
    pub fn new(spec: &ModelSpec, omega: Vec<i64>, omega_prime: Vec<i64>) -> Result<Self, CouplingError> {
        let b = spec.bricklayer().ok_or(CouplingError::Unsupported)?.clone();
        if omega.iter().zip(&omega_prime).any(|(a, b)| a > b) {
            return Err(CouplingError::StochasticOrderViolation("omega above omega'".into()));
        }
        let mut plus = omega.clone();
        plus[0] += 1;
        let mut plus_prime = omega_prime.clone();
        plus_prime[0] += 1;
        let q = LabeledSwarm::new(&omega, &plus, TagStart::FirstAtOrAfterOrigin)?;
        let q_prime = LabeledSwarm::new(&omega_prime, &plus_prime, TagStart::FirstAtOrAfterOrigin)?;
        Ok(MonotoneDefectPair {
            engine: BrickEngine::new(b, vec![omega, plus, omega_prime, plus_prime]),
            q,
            q_prime,
            order_violations: 0,
        })
    }

    /// Quantile-coupled stationary pair at θ <= θ'.
    pub fn two_density<R: Rng + ?Sized>(spec: &ModelSpec, m: &Marginal, m_prime: &Marginal, len: usize, rng: &mut R) -> Result<Self, CouplingError> {
        let law = PairLaw::quantile_coupling(m, m_prime)?;
        let (a, b): (Vec<i64>, Vec<i64>) = (0..len).map(|_| law.sample(rng)).unzip();
        Self::new(spec, a, b)
    }

    pub fn q(&self) -> i64 {
        self.q.position().unwrap()
    }

    pub fn q_prime(&self) -> i64 {
        self.q_prime.position().unwrap()
    }

    pub fn now(&self) -> f64 {
        self.engine.now
    }

    pub fn step<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Result<bool, CouplingError> {
        let Some(lay) = self.engine.next(t_end, rng) else {
            return Ok(false);
        };
        let i = lay.site;
        let mut lays = self.engine.threshold(&lay);
        let (a, b) = (self.engine.configs[0][i], self.engine.configs[2][i]);
        if self.q() == self.q_prime() && self.q.tagged_site() == Some(i) && a < b {
            let f = |z| self.engine.b.f(z);
            let u = lay.u;
            lays[1] = if lay.right {
                let top = (f(b) + f(a + 1) - f(a)).min(f(b + 1));
                u < f(a) || (f(b) <= u && u < top)
            } else {
                let top = (f(-b) + f(-a - 1) - f(-b - 1)).min(f(-a));
                u < f(-b - 1) || (f(-b) <= u && u < top)
            };
            let extra = if lay.right { f(b) + f(a + 1) - f(a) - f(b + 1) } else { f(-b) + f(-a - 1) - f(-b - 1) - f(-a) };
            check_rate(-extra, f(b + 1).max(f(-a)), i, &[a, b])?;
        }
        if pair_inverted(&lay, &lays, 0, 1) || pair_inverted(&lay, &lays, 2, 3) {
            self.order_violations += 1;
        }
        let q_moves = pair_moves(&lay, &lays, 0, 1);
        let qp_moves = pair_moves(&lay, &lays, 2, 3);
        self.engine.apply(&lay, &lays);
        if q_moves {
            self.q.jump(i, lay.right, true);
        }
        if qp_moves {
            self.q_prime.jump(i, lay.right, true);
        }
        if self.q() > self.q_prime() {
            self.order_violations += 1;
        }
        Ok(true)
    }

    pub fn run<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Result<(), CouplingError> {
        while self.step(t_end, rng)? {}
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::*;
    use crate::rng::replica_rng;

    fn bl() -> ModelSpec {
        builtin(Family::BL, &ModelParams { beta: Some(0.5), ..Default::default() }).unwrap()
    }

    #[test]
    fn rows_sum_to_total_rate() {
        let s = bl();
        let b = s.bricklayer().unwrap();
        for lo in -3..3 {
            for hi in lo + 1..lo + 4 {
                let r = table_rows(b, Side::Upper, true, lo, hi);
                assert!((r.iter().sum::<f64>() - b.f(hi)).abs() < 1e-12);
                let r = table_rows(b, Side::Upper, false, lo, hi);
                assert!((r.iter().sum::<f64>() - b.f(-lo)).abs() < 1e-12);
                let r = table_rows(b, Side::Lower, true, lo, hi);
                assert!((r.iter().sum::<f64>() - b.f(hi)).abs() < 1e-12);
                let r = table_rows(b, Side::Lower, false, lo, hi);
                assert!((r.iter().sum::<f64>() - b.f(-lo)).abs() < 1e-12);
                for side in [Side::Upper, Side::Lower] {
                    for right in [true, false] {
                        assert!(table_rows(b, side, right, lo, hi).iter().all(|r| *r > -1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn concave_profile_gives_negative_rows() {
        let s = zero_range(Profile::Table { values: vec![2.0, 3.0, 3.5] }).unwrap();
        let b = s.bricklayer().unwrap();
        let r = table_rows(b, Side::Upper, true, 1, 3);
        assert!(r.iter().any(|x| *x < 0.0));
    }

    #[test]
    fn tracked_slice_has_probability_one_over_d() {
        let s = bl();
        let b = s.bricklayer().unwrap();
        let (lo, hi) = (-1, 2);
        let n = 300_000;
        for (side, right) in [(Side::Upper, true), (Side::Upper, false), (Side::Lower, true), (Side::Lower, false)] {
            let (a, c) = if right { (b.f(lo), b.f(hi)) } else { (b.f(-hi), b.f(-lo)) };
            let hits = (0..n)
                .filter(|k| tracked_steps(b, side, right, lo, hi, a + (c - a) * (*k as f64 + 0.5) / n as f64))
                .count();
            assert!((hits as f64 / n as f64 - 1.0 / 3.0).abs() < 1e-4, "{side:?} {right}");
        }
    }

    #[test]
    fn sandwich_short_runs_stay_ordered() {
        let spec = bl();
        for mode in [SandwichMode::Upper, SandwichMode::Lower, SandwichMode::Both] {
            for r in 0..20 {
                let mut rng = replica_rng(3, r);
                let mut sw = Sandwich::new(&spec, mode, -0.4, 0.0, 0.4, 64, &mut rng).unwrap();
                while sw.step(5.0, &mut rng).unwrap() {
                    assert!(sw.swarms_consistent());
                }
                assert_eq!(sw.audit().order_violations, 0);
            }
        }
    }

    #[test]
    fn sandwich_rejects_non_bricklayer() {
        let mut rng = replica_rng(0, 0);
        let e = Sandwich::new(&simple_exclusion(), SandwichMode::Upper, -1.0, 0.0, 1.0, 10, &mut rng);
        assert!(matches!(e, Err(CouplingError::Unsupported)));
        let e = Sandwich::new(&bl(), SandwichMode::Upper, -1.0, 0.0, 0.0, 10, &mut rng);
        assert!(matches!(e, Err(CouplingError::NoSecondClassParticles)));
    }

    #[test]
    fn monotone_defects_keep_order() {
        let spec = builtin(Family::ZR, &ModelParams::default()).unwrap();
        let m = build_marginal(&spec, -0.5, DEFAULT_EPS).unwrap();
        let mp = build_marginal(&spec, 0.5, DEFAULT_EPS).unwrap();
        for r in 0..20 {
            let mut rng = replica_rng(8, r);
            let mut p = MonotoneDefectPair::two_density(&spec, &m, &mp, 80, &mut rng).unwrap();
            p.run(10.0, &mut rng).unwrap();
            assert_eq!(p.order_violations, 0);
            assert!(p.q() <= p.q_prime());
        }
    }
}
