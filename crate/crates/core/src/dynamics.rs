//! Continuous-time simulation of a deposition model on a ring of L sites.
//!
//! Column i sits over the edge (i, i+1). Laying a brick there moves one unit
//! of ω from site i to site i+1 at rate r(ω_i, ω_{i+1}).

use rand::Rng;
use thiserror::Error;

use crate::equilibrium::{sample_configuration, Marginal};
use crate::models::ModelSpec;
use crate::rng::exp_time;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("total rate is zero; no event can occur")]
    FrozenState,
    #[error("window |V|t = {span} reaches half the ring length {len}")]
    WindowWrap { span: f64, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
}

const REBUILD_EVERY: u64 = 1 << 20;

/// Binary sum tree over nonnegative leaf rates.
///
/// Every update recomputes ancestors from their children, so the root is
/// always the exact floating-point sum of the current leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    size: usize,
    len: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: &[f64]) -> Self {
        let size = leaves.len().next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + leaves.len()].copy_from_slice(leaves);
        let mut t = SumTree { size, len: leaves.len(), nodes };
        t.rebuild();
        t
    }

    pub fn rebuild(&mut self) {
        for i in (1..self.size).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        let mut k = self.size + i;
        self.nodes[k] = v;
        while k > 1 {
            k >>= 1;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.size + i]
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Leaf whose cumulative interval contains `u`, with 0 <= u < total.
    /// Returns the offset of `u` inside that leaf as well. Never lands on a
    /// zero-rate leaf while the total is positive.
    #[inline]
    pub fn find(&self, mut u: f64) -> (usize, f64) {
        let mut k = 1;
        while k < self.size {
            let l = self.nodes[2 * k];
            let r = self.nodes[2 * k + 1];
            if u < l || r <= 0.0 {
                k *= 2;
            } else {
                u -= l;
                k = 2 * k + 1;
            }
        }
        let leaf = self.nodes[k];
        (k - self.size, u.min(leaf * (1.0 - f64::EPSILON)).max(0.0))
    }
}

/// One applied deposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub edge: usize,
}

#[derive(Debug, Clone)]
pub struct RingState {
    spec: ModelSpec,
    omega: Vec<i64>,
    omega0: Vec<i64>,
    bricks: Vec<i64>,
    tree: SumTree,
    now: f64,
    events: u64,
}

impl RingState {
    /// Starts from an i.i.d. draw of the marginal.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, marginal: &Marginal, len: usize, rng: &mut R) -> Self {
        let omega = sample_configuration(marginal, len, rng);
        Self::from_configuration(spec, omega).expect("marginal draws lie in the support")
    }

    pub fn from_configuration(spec: &ModelSpec, omega: Vec<i64>) -> Result<Self, DynamicsError> {
        let len = omega.len();
        if len < 2 {
            return Err(DynamicsError::InvalidConfiguration("ring needs at least 2 sites".into()));
        }
        if let Some(z) = omega.iter().find(|z| !spec.support().contains(**z)) {
            return Err(DynamicsError::InvalidConfiguration(format!("value {z} outside support")));
        }
        let rates: Vec<f64> = (0..len).map(|i| spec.rate(omega[i], omega[(i + 1) % len])).collect();
        Ok(RingState {
            spec: spec.clone(),
            omega0: omega.clone(),
            omega,
            bricks: vec![0; len],
            tree: SumTree::new(&rates),
            now: 0.0,
            events: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[i64] {
        &self.omega
    }

    pub fn omega0(&self) -> &[i64] {
        &self.omega0
    }

    pub fn bricks(&self) -> &[i64] {
        &self.bricks
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn edge_rate(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// True when every stored edge rate equals a fresh evaluation.
    pub fn rates_consistent(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| self.tree.get(i) == self.spec.rate(self.omega[i], self.omega[(i + 1) % n]))
    }

    #[inline]
    fn refresh(&mut self, i: usize) {
        let n = self.omega.len();
        let j = if i + 1 == n { 0 } else { i + 1 };
        self.tree.set(i, self.spec.rate(self.omega[i], self.omega[j]));
    }

    fn apply(&mut self, edge: usize) {
        let n = self.omega.len();
        let next = if edge + 1 == n { 0 } else { edge + 1 };
        self.omega[edge] -= 1;
        self.omega[next] += 1;
        self.bricks[edge] += 1;
        self.refresh(if edge == 0 { n - 1 } else { edge - 1 });
        self.refresh(edge);
        self.refresh(next);
        self.events += 1;
        if self.events.is_multiple_of(REBUILD_EVERY) {
            self.tree.rebuild();
        }
    }

    fn pick_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.tree.total();
        self.tree.find(rng.gen::<f64>() * total).0
    }

    /// Applies the next event.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Event, DynamicsError> {
        let total = self.tree.total();
        if total <= 0.0 {
            return Err(DynamicsError::FrozenState);
        }
        self.now += exp_time(rng, total);
        let edge = self.pick_edge(rng);
        self.apply(edge);
        Ok(Event { time: self.now, edge })
    }

    /// Runs events up to time `t_end` and leaves the clock at `t_end`.
    pub fn advance<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) {
        loop {
            let total = self.tree.total();
            if total <= 0.0 {
                break;
            }
            let t = self.now + exp_time(rng, total);
            if t > t_end {
                break;
            }
            self.now = t;
            let edge = self.pick_edge(rng);
            self.apply(edge);
        }
        self.now = self.now.max(t_end);
    }

    /// Like [`advance`](Self::advance), firing observers at their requested times.
    pub fn run_until<R: Rng + ?Sized>(&mut self, t_end: f64, observers: &mut [&mut dyn Observer], rng: &mut R) {
        loop {
            let next = observers
                .iter()
                .filter_map(|o| o.next_time())
                .filter(|t| *t <= t_end)
                .fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                break;
            }
            self.advance(next, rng);
            for o in observers.iter_mut() {
                if o.next_time() == Some(next) {
                    o.observe(self);
                }
            }
        }
        self.advance(t_end, rng);
    }

    /// Net number of particles crossing the line x = Vt by the current time.
    pub fn current(&self, v: f64) -> Result<i64, DynamicsError> {
        current_from(&self.bricks, &self.omega0, v, self.now)
    }
}

/// J^(V)(t) from column counts and the initial configuration.
pub fn current_from(bricks: &[i64], omega0: &[i64], v: f64, t: f64) -> Result<i64, DynamicsError> {
    let n = bricks.len();
    let span = v.abs() * t;
    if span >= n as f64 / 2.0 {
        return Err(DynamicsError::WindowWrap { span, len: n });
    }
    let x = v * t;
    if v >= 0.0 {
        let k = x.floor() as usize;
        let mass: i64 = (1..=k).map(|j| omega0[j % n]).sum();
        Ok(bricks[k % n] - mass)
    } else {
        let k = x.ceil() as i64;
        let idx = k.rem_euclid(n as i64) as usize;
        let mass: i64 = (k + 1..=0).map(|j| omega0[j.rem_euclid(n as i64) as usize]).sum();
        Ok(bricks[idx] + mass)
    }
}

/// Hook called by [`RingState::run_until`] at scheduled times.
pub trait Observer {
    fn next_time(&self) -> Option<f64>;
    fn observe(&mut self, state: &RingState);
}

/// Records J^(V) for several velocities at a list of times.
#[derive(Debug, Clone)]
pub struct CurrentObserver {
    times: Vec<f64>,
    velocities: Vec<f64>,
    next: usize,
    /// records[time index][velocity index]
    pub records: Vec<Vec<i64>>,
}

impl CurrentObserver {
    pub fn new(times: &[f64], velocities: &[f64], len: usize) -> Result<Self, DynamicsError> {
        let mut times = times.to_vec();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t_max = times.last().copied().unwrap_or(0.0);
        for v in velocities {
            if v.abs() * t_max >= len as f64 / 2.0 {
                return Err(DynamicsError::WindowWrap { span: v.abs() * t_max, len });
            }
        }
        Ok(Self { times, velocities: velocities.to_vec(), next: 0, records: vec![] })
    }
}

impl Observer for CurrentObserver {
    fn next_time(&self) -> Option<f64> {
        self.times.get(self.next).copied()
    }

    fn observe(&mut self, state: &RingState) {
        let row = self.velocities.iter().map(|v| state.current(*v).expect("window checked")).collect();
        self.records.push(row);
        self.next += 1;
    }
}

/// Stores full configurations at a list of times.
#[derive(Debug, Clone, Default)]
pub struct ProfileObserver {
    times: Vec<f64>,
    next: usize,
    pub snapshots: Vec<Vec<i64>>,
}

impl ProfileObserver {
    pub fn new(times: &[f64]) -> Self {
        let mut times = times.to_vec();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { times, next: 0, snapshots: vec![] }
    }
}

impl Observer for ProfileObserver {
    fn next_time(&self) -> Option<f64> {
        self.times.get(self.next).copied()
    }

    fn observe(&mut self, state: &RingState) {
        self.snapshots.push(state.omega().to_vec());
        self.next += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::*;
    use crate::rng::replica_rng;

    #[test]
    fn sum_tree_find_skips_zero_leaves() {
        let t = SumTree::new(&[0.0, 2.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.total(), 3.0);
        assert_eq!(t.find(0.0).0, 1);
        assert_eq!(t.find(1.999).0, 1);
        assert_eq!(t.find(2.0).0, 4);
        assert_eq!(t.find(2.999_999).0, 4);
        // rounding past the end still lands on a live leaf
        assert_eq!(t.find(3.5).0, 4);
    }

    #[test]
    fn sum_tree_set_keeps_exact_sums() {
        let mut t = SumTree::new(&[0.1; 7]);
        for i in 0..7 {
            t.set(i, 0.3 * i as f64);
        }
        let mut fresh = SumTree::new(&(0..7).map(|i| 0.3 * i as f64).collect::<Vec<_>>());
        assert_eq!(t.total(), fresh.total());
        fresh.rebuild();
        assert_eq!(t.total(), fresh.total());
    }

    #[test]
    fn step_conserves_and_updates_rates() {
        let spec = builtin(Family::BL, &ModelParams { beta: Some(0.5), ..Default::default() }).unwrap();
        let mut s = RingState::from_configuration(&spec, vec![0, 2, -1, 1, 0, -3, 1]).unwrap();
        let mass: i64 = s.omega().iter().sum();
        let mut rng = replica_rng(1, 0);
        for _ in 0..5000 {
            let before = s.omega().to_vec();
            let ev = s.step(&mut rng).unwrap();
            let n = s.len();
            assert_eq!(s.omega()[ev.edge], before[ev.edge] - 1);
            assert_eq!(s.omega()[(ev.edge + 1) % n], before[(ev.edge + 1) % n] + 1);
            assert!(s.rates_consistent());
        }
        assert_eq!(s.omega().iter().sum::<i64>(), mass);
    }

    #[test]
    fn frozen_state_errors() {
        let spec = simple_exclusion();
        let mut s = RingState::from_configuration(&spec, vec![0, 0, 0, 0]).unwrap();
        let mut rng = replica_rng(1, 0);
        assert_eq!(s.step(&mut rng), Err(DynamicsError::FrozenState));
        s.advance(3.0, &mut rng);
        assert_eq!(s.now(), 3.0);
    }

    #[test]
    fn invalid_configuration() {
        let spec = simple_exclusion();
        assert!(RingState::from_configuration(&spec, vec![0, 2, 0]).is_err());
        assert!(RingState::from_configuration(&spec, vec![0]).is_err());
    }

    #[test]
    fn current_counts_height_change() {
        // bricks on column k count particles crossing edge (k, k+1)
        let omega0 = vec![1, 0, 1, 1, 0, 0, 1, 0];
        let mut bricks = vec![0; 8];
        bricks[0] = 3;
        bricks[2] = 5;
        bricks[6] = 2;
        assert_eq!(current_from(&bricks, &omega0, 0.0, 10.0).unwrap(), 3);
        // V t = 2.5 -> column 2, minus ω0 on sites 1..=2
        assert_eq!(current_from(&bricks, &omega0, 0.25, 10.0).unwrap(), 5 - 1);
        // V t = -1.5 -> k = -1, column 7, plus ω0 on sites 0..=0
        assert_eq!(current_from(&bricks, &omega0, -0.15, 10.0).unwrap(), 1);
        // V t = -2 -> column 6, plus ω0 on sites -1..=0
        assert_eq!(current_from(&bricks, &omega0, -0.2, 10.0).unwrap(), 2 + 1);
        assert!(matches!(current_from(&bricks, &omega0, 0.5, 10.0), Err(DynamicsError::WindowWrap { .. })));
    }

    #[test]
    fn current_is_height_difference() {
        // J^(V) = h_k(t) - h_0(0) for every k inside the window
        let spec = simple_exclusion();
        let m = crate::equilibrium::build_marginal(&spec, 0.0, 1e-12).unwrap();
        let mut rng = replica_rng(9, 0);
        let mut s = RingState::init(&spec, &m, 40, &mut rng);
        s.advance(3.0, &mut rng);
        let t = s.now();
        let h0: Vec<i64> = (0..40).scan(0i64, |h, i| {
            if i > 0 {
                *h -= s.omega0()[i];
            }
            Some(*h)
        }).collect();
        for k in 0..19usize {
            let v = (k as f64 + 0.5) / t;
            let want = s.bricks()[k] + h0[k] - h0[0];
            assert_eq!(s.current(v).unwrap(), want);
        }
    }

    #[test]
    fn observers_fire_in_order() {
        let spec = simple_exclusion();
        let m = crate::equilibrium::build_marginal(&spec, 0.0, 1e-12).unwrap();
        let mut rng = replica_rng(2, 0);
        let mut s = RingState::init(&spec, &m, 32, &mut rng);
        let mut cur = CurrentObserver::new(&[1.0, 2.0], &[0.0, 0.5], 32).unwrap();
        let mut prof = ProfileObserver::new(&[1.5]);
        s.run_until(3.0, &mut [&mut cur, &mut prof], &mut rng);
        assert_eq!(cur.records.len(), 2);
        assert_eq!(prof.snapshots.len(), 1);
        assert_eq!(s.now(), 3.0);
        assert!(CurrentObserver::new(&[40.0], &[0.5], 32).is_err());
    }
}
