//! Basic coupling of two ordered configurations η <= ζ.
//!
//! On edge (i, i+1) three channels fire independently:
//! upper only at r(ζ_i, ζ_{i+1}) - r(η_i, ζ_{i+1}) (a second class particle
//! steps right), lower only at r(η_i, η_{i+1}) - r(η_i, ζ_{i+1}) (one steps
//! left), and both at r(η_i, ζ_{i+1}).

use rand::Rng;

use super::swarm::{LabeledSwarm, TagStart};
use super::{check_rate, CouplingError};
use crate::dynamics::SumTree;
use crate::models::ModelSpec;
use crate::rng::exp_time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    UpperOnly,
    LowerOnly,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEvent {
    pub time: f64,
    pub edge: usize,
    pub channel: Channel,
}

#[derive(Debug, Clone)]
pub struct CoupledState {
    spec: ModelSpec,
    lower: Vec<i64>,
    upper: Vec<i64>,
    tree: SumTree,
    swarm: LabeledSwarm,
    now: f64,
    events: u64,
}

impl CoupledState {
    pub fn new(spec: &ModelSpec, lower: Vec<i64>, upper: Vec<i64>, start: TagStart) -> Result<Self, CouplingError> {
        let len = lower.len();
        if len < 2 || upper.len() != len {
            return Err(CouplingError::InvalidConfiguration("need two rings of equal length >= 2".into()));
        }
        for z in lower.iter().chain(&upper) {
            if !spec.support().contains(*z) {
                return Err(CouplingError::InvalidConfiguration(format!("value {z} outside support")));
            }
        }
        let swarm = LabeledSwarm::new(&lower, &upper, start)?;
        let mut s = CoupledState { spec: spec.clone(), lower, upper, tree: SumTree::new(&vec![0.0; len]), swarm, now: 0.0, events: 0 };
        for i in 0..len {
            let total: f64 = s.channel_rates(i)?.iter().sum();
            s.tree.set(i, total);
        }
        Ok(s)
    }

    /// [upper only, lower only, joint] on edge (i, i+1).
    pub fn channel_rates(&self, i: usize) -> Result<[f64; 3], CouplingError> {
        let j = (i + 1) % self.lower.len();
        let (el, er, ul, ur) = (self.lower[i], self.lower[j], self.upper[i], self.upper[j]);
        let joint = self.spec.rate(el, ur);
        let upper = self.spec.rate(ul, ur);
        let lower = self.spec.rate(el, er);
        let vals = [el, er, ul, ur];
        Ok([
            check_rate(upper - joint, upper, i, &vals)?,
            check_rate(lower - joint, lower, i, &vals)?,
            check_rate(joint, joint, i, &vals)?,
        ])
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    pub fn swarm(&self) -> &LabeledSwarm {
        &self.swarm
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

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Σ (ζ_i - η_i).
    pub fn discrepancy(&self) -> i64 {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum()
    }

    pub fn is_ordered(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l <= u)
    }

    fn refresh(&mut self, i: usize) -> Result<(), CouplingError> {
        let total: f64 = self.channel_rates(i)?.iter().sum();
        self.tree.set(i, total);
        Ok(())
    }

    fn fire(&mut self, edge: usize, offset: f64) -> Result<Channel, CouplingError> {
        let n = self.lower.len();
        let next = (edge + 1) % n;
        let [up, low, _] = self.channel_rates(edge)?;
        let channel = if offset < up {
            Channel::UpperOnly
        } else if offset < up + low {
            Channel::LowerOnly
        } else {
            Channel::Joint
        };
        match channel {
            Channel::Joint => {
                self.lower[edge] -= 1;
                self.lower[next] += 1;
                self.upper[edge] -= 1;
                self.upper[next] += 1;
            }
            Channel::UpperOnly => {
                let d = self.upper[edge] - self.lower[edge];
                // within the channel the offset is uniform; its bottom 1/d slice carries the tag
                let carried = offset * (d as f64) < up;
                self.upper[edge] -= 1;
                self.upper[next] += 1;
                self.swarm.jump(edge, true, carried);
            }
            Channel::LowerOnly => {
                let d = self.upper[next] - self.lower[next];
                let carried = (offset - up) * (d as f64) < low;
                self.lower[edge] -= 1;
                self.lower[next] += 1;
                self.swarm.jump(next, false, carried);
            }
        }
        self.refresh((edge + n - 1) % n)?;
        self.refresh(edge)?;
        self.refresh(next)?;
        self.events += 1;
        if self.events.is_multiple_of(1 << 20) {
            self.tree.rebuild();
        }
        Ok(channel)
    }

    /// Applies the next coupled event.
    pub fn basic_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<CoupledEvent, CouplingError> {
        let total = self.tree.total();
        if total <= 0.0 {
            return Err(crate::dynamics::DynamicsError::FrozenState.into());
        }
        self.now += exp_time(rng, total);
        let (edge, offset) = self.tree.find(rng.gen::<f64>() * total);
        let channel = self.fire(edge, offset)?;
        Ok(CoupledEvent { time: self.now, edge, channel })
    }

    /// Runs to time `t_end`, calling `check` after every event.
    pub fn advance_with<R: Rng + ?Sized>(
        &mut self,
        t_end: f64,
        rng: &mut R,
        mut check: impl FnMut(&CoupledState, &CoupledEvent),
    ) -> Result<(), CouplingError> {
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
            let (edge, offset) = self.tree.find(rng.gen::<f64>() * total);
            let channel = self.fire(edge, offset)?;
            check(self, &CoupledEvent { time: t, edge, channel });
        }
        self.now = self.now.max(t_end);
        Ok(())
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, t_end: f64, rng: &mut R) -> Result<(), CouplingError> {
        self.advance_with(t_end, rng, |_, _| {})
    }
}
