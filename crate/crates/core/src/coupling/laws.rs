//! Joint initial laws for ordered pairs of configurations.

use rand::Rng;

use super::pair::CoupledState;
use super::swarm::TagStart;
use super::CouplingError;
use crate::equilibrium::Marginal;
use crate::models::ModelSpec;

/// A finite law on pairs (x, y) with x <= y.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLaw {
    cells: Vec<(i64, i64)>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl PairLaw {
    fn from_weights(cells: Vec<(i64, i64)>, weights: Vec<f64>) -> Result<Self, CouplingError> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(CouplingError::NoSecondClassParticles);
        }
        let mut keep_cells = Vec::new();
        let mut probs = Vec::new();
        for (c, w) in cells.into_iter().zip(weights) {
            if w > 0.0 {
                keep_cells.push(c);
                probs.push(w / total);
            }
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(PairLaw { cells: keep_cells, probs, cdf })
    }

    /// Quantile coupling: x = F1^{-1}(U), y = F2^{-1}(U). Needs F1 >= F2.
    pub fn quantile_coupling(lower: &Marginal, upper: &Marginal) -> Result<Self, CouplingError> {
        if lower.theta > upper.theta {
            return Err(CouplingError::StochasticOrderViolation(format!(
                "theta {} above theta {}",
                lower.theta, upper.theta
            )));
        }
        let mut cuts: Vec<f64> = lower.iter().map(|(z, _)| lower.cdf_at(z)).collect();
        cuts.extend(upper.iter().map(|(z, _)| upper.cdf_at(z)));
        cuts.push(0.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut cells: Vec<(i64, i64)> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let cell = (lower.quantile(mid), upper.quantile(mid));
            if cell.0 > cell.1 {
                return Err(CouplingError::StochasticOrderViolation(format!(
                    "quantile coupling gives {} > {}",
                    cell.0, cell.1
                )));
            }
            if cells.last() == Some(&cell) {
                *weights.last_mut().unwrap() += b - a;
            } else {
                cells.push(cell);
                weights.push(b - a);
            }
        }
        Self::from_weights(cells, weights)
    }

    pub fn prob(&self, x: i64, y: i64) -> f64 {
        self.cells.iter().position(|c| *c == (x, y)).map_or(0.0, |i| self.probs[i])
    }

    pub fn cells(&self) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
        self.cells.iter().cloned().zip(self.probs.iter().cloned())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (i64, i64) {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.cells.len() - 1);
        self.cells[i]
    }

    /// Reweights by the number of second class particles, y - x.
    pub fn palm(&self) -> Result<Self, CouplingError> {
        let w = self.cells().map(|((x, y), p)| p * (y - x) as f64).collect();
        Self::from_weights(self.cells.clone(), w)
    }

    /// Reweights by μ(y-1)/μ(y) of the upper marginal, which turns the
    /// upper coordinate's law into μ(· - 1).
    pub fn shifted(&self, upper: &Marginal) -> Result<Self, CouplingError> {
        let w = self
            .cells()
            .map(|((_, y), p)| {
                let py = upper.pmf(y);
                if py > 0.0 {
                    p * upper.pmf(y - 1) / py
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_weights(self.cells.clone(), w)
    }
}

/// Draws y given x under the quantile coupling of two marginals.
pub fn upper_given_lower<R: Rng + ?Sized>(lower: &Marginal, upper: &Marginal, x: i64, rng: &mut R) -> i64 {
    let a = lower.cdf_at(x - 1);
    let b = lower.cdf_at(x);
    let u = a + (b - a) * rng.gen::<f64>();
    upper.quantile(u.min(b))
}

pub fn palm_reweight_origin(law: &PairLaw) -> Result<PairLaw, CouplingError> {
    law.palm()
}

pub fn shifted_origin_measure(law: &PairLaw, upper: &Marginal) -> Result<PairLaw, CouplingError> {
    law.shifted(upper)
}

/// Initial law at the origin for a two-density coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginLaw {
    /// Same product law as every other site; the tag starts at the first
    /// second class particle at or right of 0.
    Product,
    /// Size-biased by the number of second class particles at 0; the tag
    /// starts at 0.
    Palm,
}

/// Ordered product pair η <= ζ with marginals at two densities.
pub fn two_density_init<R: Rng + ?Sized>(
    spec: &ModelSpec,
    lower: &Marginal,
    upper: &Marginal,
    len: usize,
    origin: OriginLaw,
    rng: &mut R,
) -> Result<CoupledState, CouplingError> {
    let law = PairLaw::quantile_coupling(lower, upper)?;
    let mut eta = Vec::with_capacity(len);
    let mut zeta = Vec::with_capacity(len);
    for i in 0..len {
        let (x, y) = if i == 0 && origin == OriginLaw::Palm { law.palm()?.sample(rng) } else { law.sample(rng) };
        eta.push(x);
        zeta.push(y);
    }
    CoupledState::new(spec, eta, zeta, TagStart::FirstAtOrAfterOrigin)
}

/// Stationary configuration plus one extra particle at the origin.
///
/// When the origin already holds the maximum of the support, its value is
/// redrawn conditioned to lie below the maximum and the returned flag is set.
pub fn attach_defect<R: Rng + ?Sized>(
    spec: &ModelSpec,
    marginal: &Marginal,
    len: usize,
    rng: &mut R,
) -> Result<(CoupledState, bool), CouplingError> {
    let mut omega = crate::equilibrium::sample_configuration(marginal, len, rng);
    let mut resampled = false;
    if let Some(max) = spec.support().omega_max {
        if marginal.cdf_at(max - 1) <= 0.0 {
            return Err(CouplingError::InvalidConfiguration("no room for a defect".into()));
        }
        while omega[0] >= max {
            omega[0] = marginal.sample(rng);
            resampled = true;
        }
    }
    let mut plus = omega.clone();
    plus[0] += 1;
    Ok((CoupledState::new(spec, omega, plus, TagStart::FirstAtOrAfterOrigin)?, resampled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{build_marginal, DEFAULT_EPS};
    use crate::models::*;

    fn bl() -> ModelSpec {
        builtin(Family::BL, &ModelParams { beta: Some(0.5), ..Default::default() }).unwrap()
    }

    #[test]
    fn quantile_coupling_has_right_marginals() {
        let s = bl();
        let m1 = build_marginal(&s, 0.0, DEFAULT_EPS).unwrap();
        let m2 = build_marginal(&s, 0.5, DEFAULT_EPS).unwrap();
        let law = PairLaw::quantile_coupling(&m1, &m2).unwrap();
        for z in -6..=8 {
            let px: f64 = law.cells().filter(|((x, _), _)| *x == z).map(|(_, p)| p).sum();
            let py: f64 = law.cells().filter(|((_, y), _)| *y == z).map(|(_, p)| p).sum();
            assert!((px - m1.pmf(z)).abs() < 1e-12);
            assert!((py - m2.pmf(z)).abs() < 1e-12);
        }
        assert!(law.cells().all(|((x, y), _)| x <= y));
        assert!(PairLaw::quantile_coupling(&m2, &m1).is_err());
    }

    #[test]
    fn shifted_law_moves_upper_marginal() {
        let s = bl();
        let m1 = build_marginal(&s, -0.3, DEFAULT_EPS).unwrap();
        let m2 = build_marginal(&s, 0.2, DEFAULT_EPS).unwrap();
        let law = PairLaw::quantile_coupling(&m1, &m2).unwrap().shifted(&m2).unwrap();
        for z in -5..=6 {
            let py: f64 = law.cells().filter(|((_, y), _)| *y == z).map(|(_, p)| p).sum();
            assert!((py - m2.pmf(z - 1)).abs() < 1e-9, "z {z}");
        }
    }

    #[test]
    fn palm_law_has_a_particle_at_origin() {
        let s = bl();
        let m1 = build_marginal(&s, 0.0, DEFAULT_EPS).unwrap();
        let m2 = build_marginal(&s, 0.5, DEFAULT_EPS).unwrap();
        let base = PairLaw::quantile_coupling(&m1, &m2).unwrap();
        let palm = base.palm().unwrap();
        assert!(palm.cells().all(|((x, y), _)| y > x));
        let mean_d: f64 = base.cells().map(|((x, y), p)| p * (y - x) as f64).sum();
        for ((x, y), p) in palm.cells() {
            assert!((p - base.prob(x, y) * (y - x) as f64 / mean_d).abs() < 1e-12);
        }
        let same = PairLaw::quantile_coupling(&m1, &m1).unwrap();
        assert!(same.palm().is_err());
    }

    #[test]
    fn conditional_upper_matches_joint() {
        let s = bl();
        let m1 = build_marginal(&s, 0.0, DEFAULT_EPS).unwrap();
        let m2 = build_marginal(&s, 0.5, DEFAULT_EPS).unwrap();
        let law = PairLaw::quantile_coupling(&m1, &m2).unwrap();
        let mut rng = crate::rng::replica_rng(5, 0);
        let n = 40_000;
        let mut hits = 0;
        for _ in 0..n {
            if upper_given_lower(&m1, &m2, 0, &mut rng) == 1 {
                hits += 1;
            }
        }
        let want = law.prob(0, 1) / m1.pmf(0);
        let got = hits as f64 / n as f64;
        assert!((got - want).abs() < 4.0 * (want * (1.0 - want) / n as f64).sqrt() + 1e-3);
    }

    #[test]
    fn defect_attached_at_origin() {
        let s = simple_exclusion();
        let m = build_marginal(&s, 5.0, DEFAULT_EPS).unwrap();
        let mut rng = crate::rng::replica_rng(1, 0);
        let mut flagged = 0;
        for _ in 0..50 {
            let (c, resampled) = attach_defect(&s, &m, 10, &mut rng).unwrap();
            assert_eq!(c.upper()[0], c.lower()[0] + 1);
            assert_eq!(c.swarm().position(), Some(0));
            flagged += resampled as usize;
        }
        assert!(flagged > 40);
    }
}
