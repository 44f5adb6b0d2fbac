//! Streaming moments, resampling error bars and distribution distances.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

/// Welford accumulator with an optional third central moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        let m2 = self.m2 + other.m2 + d * d * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d * d * d * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n as f64 - 1.0)
        }
    }

    /// Population third central moment.
    pub fn third_moment(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m3 / self.n as f64
        }
    }

    pub fn sem(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn ci95(&self) -> f64 {
        1.96 * self.sem()
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Point estimate and grouped delete-one jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn ci95(&self) -> f64 {
        1.96 * self.se
    }

    pub fn zscore(&self, target: f64) -> f64 {
        if self.se > 0.0 {
            (self.value - target) / self.se
        } else if self.value == target {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn jackknife<T: Clone>(data: &[T], groups: usize, stat: impl Fn(&[T]) -> f64) -> Estimate {
    let value = stat(data);
    let g = groups.min(data.len());
    if g < 2 {
        return Estimate { value, se: f64::INFINITY };
    }
    let bounds: Vec<usize> = (0..=g).map(|k| k * data.len() / g).collect();
    let mut leave = Vec::with_capacity(data.len());
    let partial: Vec<f64> = (0..g)
        .map(|k| {
            leave.clear();
            leave.extend_from_slice(&data[..bounds[k]]);
            leave.extend_from_slice(&data[bounds[k + 1]..]);
            stat(&leave)
        })
        .collect();
    let mean = partial.iter().sum::<f64>() / g as f64;
    let ss: f64 = partial.iter().map(|p| (p - mean) * (p - mean)).sum();
    Estimate { value, se: ((g as f64 - 1.0) / g as f64 * ss).sqrt() }
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    xs.iter().cloned().collect::<RunningStats>().variance()
}

pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let s: RunningStats = xs.iter().cloned().collect();
    Estimate { value: s.mean(), se: s.sem() }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov distance between an integer-valued sample and N(mean, sd²),
/// with the normal evaluated at half-integers.
pub fn ks_lattice_normal(samples: &[i64], mean: f64, sd: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut worst = normal_cdf((v[0] as f64 - 0.5 - mean) / sd);
    let mut i = 0;
    while i < v.len() {
        let k = v[i];
        while i < v.len() && v[i] == k {
            i += 1;
        }
        let next = if i < v.len() { v[i] } else { k + 1 };
        let fn_k = i as f64 / n;
        // F_n is constant on [k, next); Φ is monotone, so the extremes sit at the ends
        let lo = normal_cdf((k as f64 + 0.5 - mean) / sd);
        let hi = normal_cdf((next as f64 - 0.5 - mean) / sd);
        worst = worst.max((fn_k - lo).abs()).max((fn_k - hi).abs());
    }
    worst
}

/// Pearson statistic and upper-tail p-value.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, e)| **e > 0.0)
        .map(|(o, e)| (*o as f64 - e) * (*o as f64 - e) / e)
        .sum();
    let dof = (expected.iter().filter(|e| **e > 0.0).count() as f64 - 1.0).max(1.0);
    let p = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);
    (stat, p)
}

/// Total variation distance between an empirical histogram and a law.
pub fn total_variation(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    0.5 * counts.iter().zip(probs).map(|(c, p)| (*c as f64 / n as f64 - p).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        (m, v, m3)
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(
            xs in prop::collection::vec(-50.0f64..50.0, 3..60),
            split in 0usize..60,
        ) {
            let k = split.min(xs.len());
            let mut a: RunningStats = xs[..k].iter().cloned().collect();
            let b: RunningStats = xs[k..].iter().cloned().collect();
            a.merge(&b);
            let (m, v, m3) = direct(&xs);
            prop_assert!((a.mean() - m).abs() < 1e-9);
            prop_assert!((a.variance() - v).abs() < 1e-7 * v.max(1.0));
            prop_assert!((a.third_moment() - m3).abs() < 1e-6 * m3.abs().max(1.0));
            prop_assert_eq!(a.count(), xs.len() as u64);
        }
    }

    #[test]
    fn jackknife_of_mean_matches_sem() {
        use rand::Rng;
        let mut rng = crate::rng::replica_rng(4, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let j = jackknife(&xs, 1000, |d| d.iter().sum::<f64>() / d.len() as f64);
        let s: RunningStats = xs.iter().cloned().collect();
        assert!((j.se - s.sem()).abs() < 1e-9);
        let g = jackknife(&xs, 50, |d| d.iter().sum::<f64>() / d.len() as f64);
        assert!((g.se / s.sem() - 1.0).abs() < 0.5);
    }

    #[test]
    fn ks_of_exact_binomial_is_small() {
        // a binomial(400, 1/2) sample laid out by exact quantiles
        let n = 400u64;
        let mut probs = vec![0.0; n as usize + 1];
        let mut lp = -(n as f64) * 2f64.ln();
        for k in 0..=n {
            if k > 0 {
                lp += ((n - k + 1) as f64 / k as f64).ln();
            }
            probs[k as usize] = lp.exp();
        }
        let m = 20000;
        let mut samples = Vec::new();
        let mut acc = 0.0;
        let mut k = 0;
        for i in 0..m {
            let u = (i as f64 + 0.5) / m as f64;
            while acc + probs[k] < u {
                acc += probs[k];
                k += 1;
            }
            samples.push(k as i64);
        }
        let d = ks_lattice_normal(&samples, 200.0, 10.0);
        assert!(d < 0.01, "{d}");
        let shifted = ks_lattice_normal(&samples, 205.0, 10.0);
        assert!(shifted > 0.15);
    }

    #[test]
    fn chi_square_and_tv() {
        let (s, p) = chi_square(&[50, 50], &[50.0, 50.0]);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square(&[90, 10], &[50.0, 50.0]);
        assert!(p < 1e-6);
        assert!((total_variation(&[3, 1], &[0.5, 0.5]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-11);
    }
}
