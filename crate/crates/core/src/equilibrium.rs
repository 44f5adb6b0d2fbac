//! Product-form stationary measures and the quantities derived from them.
//!
//! The one-site marginal is μ_θ(z) ∝ exp(θz) / f(z)! where
//! f(z) = r(z, 0) / r(1, z - 1) · f(1). Its successive ratios
//! μ(z+1)/μ(z) = e^θ / f(z+1) are nonincreasing, so geometric tail bounds
//! decide where the finite window stops.

use rand::Rng;
use thiserror::Error;

use crate::models::{Family, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("f({z}) needs division by a zero rate")]
    ZeroRateDivision { z: i64 },
    #[error("f({z}) is undefined outside the support")]
    OutsideSupport { z: i64 },
    #[error("theta {theta} outside ({lo}, {hi})")]
    ThetaOutOfRange { theta: f64, lo: f64, hi: f64 },
    #[error("density {rho} is not attained by any theta")]
    RhoOutOfRange { rho: f64 },
    #[error("marginal window exceeds {0} sites")]
    WindowTooLarge(usize),
    #[error("{0} has no closed form for this family")]
    Unsupported(&'static str),
    #[error("reversed rate mismatch at ({z}, {y}): direct {direct}, via measure {via_measure}")]
    ReversedRateMismatch { z: i64, y: i64, direct: f64, via_measure: f64 },
}

type Result<T> = std::result::Result<T, EquilibriumError>;

pub const DEFAULT_EPS: f64 = 1e-12;
/// Tail mass used internally where moments must be accurate to round-off.
pub const FINE_EPS: f64 = 1e-17;
const MAX_WINDOW: usize = 4_000_000;

/// The site function f(z) = r(z, 0) / r(1, z - 1) · f1.
#[derive(Debug, Clone)]
pub struct SiteFunction {
    spec: ModelSpec,
    f1: f64,
}

pub fn f_from_rates(spec: &ModelSpec, f1: f64) -> SiteFunction {
    SiteFunction { spec: spec.clone(), f1 }
}

impl SiteFunction {
    /// Defined for ω_min < z <= ω_max.
    pub fn eval(&self, z: i64) -> Result<f64> {
        let sup = self.spec.support();
        if !(sup.contains(z) && sup.contains(z - 1)) {
            return Err(EquilibriumError::OutsideSupport { z });
        }
        let den = self.spec.rate(1, z - 1);
        if den == 0.0 {
            return Err(EquilibriumError::ZeroRateDivision { z });
        }
        Ok(self.spec.rate(z, 0) / den * self.f1)
    }
}

/// ln f(z) in the natural gauge, using the bricklayer f directly when available.
fn ln_f(spec: &ModelSpec, z: i64) -> Result<f64> {
    match spec.bricklayer() {
        Some(b) => {
            if !spec.support().contains(z - 1) {
                return Err(EquilibriumError::OutsideSupport { z });
            }
            match b.profile() {
                crate::models::Profile::Exp { beta } if b.is_paired() => Ok(beta * (z as f64 - 0.5)),
                _ => Ok(b.f(z).ln()),
            }
        }
        None => f_from_rates(spec, 1.0).eval(z).map(f64::ln),
    }
}

/// ln f(z)! with f(0)! = 1 and f(z)! = 1 / ∏_{y=z+1}^{0} f(y) for z < 0.
pub fn log_f_factorial(f: impl Fn(i64) -> f64, z: i64) -> f64 {
    if z > 0 {
        (1..=z).map(|y| f(y).ln()).sum()
    } else {
        -(z + 1..=0).map(|y| f(y).ln()).sum::<f64>()
    }
}

/// Range (θ_low, θ_high) of fugacities with a normalizable marginal.
pub fn theta_bounds(spec: &ModelSpec) -> (f64, f64) {
    const PROBE: i64 = 1 << 20;
    let limit = |sign: i64| -> f64 {
        let a = ln_f(spec, sign * PROBE).unwrap_or(f64::NAN);
        let b = ln_f(spec, sign * 2 * PROBE).unwrap_or(f64::NAN);
        if a.is_finite() && b.is_finite() && (b - a).abs() <= 1e-6 {
            b
        } else {
            sign as f64 * f64::INFINITY
        }
    };
    let sup = spec.support();
    let hi = if sup.omega_max.is_some() { f64::INFINITY } else { limit(1) };
    let lo = if sup.omega_min.is_some() { f64::NEG_INFINITY } else { limit(-1) };
    (lo, hi)
}

/// One-site marginal truncated to a finite window with a bounded tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub theta: f64,
    lo: i64,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    /// Upper bound on the normalized mass outside the window.
    pub tail_bound: f64,
}

impl Marginal {
    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.lo + self.probs.len() as i64 - 1)
    }

    pub fn pmf(&self, z: i64) -> f64 {
        let i = z - self.lo;
        if i < 0 || i >= self.probs.len() as i64 {
            0.0
        } else {
            self.probs[i as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.lo + i as i64, p))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(z, p)| z as f64 * p).sum()
    }

    /// Smallest z with F(z) > u.
    pub fn quantile(&self, u: f64) -> i64 {
        let i = self.cdf.partition_point(|&c| c <= u);
        self.lo + i.min(self.probs.len() - 1) as i64
    }

    pub fn cdf_at(&self, z: i64) -> f64 {
        let i = z - self.lo;
        if i < 0 {
            0.0
        } else if i >= self.cdf.len() as i64 {
            1.0
        } else {
            self.cdf[i as usize]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.quantile(rng.gen::<f64>())
    }

    fn from_log_weights(theta: f64, lo: i64, lw: Vec<f64>, tail_bound: f64) -> Self {
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Marginal { theta, lo, probs, cdf, tail_bound }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Builds μ_θ on a window whose neglected mass is below `eps`.
pub fn build_marginal(spec: &ModelSpec, theta: f64, eps: f64) -> Result<Marginal> {
    let (tl, th) = theta_bounds(spec);
    if !(theta > tl && theta < th) || !theta.is_finite() {
        return Err(EquilibriumError::ThetaOutOfRange { theta, lo: tl, hi: th });
    }
    let sup = spec.support();
    let half = (eps / 2.0).ln();

    // upward from 0
    let mut up = vec![0.0];
    let mut log_mass = 0.0;
    let mut z = 0i64;
    let mut tail_up = 0.0;
    while z < sup.hi() {
        let ln_ratio = theta - ln_f(spec, z + 1)?;
        let cur = *up.last().unwrap();
        if ln_ratio < 0.0 {
            // mass beyond z is at most w(z) q / (1 - q)
            let q = ln_ratio.exp();
            let log_tail = cur + ln_ratio - (-q).ln_1p();
            if log_tail - log_mass < half {
                tail_up = (log_tail - log_mass).exp();
                break;
            }
        }
        let next = cur + ln_ratio;
        up.push(next);
        log_mass = log_add(log_mass, next);
        z += 1;
        if up.len() > MAX_WINDOW {
            return Err(EquilibriumError::WindowTooLarge(MAX_WINDOW));
        }
    }

    // downward from 0
    let mut down: Vec<f64> = Vec::new();
    let mut z = 0i64;
    let mut cur = 0.0;
    let mut tail_down = 0.0;
    while z > sup.lo() {
        let ln_ratio = ln_f(spec, z)? - theta;
        if ln_ratio < 0.0 {
            let q = ln_ratio.exp();
            let log_tail = cur + ln_ratio - (-q).ln_1p();
            if log_tail - log_mass < half {
                tail_down = (log_tail - log_mass).exp();
                break;
            }
        }
        cur += ln_ratio;
        down.push(cur);
        log_mass = log_add(log_mass, cur);
        z -= 1;
        if down.len() > MAX_WINDOW {
            return Err(EquilibriumError::WindowTooLarge(MAX_WINDOW));
        }
    }

    let lo = -(down.len() as i64);
    let mut lw: Vec<f64> = down.into_iter().rev().collect();
    lw.extend(up);
    Ok(Marginal::from_log_weights(theta, lo, lw, tail_up + tail_down))
}

/// Moments of the one- and two-site marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTable {
    pub rho: f64,
    pub var: f64,
    /// Third central moment.
    pub m3: f64,
    /// E r(ω_0, ω_1)
    pub er: f64,
    /// E[r*(ω_0, ω_1) (ω_0 - ρ)]
    pub erstar_w0: f64,
    /// E[r*(ω_0, ω_1) (ω_1 - ρ)]
    pub erstar_w1: f64,
}

pub fn moments(spec: &ModelSpec, marginal: &Marginal) -> MomentTable {
    let rho = marginal.mean();
    let (mut var, mut m3) = (0.0, 0.0);
    for (z, p) in marginal.iter() {
        let d = z as f64 - rho;
        var += p * d * d;
        m3 += p * d * d * d;
    }
    let (mut er, mut w0, mut w1) = (0.0, 0.0, 0.0);
    for (x, px) in marginal.iter() {
        for (y, py) in marginal.iter() {
            let p = px * py;
            er += p * spec.rate(x, y);
            let rs = p * spec.reversed_rate(x, y);
            w0 += rs * (x as f64 - rho);
            w1 += rs * (y as f64 - rho);
        }
    }
    MomentTable { rho, var, m3, er, erstar_w0: w0, erstar_w1: w1 }
}

pub fn rho_of_theta(spec: &ModelSpec, theta: f64) -> Result<f64> {
    Ok(build_marginal(spec, theta, FINE_EPS)?.mean())
}

/// Inverts ρ(θ) by bisection to 1e-12 in θ.
pub fn theta_of_rho(spec: &ModelSpec, rho: f64) -> Result<f64> {
    let (tl, th) = theta_bounds(spec);
    let out = || EquilibriumError::RhoOutOfRange { rho };
    let x0 = match (tl.is_finite(), th.is_finite()) {
        (true, true) => 0.5 * (tl + th),
        (true, false) => tl + 1.0,
        (false, true) => th - 1.0,
        (false, false) => 0.0,
    };
    let step = |k: i32, dir: f64| -> f64 {
        let edge = if dir < 0.0 { tl } else { th };
        if edge.is_finite() {
            edge + (x0 - edge) * 0.5f64.powi(k)
        } else {
            x0 + dir * (2f64.powi(k) - 1.0)
        }
    };
    let (mut a, mut b) = (x0, x0);
    let mut k = 0;
    while rho_of_theta(spec, a)? > rho {
        k += 1;
        if k > 60 {
            return Err(out());
        }
        a = step(k, -1.0);
    }
    k = 0;
    while rho_of_theta(spec, b)? < rho {
        k += 1;
        if k > 60 {
            return Err(out());
        }
        b = step(k, 1.0);
    }
    for _ in 0..200 {
        if b - a <= 1e-12 {
            break;
        }
        let m = 0.5 * (a + b);
        if rho_of_theta(spec, m)? < rho {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// H(ρ) = E r at the equilibrium with density ρ.
pub fn hydro_flux(spec: &ModelSpec, rho: f64) -> Result<f64> {
    let theta = theta_of_rho(spec, rho)?;
    let m = build_marginal(spec, theta, FINE_EPS)?;
    Ok(moments(spec, &m).er)
}

/// r*(z, y) = r(y, z), cross-checked against
/// μ(z+1) μ(y-1) / (μ(z) μ(y)) · r(z+1, y-1).
pub fn reversed_rate(spec: &ModelSpec, marginal: &Marginal, z: i64, y: i64) -> Result<f64> {
    let direct = spec.reversed_rate(z, y);
    let sup = spec.support();
    let via = if !(sup.contains(z + 1) && sup.contains(y - 1) && sup.contains(z) && sup.contains(y)) {
        0.0
    } else {
        let (pz, pz1, py, py1) =
            (marginal.pmf(z), marginal.pmf(z + 1), marginal.pmf(y), marginal.pmf(y - 1));
        let ratio = if pz > 1e-250 && pz1 > 1e-250 && py > 1e-250 && py1 > 1e-250 {
            pz1 * py1 / (pz * py)
        } else {
            let f = f_from_rates(spec, spec.natural_gauge());
            f.eval(y)? / f.eval(z + 1)?
        };
        ratio * spec.rate(z + 1, y - 1)
    };
    if (direct - via).abs() > 1e-9 * direct.abs().max(via.abs()).max(1e-300) {
        return Err(EquilibriumError::ReversedRateMismatch { z, y, direct, via_measure: via });
    }
    Ok(direct)
}

/// Closed-form characteristic speed H'(ρ(θ)) for SE, ZR and BL.
pub fn characteristic_speed_closed(spec: &ModelSpec, theta: f64) -> Result<f64> {
    match spec.family() {
        Family::SE => Ok(1.0 - 2.0 / (1.0 + (-theta).exp())),
        Family::ZR => {
            let m = build_marginal(spec, theta, FINE_EPS)?;
            Ok(theta.exp() / moments(spec, &m).var)
        }
        Family::BL => {
            let m = build_marginal(spec, theta, FINE_EPS)?;
            Ok(2.0 * theta.sinh() / moments(spec, &m).var)
        }
        _ => Err(EquilibriumError::Unsupported("characteristic speed")),
    }
}

/// Characteristic speed from static two-site expectations of r*.
pub fn characteristic_speed_static(spec: &ModelSpec, marginal: &Marginal) -> f64 {
    let m = moments(spec, marginal);
    (m.erstar_w0 + m.erstar_w1) / m.var
}

/// Sign certificate for convexity of the flux: positive means H'' > 0.
pub fn convexity_certificate(spec: &ModelSpec, theta: f64) -> Result<f64> {
    let family = spec.family();
    if !matches!(family, Family::BL | Family::ZR) {
        return Err(EquilibriumError::Unsupported("convexity certificate"));
    }
    let m = moments(spec, &build_marginal(spec, theta, FINE_EPS)?);
    Ok(match family {
        Family::BL => 2.0 * theta.cosh() * m.var - 2.0 * theta.sinh() * m.m3,
        _ => theta.exp() * (m.var - m.m3),
    })
}

/// i.i.d. draw of L sites from the marginal.
pub fn sample_configuration<R: Rng + ?Sized>(marginal: &Marginal, len: usize, rng: &mut R) -> Vec<i64> {
    (0..len).map(|_| marginal.sample(rng)).collect()
}

/// K(z) = Σ_{y > z} (y - ρ) μ(y) / μ(z), the weight attached to a defect
/// started on a site of value z when expressing correlations through it.
#[derive(Debug, Clone)]
pub struct CorrelationKernel {
    lo: i64,
    values: Vec<f64>,
    pub rho: f64,
}

impl CorrelationKernel {
    pub fn new(marginal: &Marginal) -> Self {
        let rho = marginal.mean();
        let (lo, hi) = marginal.window();
        let n = (hi - lo + 1) as usize;
        let mut values = vec![0.0; n];
        let mut suffix = 0.0;
        for i in (0..n).rev() {
            let z = lo + i as i64;
            let p = marginal.pmf(z);
            values[i] = if p > 0.0 { suffix / p } else { 0.0 };
            suffix += (z as f64 - rho) * p;
        }
        CorrelationKernel { lo, values, rho }
    }

    pub fn at(&self, z: i64) -> f64 {
        let i = z - self.lo;
        if i < 0 || i >= self.values.len() as i64 {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    /// Σ_z μ(z) K(z); equals the variance of the marginal.
    pub fn total(&self, marginal: &Marginal) -> f64 {
        marginal.iter().map(|(z, p)| p * self.at(z)).sum()
    }
}
