//! Rate functions r(z, y) for nearest-neighbour deposition models.
//!
//! A deposition on column i moves one unit of ω from site i to site i+1 at
//! rate r(ω_i, ω_{i+1}). Rates are only meaningful on the support interval I.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("support interval is empty or malformed: {0}")]
    InvalidSupport(String),
}

/// Model families with built-in rate functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    SE,
    #[serde(alias = "PA")]
    PAExclusion,
    ZR,
    BL,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::SE => "SE",
            Family::PAExclusion => "PAExclusion",
            Family::ZR => "ZR",
            Family::BL => "BL",
            Family::Custom => "Custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Family {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SE" => Ok(Family::SE),
            "PA" | "PAEXCLUSION" => Ok(Family::PAExclusion),
            "ZR" => Ok(Family::ZR),
            "BL" => Ok(Family::BL),
            "CUSTOM" => Ok(Family::Custom),
            _ => Err(ModelError::InvalidParams(format!("unknown family '{s}'"))),
        }
    }
}

/// Integer interval {ω_min, ..., ω_max}; `None` marks an infinite end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub omega_min: Option<i64>,
    pub omega_max: Option<i64>,
}

impl SupportInterval {
    pub fn new(omega_min: Option<i64>, omega_max: Option<i64>) -> Result<Self, ModelError> {
        let lo = omega_min.unwrap_or(i64::MIN);
        let hi = omega_max.unwrap_or(i64::MAX);
        if lo > 0 || hi < 0 {
            return Err(ModelError::InvalidSupport(format!(
                "interval must contain 0, got [{lo}, {hi}]"
            )));
        }
        if lo == hi {
            return Err(ModelError::InvalidSupport("interval must contain two points".into()));
        }
        Ok(Self { omega_min, omega_max })
    }

    pub fn integers() -> Self {
        Self { omega_min: None, omega_max: None }
    }

    pub fn contains(&self, z: i64) -> bool {
        self.omega_min.is_none_or(|m| z >= m) && self.omega_max.is_none_or(|m| z <= m)
    }

    pub fn lo(&self) -> i64 {
        self.omega_min.unwrap_or(i64::MIN)
    }

    pub fn hi(&self) -> i64 {
        self.omega_max.unwrap_or(i64::MAX)
    }

    pub fn is_finite(&self) -> bool {
        self.omega_min.is_some() && self.omega_max.is_some()
    }

    /// Intersection with [-half_width, half_width].
    pub fn clip(&self, half_width: i64) -> (i64, i64) {
        (self.lo().max(-half_width), self.hi().min(half_width))
    }
}

/// Growth profile f on the positive integers, used by ZR and BL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// f(z) = slope * z
    Linear { slope: f64 },
    /// f(z) = exp(beta (z - 1/2)), valid on all of Z
    Exp { beta: f64 },
    /// f(1..=n) given; beyond n extended with the last increment
    Table { values: Vec<f64> },
}

impl Profile {
    /// f(z) for z >= 1.
    fn positive(&self, z: i64) -> f64 {
        debug_assert!(z >= 1);
        match self {
            Profile::Linear { slope } => slope * z as f64,
            Profile::Exp { beta } => (beta * (z as f64 - 0.5)).exp(),
            Profile::Table { values } => {
                let n = values.len() as i64;
                if z <= n {
                    values[(z - 1) as usize]
                } else {
                    let last = values[(n - 1) as usize];
                    let prev = if n >= 2 { values[(n - 2) as usize] } else { 0.0 };
                    last + (z - n) as f64 * (last - prev)
                }
            }
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match self {
            Profile::Linear { slope } if !(*slope > 0.0 && slope.is_finite()) => {
                Err(ModelError::InvalidParams(format!("slope must be positive, got {slope}")))
            }
            Profile::Exp { beta } if !(*beta > 0.0 && beta.is_finite()) => {
                Err(ModelError::InvalidParams(format!("beta must be positive, got {beta}")))
            }
            Profile::Table { values } => {
                if values.is_empty() {
                    return Err(ModelError::InvalidParams("f_table is empty".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(ModelError::InvalidParams("f_table entries must be positive".into()));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(ModelError::InvalidParams("f_table must be nondecreasing".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The bricklayer form of a rate: r(z, y) = f(z) + f(-y).
///
/// For ZR, f vanishes on z <= 0; for BL, f(z) f(1 - z) = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Bricklayer {
    profile: Profile,
    paired: bool,
}

impl Bricklayer {
    pub fn f(&self, z: i64) -> f64 {
        if self.paired {
            match &self.profile {
                Profile::Exp { beta } => (beta * (z as f64 - 0.5)).exp(),
                p if z >= 1 => p.positive(z),
                p => 1.0 / p.positive(1 - z),
            }
        } else if z <= 0 {
            0.0
        } else {
            self.profile.positive(z)
        }
    }

    /// Rate of laying a brick to the right of a site with value z.
    #[inline]
    pub fn right(&self, z: i64) -> f64 {
        self.f(z)
    }

    /// Rate of laying a brick to the left of a site with value z.
    #[inline]
    pub fn left(&self, z: i64) -> f64 {
        self.f(-z)
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn is_paired(&self) -> bool {
        self.paired
    }
}

pub type RateFn = Arc<dyn Fn(i64, i64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    SE,
    PA { c: f64, a: f64 },
    Bricks(Bricklayer),
    Custom { rate: RateFn, label: String },
}

/// A validated model: family, support and rate function.
#[derive(Clone)]
pub struct ModelSpec {
    family: Family,
    support: SupportInterval,
    kind: Kind,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("ModelSpec");
        d.field("family", &self.family).field("support", &self.support);
        match &self.kind {
            Kind::SE => {}
            Kind::PA { c, a } => {
                d.field("c", c).field("a", a);
            }
            Kind::Bricks(b) => {
                d.field("profile", &b.profile);
            }
            Kind::Custom { label, .. } => {
                d.field("label", label);
            }
        }
        d.finish()
    }
}

/// Parameters accepted by [`builtin`]. Unused fields are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_table: Option<Vec<f64>>,
    /// Custom family: rows indexed by z, columns by y, both over [omega_min, omega_max].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<i64>,
}

/// Builds one of the standard families.
///
/// SE and PA use fixed supports. ZR defaults to f(z) = z and BL requires
/// either `beta` (exponential f) or `f_table` (values of f(1), f(2), ...).
pub fn builtin(family: Family, params: &ModelParams) -> Result<ModelSpec, ModelError> {
    match family {
        Family::SE => Ok(ModelSpec {
            family,
            support: SupportInterval::new(Some(0), Some(1))?,
            kind: Kind::SE,
        }),
        Family::PAExclusion => {
            let c = params.c.ok_or_else(|| ModelError::InvalidParams("PA needs c".into()))?;
            let a = params.a.ok_or_else(|| ModelError::InvalidParams("PA needs a".into()))?;
            if !(c > 0.0 && c <= a / 2.0 && a.is_finite()) {
                return Err(ModelError::InvalidParams(format!(
                    "PA requires 0 < c <= a/2, got c={c}, a={a}"
                )));
            }
            Ok(ModelSpec {
                family,
                support: SupportInterval::new(Some(-1), Some(1))?,
                kind: Kind::PA { c, a },
            })
        }
        Family::ZR => {
            let profile = match &params.f_table {
                Some(v) => Profile::Table { values: v.clone() },
                None => Profile::Linear { slope: 1.0 },
            };
            zero_range(profile)
        }
        Family::BL => {
            let profile = match (&params.f_table, params.beta) {
                (Some(v), _) => Profile::Table { values: v.clone() },
                (None, Some(beta)) => Profile::Exp { beta },
                (None, None) => {
                    return Err(ModelError::InvalidParams("BL needs beta or f_table".into()))
                }
            };
            bricklayers(profile)
        }
        Family::Custom => {
            let table = params
                .rate_table
                .clone()
                .ok_or_else(|| ModelError::InvalidParams("Custom needs rate_table".into()))?;
            let lo = params
                .omega_min
                .ok_or_else(|| ModelError::InvalidParams("Custom needs omega_min".into()))?;
            let hi = params
                .omega_max
                .ok_or_else(|| ModelError::InvalidParams("Custom needs omega_max".into()))?;
            let support = SupportInterval::new(Some(lo), Some(hi))?;
            let n = (hi - lo + 1) as usize;
            if table.len() != n || table.iter().any(|row| row.len() != n) {
                return Err(ModelError::InvalidParams(format!("rate_table must be {n}x{n}")));
            }
            if table.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ModelError::InvalidParams("rates must be nonnegative".into()));
            }
            let rate: RateFn = Arc::new(move |z, y| table[(z - lo) as usize][(y - lo) as usize]);
            ModelSpec::custom(support, rate, "rate_table")
        }
    }
}

pub fn simple_exclusion() -> ModelSpec {
    builtin(Family::SE, &ModelParams::default()).expect("SE is always valid")
}

pub fn zero_range(profile: Profile) -> Result<ModelSpec, ModelError> {
    profile.check()?;
    Ok(ModelSpec {
        family: Family::ZR,
        support: SupportInterval::new(Some(0), None)?,
        kind: Kind::Bricks(Bricklayer { profile, paired: false }),
    })
}

pub fn bricklayers(profile: Profile) -> Result<ModelSpec, ModelError> {
    profile.check()?;
    let b = Bricklayer { profile, paired: true };
    if b.f(1) < 1.0 {
        return Err(ModelError::InvalidParams(format!(
            "f(1) must be at least 1 so that f(0) = 1/f(1) <= f(1), got {}",
            b.f(1)
        )));
    }
    if b.profile.positive(1_000_000) <= 1.0 {
        return Err(ModelError::InvalidParams("f must exceed 1 somewhere".into()));
    }
    Ok(ModelSpec { family: Family::BL, support: SupportInterval::integers(), kind: Kind::Bricks(b) })
}

impl ModelSpec {
    /// A user-supplied rate on a given support.
    pub fn custom(
        support: SupportInterval,
        rate: RateFn,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        Ok(ModelSpec { family: Family::Custom, support, kind: Kind::Custom { rate, label: label.into() } })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn support(&self) -> SupportInterval {
        self.support
    }

    /// r(z, y); zero if either argument lies outside the support.
    #[inline]
    pub fn rate(&self, z: i64, y: i64) -> f64 {
        if !self.support.contains(z) || !self.support.contains(y) {
            return 0.0;
        }
        match &self.kind {
            Kind::SE => {
                if z == 1 && y == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::PA { c, a } => match (z, y) {
                (0, 0) => *c,
                (0, -1) | (1, 0) => a / 2.0,
                (1, -1) => *a,
                _ => 0.0,
            },
            Kind::Bricks(b) => b.f(z) + b.f(-y),
            Kind::Custom { rate, .. } => rate(z, y),
        }
    }

    /// Reversed rate r*(z, y) = r(y, z).
    #[inline]
    pub fn reversed_rate(&self, z: i64, y: i64) -> f64 {
        self.rate(y, z)
    }

    /// Bricklayer decomposition, available for ZR and BL.
    pub fn bricklayer(&self) -> Option<&Bricklayer> {
        match &self.kind {
            Kind::Bricks(b) => Some(b),
            _ => None,
        }
    }

    /// f(1) of the defining profile for ZR/BL, 1 otherwise.
    pub fn natural_gauge(&self) -> f64 {
        match &self.kind {
            Kind::Bricks(b) => b.f(1),
            _ => 1.0,
        }
    }

    pub fn pa_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            Kind::PA { c, a } => Some((c, a)),
            _ => None,
        }
    }
}

/// One failed instance of a validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub args: Vec<i64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub check: &'static str,
    pub evaluated: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const DEFAULT_HALF_WIDTH: i64 = 12;
const SUM_RULE_TOL: f64 = 1e-12;
const PRODUCT_RULE_TOL: f64 = 1e-10;

/// r(z+1, y) >= r(z, y) and r(y, z+1) <= r(y, z) on the clipped support.
pub fn validate_monotonicity(spec: &ModelSpec, half_width: i64) -> ValidationReport {
    let (lo, hi) = spec.support().clip(half_width);
    let mut report = ValidationReport { check: "monotonicity", evaluated: 0, violations: vec![] };
    for z in lo..hi {
        for y in lo..=hi {
            report.evaluated += 2;
            let (a, b) = (spec.rate(z + 1, y), spec.rate(z, y));
            if a < b {
                report.violations.push(Violation { args: vec![z, y, 0], lhs: a, rhs: b });
            }
            let (a, b) = (spec.rate(y, z + 1), spec.rate(y, z));
            if a > b {
                report.violations.push(Violation { args: vec![z, y, 1], lhs: a, rhs: b });
            }
        }
    }
    report
}

/// r(x,y) + r(y,z) + r(z,x) = r(x,z) + r(z,y) + r(y,x) on the clipped support.
pub fn validate_sum_rule(spec: &ModelSpec, half_width: i64) -> ValidationReport {
    let (lo, hi) = spec.support().clip(half_width);
    let r = |a, b| spec.rate(a, b);
    let mut report = ValidationReport { check: "sum_rule", evaluated: 0, violations: vec![] };
    for x in lo..=hi {
        for y in lo..=hi {
            for z in lo..=hi {
                report.evaluated += 1;
                let lhs = r(x, y) + r(y, z) + r(z, x);
                let rhs = r(x, z) + r(z, y) + r(y, x);
                if (lhs - rhs).abs() > SUM_RULE_TOL * lhs.abs().max(rhs.abs()).max(1.0) {
                    report.violations.push(Violation { args: vec![x, y, z], lhs, rhs });
                }
            }
        }
    }
    report
}

/// r(x,y-1) r(y,z-1) r(z,x-1) = r(x,z-1) r(z,y-1) r(y,x-1) for
/// ω_min < x, y, z < ω_max + 1 on the clipped support.
pub fn validate_product_rule(spec: &ModelSpec, half_width: i64) -> ValidationReport {
    let (lo, hi) = spec.support().clip(half_width);
    let lo = if spec.support().omega_min.is_some() { lo + 1 } else { lo };
    let hi = if spec.support().omega_max.is_some() { hi + 1 } else { hi };
    let r = |a, b| spec.rate(a, b);
    let mut report = ValidationReport { check: "product_rule", evaluated: 0, violations: vec![] };
    for x in lo..=hi {
        for y in lo..=hi {
            for z in lo..=hi {
                report.evaluated += 1;
                let lhs = r(x, y - 1) * r(y, z - 1) * r(z, x - 1);
                let rhs = r(x, z - 1) * r(z, y - 1) * r(y, x - 1);
                let scale = lhs.abs().max(rhs.abs());
                if (lhs - rhs).abs() > PRODUCT_RULE_TOL * scale {
                    report.violations.push(Violation { args: vec![x, y, z], lhs, rhs });
                }
            }
        }
    }
    report
}

/// Checks f(z) f(1 - z) = 1 for |z| <= z_max.
pub fn bl_pairing_check(f: impl Fn(i64) -> f64, z_max: i64) -> ValidationReport {
    let mut report = ValidationReport { check: "bl_pairing", evaluated: 0, violations: vec![] };
    for z in -z_max..=z_max {
        report.evaluated += 1;
        let p = f(z) * f(1 - z);
        if (p - 1.0).abs() > 1e-12 {
            report.violations.push(Violation { args: vec![z], lhs: p, rhs: 1.0 });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bl(beta: f64) -> ModelSpec {
        builtin(Family::BL, &ModelParams { beta: Some(beta), ..Default::default() }).unwrap()
    }

    #[test]
    fn se_rates() {
        let s = simple_exclusion();
        assert_eq!(s.rate(1, 0), 1.0);
        assert_eq!(s.rate(0, 0), 0.0);
        assert_eq!(s.rate(1, 1), 0.0);
        assert_eq!(s.rate(0, 1), 0.0);
        assert_eq!(s.rate(2, 0), 0.0);
    }

    #[test]
    fn pa_rates_and_params() {
        let p = ModelParams { c: Some(0.3), a: Some(1.0), ..Default::default() };
        let s = builtin(Family::PAExclusion, &p).unwrap();
        assert_eq!(s.rate(0, 0), 0.3);
        assert_eq!(s.rate(0, -1), 0.5);
        assert_eq!(s.rate(1, 0), 0.5);
        assert_eq!(s.rate(1, -1), 1.0);
        assert_eq!(s.rate(-1, 0), 0.0);
        assert_eq!(s.rate(1, 1), 0.0);
        let bad = ModelParams { c: Some(0.6), a: Some(1.0), ..Default::default() };
        assert!(builtin(Family::PAExclusion, &bad).is_err());
        let bad = ModelParams { c: Some(0.0), a: Some(1.0), ..Default::default() };
        assert!(builtin(Family::PAExclusion, &bad).is_err());
    }

    #[test]
    fn all_builtins_pass_validators() {
        let specs = vec![
            simple_exclusion(),
            builtin(Family::PAExclusion, &ModelParams { c: Some(0.3), a: Some(1.0), ..Default::default() })
                .unwrap(),
            builtin(Family::ZR, &ModelParams::default()).unwrap(),
            zero_range(Profile::Table { values: vec![1.0, 1.0] }).unwrap(),
            bl(0.5),
            bricklayers(Profile::Linear { slope: 1.0 }).unwrap(),
        ];
        for s in &specs {
            for rep in [
                validate_monotonicity(s, DEFAULT_HALF_WIDTH),
                validate_sum_rule(s, DEFAULT_HALF_WIDTH),
                validate_product_rule(s, DEFAULT_HALF_WIDTH),
            ] {
                assert!(rep.passed(), "{:?} {} {:?}", s, rep.check, &rep.violations[..1]);
                assert!(rep.evaluated > 0);
            }
        }
    }

    #[test]
    fn non_monotone_custom_is_flagged() {
        let sup = SupportInterval::new(Some(0), Some(1)).unwrap();
        let s = ModelSpec::custom(sup, Arc::new(|z, y| 1.0 + z as f64 - 2.0 * y as f64 * (z as f64)), "bad")
            .unwrap();
        let rep = validate_monotonicity(&s, 12);
        assert!(!rep.passed());
    }

    #[test]
    fn asymmetric_custom_breaks_sum_rule() {
        let sup = SupportInterval::new(Some(0), Some(2)).unwrap();
        let s = ModelSpec::custom(sup, Arc::new(|z, y| (z * z * (3 - y)) as f64), "x")
            .unwrap();
        assert!(!validate_sum_rule(&s, 12).passed());
    }

    #[test]
    fn bl_pairing_holds() {
        for spec in [bl(0.5), bl(1.7), bricklayers(Profile::Linear { slope: 1.0 }).unwrap()] {
            let b = spec.bricklayer().unwrap().clone();
            assert!(bl_pairing_check(|z| b.f(z), 30).passed());
        }
        assert!(!bl_pairing_check(|z| (z as f64).exp(), 3).passed());
    }

    #[test]
    fn bl_table_matches_max_example() {
        // f(z) = max(z, 1) on z >= 1, negative side from the pairing
        let s = bricklayers(Profile::Table { values: vec![1.0, 2.0] }).unwrap();
        let b = s.bricklayer().unwrap();
        assert_eq!(b.f(5), 5.0);
        assert_eq!(b.f(0), 1.0);
        assert_eq!(b.f(-1), 0.5);
        assert_eq!(b.f(-3), 0.25);
    }

    #[test]
    fn zr_rates_vanish_on_left() {
        let s = builtin(Family::ZR, &ModelParams::default()).unwrap();
        assert_eq!(s.rate(3, 7), 3.0);
        assert_eq!(s.rate(0, 2), 0.0);
        let b = s.bricklayer().unwrap();
        assert_eq!(b.left(4), 0.0);
        assert_eq!(b.left(0), 0.0);
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(zero_range(Profile::Table { values: vec![2.0, 1.0] }).is_err());
        assert!(zero_range(Profile::Table { values: vec![] }).is_err());
        assert!(bricklayers(Profile::Exp { beta: 0.0 }).is_err());
        assert!(bricklayers(Profile::Table { values: vec![0.5, 2.0] }).is_err());
        assert!(builtin(Family::BL, &ModelParams::default()).is_err());
    }

    #[test]
    fn support_interval() {
        assert!(SupportInterval::new(Some(1), Some(3)).is_err());
        assert!(SupportInterval::new(Some(0), Some(0)).is_err());
        let s = SupportInterval::new(Some(-1), None).unwrap();
        assert!(s.contains(100) && !s.contains(-2));
        assert_eq!(s.clip(5), (-1, 5));
    }

    #[test]
    fn custom_rate_table() {
        let p = ModelParams {
            rate_table: Some(vec![vec![0.0, 0.0], vec![1.0, 0.0]]),
            omega_min: Some(0),
            omega_max: Some(1),
            ..Default::default()
        };
        let s = builtin(Family::Custom, &p).unwrap();
        assert_eq!(s.rate(1, 0), 1.0);
        assert!(validate_sum_rule(&s, 12).passed());
    }

    #[test]
    fn family_parse() {
        assert_eq!("pa".parse::<Family>().unwrap(), Family::PAExclusion);
        assert_eq!("BL".parse::<Family>().unwrap(), Family::BL);
        assert!("XY".parse::<Family>().is_err());
    }
}
