//! Couplings of two or more copies of the dynamics.
//!
//! [`pair`] runs the basic coupling of two ordered configurations edge by
//! edge. [`bricklayer`] runs several configurations of a bricklayer-form
//! model (ZR, BL) from one shared mark per lay, which is what the defect
//! sandwiches need. [`laws`] builds the joint initial laws.

pub mod bricklayer;
pub mod laws;
pub mod pair;
pub mod swarm;

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::equilibrium::EquilibriumError;

pub use bricklayer::{MonotoneDefectPair, Sandwich, SandwichAudit, SandwichMode};
pub use laws::{attach_defect, palm_reweight_origin, shifted_origin_measure, two_density_init, OriginLaw, PairLaw};
pub use pair::{Channel, CoupledEvent, CoupledState};
pub use swarm::{DefectTracer, LabeledSwarm, Tag, TagStart};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("negative channel rate {rate} at site/edge {at} for values {values:?}")]
    NegativeChannelRate { at: usize, values: Vec<i64>, rate: f64 },
    #[error("configurations are not ordered: {0}")]
    StochasticOrderViolation(String),
    #[error("no second class particles to track")]
    NoSecondClassParticles,
    #[error("coupling requires a bricklayer-form model (ZR or BL)")]
    Unsupported,
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Tolerance below zero accepted as round-off when checking channel rates.
pub(crate) fn check_rate(rate: f64, scale: f64, at: usize, values: &[i64]) -> Result<f64, CouplingError> {
    if rate < -1e-12 * scale.abs().max(1.0) || rate.is_nan() {
        Err(CouplingError::NegativeChannelRate { at, values: values.to_vec(), rate })
    } else {
        Ok(rate.max(0.0))
    }
}
