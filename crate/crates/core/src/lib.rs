//! Simulation, coupling and exact verification tools for one-dimensional
//! misanthrope-type deposition models on a ring.

pub mod cli;
pub mod coupling;
pub mod dynamics;
pub mod equilibrium;
pub mod estimators;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod stats;

pub use equilibrium::{build_marginal, Marginal, MomentTable};
pub use models::{builtin, Family, ModelParams, ModelSpec, SupportInterval};
