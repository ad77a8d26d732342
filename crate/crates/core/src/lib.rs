//! Hybrid (partially collapsed) MCMC for Dirichlet process, Pitman-Yor, HDP and
//! beta-Bernoulli models, with a coordinator/worker runtime for distributed runs.

pub mod bench;
pub mod chain;
pub mod conjugate;
pub mod dist;
pub mod dpmm;
pub mod error;
pub mod ibp;
pub mod matrix;
pub mod pyhdp;
pub mod rng;

pub use error::{CrmhError, Result};
pub use matrix::Rows;
pub use rng::RngStream;
