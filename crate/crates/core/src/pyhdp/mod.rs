//! Pitman-Yor mixtures and the hierarchical Dirichlet process.

pub mod hdp;
pub mod oracle;
pub mod py;

pub use hdp::{HdpGlobal, HdpHybrid, HdpShard};
pub use oracle::exact_hdp_dish_posterior;
pub use py::{py_assign_logprobs, pymm_hybrid};
