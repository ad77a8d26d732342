//! Beta-Bernoulli (Indian buffet) latent feature model with a linear-Gaussian
//! likelihood.

pub mod hybrid;
pub mod prior;

pub use hybrid::{IbpGlobal, IbpHybrid, IbpShard};
pub use prior::{ibp_prior_forward, left_ordered_form};
