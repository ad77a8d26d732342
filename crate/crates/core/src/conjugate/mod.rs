//! Conjugate Gaussian component models.

pub mod gauss;
pub mod linear_gaussian;

pub use gauss::{
    block_log_marginal, block_loglik_at, block_predictive, cluster_posterior, cluster_predictive_logpdf,
    iso_normal_logpdf, prior_predictive_logpdf, ClusterSuffStats, GaussFixedVarPrior,
};
pub use linear_gaussian::{
    feature_param_posterior, lg_collapsed_marginal, lg_conditional_loglik, posterior_from_stats, sample_features,
    FeatureSuffStats, LinearGaussianModel, TailPredictor,
};
