use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::RngStream;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Isotropic Gaussian likelihood with known variance and a Gaussian prior on the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFixedVarPrior {
    pub mean: Vec<f64>,
    pub prior_var: f64,
    pub obs_var: f64,
}

impl GaussFixedVarPrior {
    pub fn new(mean: Vec<f64>, prior_var: f64, obs_var: f64) -> Result<Self> {
        if mean.is_empty() {
            return param("prior mean must have dimension >= 1");
        }
        if !(prior_var > 0.0) || !(obs_var > 0.0) {
            return param(format!("variances must be positive, got {prior_var} and {obs_var}"));
        }
        Ok(GaussFixedVarPrior {
            mean,
            prior_var,
            obs_var,
        })
    }

    pub fn isotropic(dim: usize, mean: f64, prior_var: f64, obs_var: f64) -> Result<Self> {
        Self::new(vec![mean; dim], prior_var, obs_var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_atom(&self, stats: &ClusterSuffStats, rng: &mut RngStream) -> Vec<f64> {
        let (mean, var) = cluster_posterior(self, stats);
        let sd = var.sqrt();
        mean.iter().map(|m| m + sd * rng.normal()).collect()
    }
}

/// Additive statistics of one cluster. `sum_sq` is the summed squared norm,
/// kept locally for block marginals and never put on the wire.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSuffStats {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: f64,
}

impl ClusterSuffStats {
    pub fn empty(dim: usize) -> Self {
        ClusterSuffStats {
            count: 0,
            sum: vec![0.0; dim],
            sum_sq: 0.0,
        }
    }

    pub fn from_points<'a>(dim: usize, points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut s = Self::empty(dim);
        for x in points {
            s.add(x);
        }
        s
    }

    pub fn add(&mut self, x: &[f64]) {
        self.count += 1;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
        self.sum_sq += x.iter().map(|v| v * v).sum::<f64>();
    }

    pub fn remove(&mut self, x: &[f64]) {
        debug_assert!(self.count > 0);
        self.count -= 1;
        if self.count == 0 {
            self.sum.iter_mut().for_each(|s| *s = 0.0);
            self.sum_sq = 0.0;
            return;
        }
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s -= v;
        }
        self.sum_sq -= x.iter().map(|v| v * v).sum::<f64>();
    }

    pub fn merge(&mut self, other: &ClusterSuffStats) {
        self.count += other.count;
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.sum_sq += other.sum_sq;
    }

    pub fn unmerge(&mut self, other: &ClusterSuffStats) {
        self.count -= other.count;
        if self.count == 0 {
            self.sum.iter_mut().for_each(|s| *s = 0.0);
            self.sum_sq = 0.0;
            return;
        }
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s -= v;
        }
        self.sum_sq -= other.sum_sq;
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Posterior over the cluster mean: `(mean, isotropic variance)`.
pub fn cluster_posterior(prior: &GaussFixedVarPrior, stats: &ClusterSuffStats) -> (Vec<f64>, f64) {
    if stats.count == 0 {
        return (prior.mean.clone(), prior.prior_var);
    }
    let var = 1.0 / (1.0 / prior.prior_var + stats.count as f64 / prior.obs_var);
    let mean = prior
        .mean
        .iter()
        .zip(&stats.sum)
        .map(|(m0, s)| var * (m0 / prior.prior_var + s / prior.obs_var))
        .collect();
    (mean, var)
}

#[inline]
pub fn iso_normal_logpdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (LN_2PI + var.ln()) - 0.5 * sq / var
}

pub fn cluster_predictive_logpdf(prior: &GaussFixedVarPrior, stats: &ClusterSuffStats, x: &[f64]) -> f64 {
    if stats.count == 0 {
        return prior_predictive_logpdf(prior, x);
    }
    let var = 1.0 / (1.0 / prior.prior_var + stats.count as f64 / prior.obs_var);
    let mut sq = 0.0;
    for ((xd, m0), s) in x.iter().zip(&prior.mean).zip(&stats.sum) {
        let mean = var * (m0 / prior.prior_var + s / prior.obs_var);
        sq += (xd - mean) * (xd - mean);
    }
    let v = var + prior.obs_var;
    -0.5 * x.len() as f64 * (LN_2PI + v.ln()) - 0.5 * sq / v
}

pub fn prior_predictive_logpdf(prior: &GaussFixedVarPrior, x: &[f64]) -> f64 {
    iso_normal_logpdf(x, &prior.mean, prior.prior_var + prior.obs_var)
}

/// Log of the joint density of all points in a block with the mean integrated out.
pub fn block_log_marginal(prior: &GaussFixedVarPrior, stats: &ClusterSuffStats) -> f64 {
    if stats.count == 0 {
        return 0.0;
    }
    let m = stats.count as f64;
    let d = prior.dim() as f64;
    let (s2, s02) = (prior.obs_var, prior.prior_var);
    let lambda = m / s2 + 1.0 / s02;
    let mut quad = 0.0;
    for (m0, s) in prior.mean.iter().zip(&stats.sum) {
        let b = s / s2 + m0 / s02;
        quad += b * b / (2.0 * lambda) - m0 * m0 / (2.0 * s02);
    }
    d * (-0.5 * m * (LN_2PI + s2.ln()) - 0.5 * (s02 * lambda).ln()) + quad - stats.sum_sq / (2.0 * s2)
}

/// Log density of a block given a known mean.
pub fn block_loglik_at(prior: &GaussFixedVarPrior, stats: &ClusterSuffStats, theta: &[f64]) -> f64 {
    if stats.count == 0 {
        return 0.0;
    }
    let m = stats.count as f64;
    let d = prior.dim() as f64;
    let cross: f64 = stats.sum.iter().zip(theta).map(|(s, t)| s * t).sum();
    let tt: f64 = theta.iter().map(|t| t * t).sum();
    -0.5 * m * d * (LN_2PI + prior.obs_var.ln()) - (stats.sum_sq - 2.0 * cross + m * tt) / (2.0 * prior.obs_var)
}

/// Block predictive given the points already in `given`: marginal(given + block) - marginal(given).
pub fn block_predictive(prior: &GaussFixedVarPrior, given: &ClusterSuffStats, block: &ClusterSuffStats) -> f64 {
    let mut joint = given.clone();
    joint.merge(block);
    block_log_marginal(prior, &joint) - block_log_marginal(prior, given)
}
