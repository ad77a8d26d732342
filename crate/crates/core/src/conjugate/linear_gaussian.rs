use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use super::gauss::LN_2PI;
use crate::error::{param, CrmhError, Result};
use crate::rng::RngStream;

/// `X = Z A + E`, rows of `A` iid `N(0, feature_var I)`, `E` iid `N(0, noise_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub feature_var: f64,
    pub noise_var: f64,
    pub dim: usize,
}

impl LinearGaussianModel {
    pub fn new(feature_var: f64, noise_var: f64, dim: usize) -> Result<Self> {
        if !(feature_var > 0.0) || !(noise_var > 0.0) {
            return param("linear-Gaussian variances must be positive");
        }
        if dim == 0 {
            return param("dimension must be >= 1");
        }
        Ok(LinearGaussianModel {
            feature_var,
            noise_var,
            dim,
        })
    }

    /// Ridge added to the Gram matrix.
    pub fn ridge(&self) -> f64 {
        self.noise_var / self.feature_var
    }
}

/// `gram = ZᵀZ` and `cross = ZᵀX` over some set of features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSuffStats {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

impl FeatureSuffStats {
    pub fn empty(k: usize, dim: usize) -> Self {
        FeatureSuffStats {
            gram: DMatrix::zeros(k, k),
            cross: DMatrix::zeros(k, dim),
        }
    }

    pub fn from_data(z: &DMatrix<f64>, x: &DMatrix<f64>) -> Self {
        FeatureSuffStats {
            gram: z.transpose() * z,
            cross: z.transpose() * x,
        }
    }

    pub fn num_features(&self) -> usize {
        self.gram.nrows()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.gram.diagonal().iter().copied().collect()
    }

    pub fn add_row(&mut self, z: &[f64], x: &[f64]) {
        self.update_row(z, x, 1.0);
    }

    pub fn remove_row(&mut self, z: &[f64], x: &[f64]) {
        self.update_row(z, x, -1.0);
    }

    fn update_row(&mut self, z: &[f64], x: &[f64], sign: f64) {
        for (a, &za) in z.iter().enumerate() {
            if za == 0.0 {
                continue;
            }
            for (b, &zb) in z.iter().enumerate() {
                self.gram[(a, b)] += sign * za * zb;
            }
            for (d, &xd) in x.iter().enumerate() {
                self.cross[(a, d)] += sign * za * xd;
            }
        }
    }
}

fn chol(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| CrmhError::State("Gram matrix plus ridge is not positive definite".into()))
}

fn ridged(gram: &DMatrix<f64>, model: &LinearGaussianModel) -> DMatrix<f64> {
    let mut m = gram.clone();
    for k in 0..m.nrows() {
        m[(k, k)] += model.ridge();
    }
    m
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `log p(X | Z)` with every feature vector integrated out.
pub fn lg_collapsed_marginal(x: &DMatrix<f64>, z: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    if z.nrows() != n || d != model.dim {
        return param("shape mismatch between X, Z and model");
    }
    let k = z.ncols();
    let (nf, df, kf) = (n as f64, d as f64, k as f64);
    let sx = model.noise_var.sqrt();
    let sa = model.feature_var.sqrt();
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let mut quad = xx;
    let mut logdet = 0.0;
    if k > 0 {
        let stats = FeatureSuffStats::from_data(z, x);
        let c = chol(ridged(&stats.gram, model))?;
        logdet = log_det(&c);
        let sol = c.solve(&stats.cross);
        quad -= stats.cross.iter().zip(sol.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(-0.5 * nf * df * LN_2PI - (nf - kf) * df * sx.ln() - kf * df * sa.ln() - 0.5 * df * logdet
        - quad / (2.0 * model.noise_var))
}

/// Posterior predictive of a residual row given tail statistics. Built once per
/// row visit and reused while the tail memberships of that row are varied.
#[derive(Debug, Clone)]
pub struct TailPredictor {
    minv: DMatrix<f64>,
    w: DMatrix<f64>,
    noise_var: f64,
    feature_var: f64,
}

impl TailPredictor {
    /// `stats` must exclude the row being predicted; `stats.cross` holds residual cross-products.
    pub fn new(stats: &FeatureSuffStats, model: &LinearGaussianModel) -> Result<Self> {
        let k = stats.num_features();
        let (minv, w) = if k == 0 {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, model.dim))
        } else {
            let c = chol(ridged(&stats.gram, model))?;
            (c.inverse(), c.solve(&stats.cross))
        };
        Ok(TailPredictor {
            minv,
            w,
            noise_var: model.noise_var,
            feature_var: model.feature_var,
        })
    }

    pub fn num_features(&self) -> usize {
        self.minv.nrows()
    }

    /// Mean offset and isotropic variance for tail memberships `z` plus `fresh`
    /// extra features that no other row uses.
    pub fn moments(&self, z: &[f64], fresh: usize, mean: &mut [f64]) -> f64 {
        mean.iter_mut().for_each(|m| *m = 0.0);
        let mut q = 0.0;
        for (a, &za) in z.iter().enumerate() {
            if za == 0.0 {
                continue;
            }
            for (d, m) in mean.iter_mut().enumerate() {
                *m += za * self.w[(a, d)];
            }
            for (b, &zb) in z.iter().enumerate() {
                q += za * zb * self.minv[(a, b)];
            }
        }
        self.noise_var * (1.0 + q) + fresh as f64 * self.feature_var
    }

    pub fn loglik(&self, r: &[f64], z: &[f64], fresh: usize, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(r.len(), 0.0);
        let var = self.moments(z, fresh, scratch);
        let sq: f64 = r.iter().zip(scratch.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * r.len() as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
    }
}

/// `log p(x_i | z_i, θ_{1..J}, Z_{-i}, X_{-i})`. `z_row` has length `J + T`; the
/// first `J` entries pair with the rows of `theta`, the rest with `tail`, whose
/// cross statistics are taken against residuals `x_j - Σ_{k≤J} z_jk θ_k`.
pub fn lg_conditional_loglik(
    x: &[f64],
    z_row: &[f64],
    theta: &DMatrix<f64>,
    tail: &FeatureSuffStats,
    model: &LinearGaussianModel,
) -> Result<f64> {
    let j = theta.nrows();
    if z_row.len() != j + tail.num_features() || x.len() != model.dim || (j > 0 && theta.ncols() != model.dim) {
        return param("shape mismatch in conditional likelihood");
    }
    let mut r = x.to_vec();
    for k in 0..j {
        if z_row[k] != 0.0 {
            for d in 0..model.dim {
                r[d] -= z_row[k] * theta[(k, d)];
            }
        }
    }
    let pred = TailPredictor::new(tail, model)?;
    let mut scratch = Vec::new();
    Ok(pred.loglik(&r, &z_row[j..], 0, &mut scratch))
}

/// Matrix-normal posterior of `A`: mean `M⁻¹ZᵀX`, column covariance `σ_X² M⁻¹`.
pub fn feature_param_posterior(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    model: &LinearGaussianModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let stats = FeatureSuffStats::from_data(z, x);
    posterior_from_stats(&stats, model)
}

pub fn posterior_from_stats(stats: &FeatureSuffStats, model: &LinearGaussianModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = stats.num_features();
    if k == 0 {
        return Ok((DMatrix::zeros(0, model.dim), DMatrix::zeros(0, 0)));
    }
    let c = chol(ridged(&stats.gram, model))?;
    let mean = c.solve(&stats.cross);
    let cov = c.inverse() * model.noise_var;
    Ok((mean, cov))
}

/// Joint draw of all feature vectors given `ZᵀZ` and `ZᵀX`.
pub fn sample_features(stats: &FeatureSuffStats, model: &LinearGaussianModel, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let k = stats.num_features();
    if k == 0 {
        return Ok(DMatrix::zeros(0, model.dim));
    }
    let c = chol(ridged(&stats.gram, model))?;
    let mean = c.solve(&stats.cross);
    let mut e = DMatrix::zeros(k, model.dim);
    for v in e.iter_mut() {
        *v = rng.normal() * model.noise_var.sqrt();
    }
    // L⁻ᵀ e has covariance (L Lᵀ)⁻¹ = M⁻¹ per column.
    let noise = c
        .l()
        .transpose()
        .solve_upper_triangular(&e)
        .ok_or_else(|| CrmhError::State("singular Cholesky factor".into()))?;
    Ok(mean + noise)
}
