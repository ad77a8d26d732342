use crate::chain::Metrics;
use crate::conjugate::{
    block_loglik_at, cluster_predictive_logpdf, prior_predictive_logpdf, ClusterSuffStats, GaussFixedVarPrior,
};
use crate::error::{param, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

use super::hybrid::check_discount;

/// Fully collapsed Gibbs sampler for DP (`sigma = 0`) and Pitman-Yor mixtures.
pub struct CollapsedMixture {
    prior: GaussFixedVarPrior,
    alpha: f64,
    sigma: f64,
    data: Rows,
    test: Rows,
    labels: Vec<usize>,
    clusters: Vec<ClusterSuffStats>,
    free: Vec<usize>,
    rng: RngStream,
    metrics_rng: RngStream,
    buf: Vec<f64>,
    opts: Vec<usize>,
    scratch: Vec<f64>,
}

impl CollapsedMixture {
    pub fn new(
        train: Rows,
        test: Rows,
        prior: GaussFixedVarPrior,
        alpha: f64,
        sigma: f64,
        rng: RngStream,
        metrics_rng: RngStream,
    ) -> Result<Self> {
        check_discount(alpha, sigma)?;
        if train.is_empty() || train.dim != prior.dim() {
            return param("training data must be non-empty and match the prior dimension");
        }
        let all = ClusterSuffStats::from_points(train.dim, train.iter());
        Ok(CollapsedMixture {
            prior,
            alpha,
            sigma,
            labels: vec![0; train.len()],
            data: train,
            test,
            clusters: vec![all],
            free: Vec::new(),
            rng,
            metrics_rng,
            buf: Vec::new(),
            opts: Vec::new(),
            scratch: Vec::new(),
        })
    }

    /// One ascending sweep of `P(z_i = k) ∝ (m_{-i,k} - σ) f_k(x_i)`, new `∝ (α + Kσ) f_H(x_i)`.
    pub fn iterate(&mut self) -> Result<Metrics> {
        let d = self.data.dim;
        for i in 0..self.data.len() {
            let x = &self.data.data[i * d..(i + 1) * d];
            let cur = self.labels[i];
            self.clusters[cur].remove(x);
            if self.clusters[cur].count == 0 {
                self.free.push(cur);
            }
            self.buf.clear();
            self.opts.clear();
            for (k, s) in self.clusters.iter().enumerate() {
                if s.count > 0 {
                    self.opts.push(k);
                    self.buf.push((s.count as f64 - self.sigma).ln() + cluster_predictive_logpdf(&self.prior, s, x));
                }
            }
            let kf = self.opts.len() as f64;
            self.buf
                .push((self.alpha + kf * self.sigma).ln() + prior_predictive_logpdf(&self.prior, x));
            let pick = self.rng.categorical_log_with(&self.buf, &mut self.scratch)?;
            let next = if pick < self.opts.len() {
                self.opts[pick]
            } else if let Some(k) = self.free.pop() {
                k
            } else {
                self.clusters.push(ClusterSuffStats::empty(d));
                self.clusters.len() - 1
            };
            self.clusters[next].add(x);
            self.labels[i] = next;
        }
        self.compact();
        self.metrics()
    }

    fn compact(&mut self) {
        let canon = super::canonical_partition(&self.labels);
        let k = canon.iter().max().map_or(0, |m| *m as usize + 1);
        let mut next = vec![ClusterSuffStats::empty(self.data.dim); k];
        for (i, &c) in canon.iter().enumerate() {
            if next[c as usize].count == 0 {
                next[c as usize] = std::mem::take(&mut self.clusters[self.labels[i]]);
            }
        }
        self.labels = canon.iter().map(|&c| c as usize).collect();
        self.clusters = next;
        self.free.clear();
    }

    fn metrics(&mut self) -> Result<Metrics> {
        let mut train_ll = 0.0;
        for s in &self.clusters {
            let th = self.prior.sample_atom(s, &mut self.metrics_rng);
            train_ll += block_loglik_at(&self.prior, s, &th);
        }
        let n = self.data.len() as f64;
        let kf = self.clusters.len() as f64;
        let test_ll = if self.test.is_empty() {
            None
        } else {
            let mut tot = 0.0;
            for x in self.test.iter() {
                let mut terms: Vec<f64> = self
                    .clusters
                    .iter()
                    .map(|s| (s.count as f64 - self.sigma).ln() + cluster_predictive_logpdf(&self.prior, s, x))
                    .collect();
                terms.push((self.alpha + kf * self.sigma).ln() + prior_predictive_logpdf(&self.prior, x));
                tot += crate::bench::metrics::logsumexp(&terms) - (n + self.alpha).ln();
            }
            Some(tot / self.test.len() as f64)
        };
        Ok(Metrics {
            train_ll,
            test_ll,
            num_components: self.clusters.len(),
            b_star: None,
            extra: None,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_components(&self) -> usize {
        self.clusters.len()
    }

    pub fn component_sizes(&self) -> Vec<u64> {
        self.clusters.iter().map(|s| s.count as u64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let p = GaussFixedVarPrior::isotropic(1, 0.0, 1.0, 1.0).unwrap();
        let mut s = CollapsedMixture::new(
            Rows::new(1, vec![1.0]).unwrap(),
            Rows::empty(1),
            p,
            1.0,
            0.0,
            RngStream::new(1, 1),
            RngStream::new(1, 2),
        )
        .unwrap();
        for _ in 0..10 {
            s.iterate().unwrap();
            assert_eq!(s.num_components(), 1);
        }
    }

    #[test]
    fn labels_stay_canonical() {
        let p = GaussFixedVarPrior::isotropic(1, 0.0, 25.0, 1.0).unwrap();
        let mut r = RngStream::new(3, 3);
        let pts: Vec<f64> = (0..30).map(|i| if i < 15 { -5.0 } else { 5.0 } + r.normal()).collect();
        let mut s = CollapsedMixture::new(
            Rows::new(1, pts).unwrap(),
            Rows::empty(1),
            p,
            1.0,
            0.0,
            RngStream::new(4, 1),
            RngStream::new(4, 2),
        )
        .unwrap();
        for _ in 0..20 {
            s.iterate().unwrap();
            let canon = crate::dpmm::canonical_partition(s.labels());
            assert_eq!(canon.iter().map(|&c| c as usize).collect::<Vec<_>>(), s.labels());
            assert_eq!(s.component_sizes().iter().sum::<u64>(), 30);
        }
    }
}
