//! Pitman-Yor mixtures run on the shared mixture hybrid with a nonzero
//! discount.

use crate::conjugate::{ClusterSuffStats, GaussFixedVarPrior};
use crate::dpmm::hybrid::mixture_assign_logprobs;
use crate::dpmm::MixtureHybrid;
use crate::error::Result;
use crate::matrix::Rows;
use crate::rng::RngStream;

/// Assignment log-weights under the decomposed Pitman-Yor posterior.
#[allow(clippy::too_many_arguments)]
pub fn py_assign_logprobs(
    prior: &GaussFixedVarPrior,
    b_star: f64,
    weights: &[f64],
    atoms: &[Vec<f64>],
    tail: &[ClusterSuffStats],
    alpha: f64,
    sigma: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    mixture_assign_logprobs(prior, b_star, weights, atoms, tail, alpha, sigma, x)
}

/// Serial hybrid Pitman-Yor mixture; requires `alpha > 0` and `0 <= sigma < 1`.
pub fn pymm_hybrid(
    train: Rows,
    test: Rows,
    prior: GaussFixedVarPrior,
    alpha: f64,
    sigma: f64,
    root: &RngStream,
) -> Result<MixtureHybrid> {
    MixtureHybrid::new(train, test, prior, alpha, sigma, root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpmm::{canonical_partition, dpmm_assign_logprobs, exact_py_partition_posterior, total_variation};
    use std::collections::HashMap;

    fn prior1() -> GaussFixedVarPrior {
        GaussFixedVarPrior::isotropic(1, 0.0, 4.0, 1.0).unwrap()
    }

    #[test]
    fn zero_discount_is_dp() {
        let tail = vec![ClusterSuffStats::from_points(1, [&[0.5][..], &[0.9][..]])];
        let atoms = [vec![1.0], vec![-2.0]];
        let a = py_assign_logprobs(&prior1(), 0.4, &[0.3, 0.7], &atoms, &tail, 1.3, 0.0, &[0.2]).unwrap();
        let b = dpmm_assign_logprobs(&prior1(), 0.4, &[0.3, 0.7], &atoms, &tail, 1.3, &[0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_leftover_mass_kills_tail() {
        let tail = vec![ClusterSuffStats::from_points(1, [&[0.5][..]])];
        let lw = py_assign_logprobs(&prior1(), 1.0, &[1.0], &[vec![0.0]], &tail, 1.0, 0.4, &[0.0]).unwrap();
        assert!(lw[0].is_finite());
        assert_eq!(lw[1], f64::NEG_INFINITY);
        assert_eq!(lw[2], f64::NEG_INFINITY);
    }

    #[test]
    fn tail_weights_follow_discounted_counts() {
        // With J=0 the tail is a plain Pitman-Yor urn: m-σ for each cluster,
        // α+Kσ for a new one.
        let flat = GaussFixedVarPrior::isotropic(1, 0.0, 1e-12, 1.0).unwrap();
        let tail = vec![
            ClusterSuffStats::from_points(1, [&[0.0][..], &[0.0][..], &[0.0][..]]),
            ClusterSuffStats::from_points(1, [&[0.0][..]]),
        ];
        let (a, s) = (0.5, 0.3);
        let lw = py_assign_logprobs(&flat, 0.0, &[], &[], &tail, a, s, &[0.0]).unwrap();
        let want = [3.0 - s, 1.0 - s, a + 2.0 * s];
        let z: f64 = want.iter().sum();
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = lw.iter().map(|w| (w - m).exp()).sum();
        for (l, w) in lw.iter().zip(want) {
            assert!(((l - m).exp() / tot - w / z).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_discount() {
        assert!(py_assign_logprobs(&prior1(), 0.5, &[], &[], &[], 1.0, 1.0, &[0.0]).is_err());
        assert!(py_assign_logprobs(&prior1(), 0.5, &[], &[], &[], 1.0, -0.1, &[0.0]).is_err());
        assert!(pymm_hybrid(Rows::new(1, vec![0.0]).unwrap(), Rows::empty(1), prior1(), 0.0, 0.2, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn zero_discount_trace_equals_dp_trace() {
        let x = Rows::new(1, vec![-2.0, -1.0, 0.5, 1.9, 2.2]).unwrap();
        let root = RngStream::new(8, 0);
        let mut p = pymm_hybrid(x.clone(), Rows::empty(1), prior1(), 1.0, 0.0, &root).unwrap();
        let mut d = MixtureHybrid::new(x, Rows::empty(1), prior1(), 1.0, 0.0, &root).unwrap();
        for _ in 0..50 {
            let a = p.iterate().unwrap();
            let b = d.iterate().unwrap();
            assert_eq!(a.train_ll.to_bits(), b.train_ll.to_bits());
            assert_eq!(a.b_star.unwrap().to_bits(), b.b_star.unwrap().to_bits());
            assert_eq!(p.labels(), d.labels());
        }
    }

    #[test]
    fn leftover_times_weight_moment() {
        // E[B* π_k] = (m_k - σ)/(n + α) at J = K.
        let (a, s) = (1.0, 0.3);
        let m = [3.0, 2.0, 1.0];
        let n: f64 = m.iter().sum();
        let mut rng = RngStream::new(17, 0);
        let draws = 100_000;
        let mut acc = [(0.0, 0.0); 3];
        for _ in 0..draws {
            let js = 3.0 * s;
            let b = rng.beta(n - js, a + js).unwrap();
            let w = rng.dirichlet(&m.map(|v| v - s)).unwrap();
            for k in 0..3 {
                let v = b * w[k];
                acc[k].0 += v;
                acc[k].1 += v * v;
            }
        }
        for k in 0..3 {
            let mean = acc[k].0 / draws as f64;
            let se = ((acc[k].1 / draws as f64 - mean * mean) / draws as f64).sqrt();
            let want = (m[k] - s) / (n + a);
            assert!((mean - want).abs() < 4.0 * se, "k={k}: {mean} vs {want}");
        }
    }

    #[test]
    fn discount_grows_cluster_count() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let mut r = RngStream::new(100 + seed, 0);
            let x = Rows::new(1, (0..30).map(|_| 6.0 * r.uniform() - 3.0).collect()).unwrap();
            let root = RngStream::new(200 + seed, 0);
            let mut k = [0.0; 2];
            for (slot, sigma) in [0.0, 0.7].into_iter().enumerate() {
                let mut h = pymm_hybrid(x.clone(), Rows::empty(1), prior1(), 1.0, sigma, &root).unwrap();
                for it in 0..400 {
                    let m = h.iterate().unwrap();
                    if it >= 100 {
                        k[slot] += m.num_components as f64;
                    }
                }
            }
            if k[1] > k[0] {
                wins += 1;
            }
        }
        assert_eq!(wins, 10);
    }

    #[test]
    fn matches_eppf_enumeration() {
        let x = Rows::new(1, vec![-2.0, -2.0, -1.9, 1.9, 2.0, 2.0]).unwrap();
        let exact = exact_py_partition_posterior(&x, 1.0, 0.3, &prior1()).unwrap();
        let root = RngStream::new(2, 0);
        let mut h = pymm_hybrid(x, Rows::empty(1), prior1(), 1.0, 0.3, &root).unwrap();
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        for it in 0..21_000 {
            h.iterate().unwrap();
            if it >= 1000 {
                *counts.entry(canonical_partition(&h.labels())).or_default() += 1;
            }
        }
        let tv = total_variation(&exact, &counts);
        assert!(tv < 0.05, "TV {tv}");
    }
}
