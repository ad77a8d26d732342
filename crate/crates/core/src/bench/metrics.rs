use crate::error::{param, Result};

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Pairwise co-clustering F1 between two labelings.
pub fn pairwise_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return param(format!("label lengths differ: {} vs {}", pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return param("need at least two labels");
    }
    // Count pairs through the contingency table instead of O(n²) enumeration.
    use std::collections::HashMap;
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut pc: HashMap<usize, u64> = HashMap::new();
    let mut tc: HashMap<usize, u64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p, t)).or_default() += 1;
        *pc.entry(p).or_default() += 1;
        *tc.entry(t).or_default() += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let pred_pairs: u64 = pc.values().map(|&c| pairs(c)).sum();
    let true_pairs: u64 = tc.values().map(|&c| pairs(c)).sum();
    if pred_pairs == 0 && true_pairs == 0 {
        return Ok(1.0);
    }
    if pred_pairs == 0 || true_pairs == 0 || both == 0 {
        return Ok(0.0);
    }
    let precision = both as f64 / pred_pairs as f64;
    let recall = both as f64 / true_pairs as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_f1(pred: &[usize], truth: &[usize]) -> f64 {
        let (mut both, mut pp, mut tp) = (0, 0, 0);
        for i in 0..pred.len() {
            for j in i + 1..pred.len() {
                let a = pred[i] == pred[j];
                let b = truth[i] == truth[j];
                pp += a as u32;
                tp += b as u32;
                both += (a && b) as u32;
            }
        }
        if pp == 0 && tp == 0 {
            return 1.0;
        }
        if both == 0 {
            return 0.0;
        }
        let (p, r) = (both as f64 / pp as f64, both as f64 / tp as f64);
        2.0 * p * r / (p + r)
    }

    #[test]
    fn identical_is_one() {
        assert_eq!(pairwise_f1(&[1, 1, 2, 3], &[1, 1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn hand_example_is_zero() {
        assert_eq!(pairwise_f1(&[1, 1, 2], &[1, 2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn singletons_vs_one_cluster() {
        assert_eq!(pairwise_f1(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(pairwise_f1(&[0, 1], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(
            pred in proptest::collection::vec(0usize..4, 2..30),
            seed in any::<u64>(),
        ) {
            let mut r = crate::rng::RngStream::new(seed, 0);
            let truth: Vec<usize> = pred.iter().map(|_| r.below(3) as usize).collect();
            let f = pairwise_f1(&pred, &truth).unwrap();
            prop_assert!((f - brute_f1(&pred, &truth)).abs() < 1e-12);
        }

        #[test]
        fn invariant_to_relabeling(
            pred in proptest::collection::vec(0usize..4, 2..30),
            truth_seed in any::<u64>(),
        ) {
            let mut r = crate::rng::RngStream::new(truth_seed, 1);
            let truth: Vec<usize> = pred.iter().map(|_| r.below(3) as usize).collect();
            let relabeled: Vec<usize> = pred.iter().map(|p| 100 - 7 * p).collect();
            let f1 = pairwise_f1(&pred, &truth).unwrap();
            prop_assert_eq!(f1, pairwise_f1(&relabeled, &truth).unwrap());
            prop_assert_eq!(f1, pairwise_f1(&truth, &pred).unwrap());
        }
    }
}
