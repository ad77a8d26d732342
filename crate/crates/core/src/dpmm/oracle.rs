use std::collections::HashMap;

use crate::conjugate::{block_log_marginal, ClusterSuffStats, GaussFixedVarPrior};
use crate::error::{CrmhError, Result};
use crate::matrix::Rows;

/// Restricted-growth encoding of a set partition.
pub type Partition = Vec<u32>;

pub const MAX_ORACLE_N: usize = 8;

pub(crate) fn set_partitions(n: usize) -> Vec<Partition> {
    fn rec(cur: &mut Vec<u32>, n: usize, max: u32, out: &mut Vec<Partition>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let lim = if cur.is_empty() { 0 } else { max + 1 };
        for b in 0..=lim {
            cur.push(b);
            rec(cur, n, max.max(b), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(&mut Vec::with_capacity(n), n, 0, &mut out);
    }
    out
}

fn enumerate(
    x: &Rows,
    prior: &GaussFixedVarPrior,
    log_prior: impl Fn(&[usize]) -> f64,
) -> Result<Vec<(Partition, f64)>> {
    let n = x.len();
    if n > MAX_ORACLE_N {
        return Err(CrmhError::Size(format!("enumeration supports n <= {MAX_ORACLE_N}, got {n}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let parts = set_partitions(n);
    let mut logw = Vec::with_capacity(parts.len());
    for p in &parts {
        let b = *p.iter().max().unwrap() as usize + 1;
        let mut blocks = vec![ClusterSuffStats::empty(x.dim); b];
        for (i, &l) in p.iter().enumerate() {
            blocks[l as usize].add(x.row(i));
        }
        let sizes: Vec<usize> = blocks.iter().map(|s| s.count).collect();
        let lik: f64 = blocks.iter().map(|s| block_log_marginal(prior, s)).sum();
        logw.push(log_prior(&sizes) + lik);
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.iter().map(|w| (w - m).exp()).sum();
    Ok(parts.into_iter().zip(logw).map(|(p, w)| (p, (w - m).exp() / z)).collect())
}

pub(crate) fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// Posterior over partitions of `x` under a DP(α) mixture, by enumeration.
pub fn exact_partition_posterior(x: &Rows, alpha: f64, prior: &GaussFixedVarPrior) -> Result<Vec<(Partition, f64)>> {
    enumerate(x, prior, |sizes| {
        sizes.len() as f64 * alpha.ln() + sizes.iter().map(|&m| ln_factorial(m - 1)).sum::<f64>()
    })
}

/// Posterior over partitions under a Pitman-Yor(α, σ) mixture, weighting each
/// partition by its EPPF.
pub fn exact_py_partition_posterior(
    x: &Rows,
    alpha: f64,
    sigma: f64,
    prior: &GaussFixedVarPrior,
) -> Result<Vec<(Partition, f64)>> {
    enumerate(x, prior, |sizes| {
        let b = sizes.len();
        let head: f64 = (1..b).map(|i| (alpha + i as f64 * sigma).ln()).sum();
        let blocks: f64 = sizes
            .iter()
            .map(|&m| (1..m).map(|j| (j as f64 - sigma).ln()).sum::<f64>())
            .sum();
        head + blocks
    })
}

/// Total-variation distance between an exact distribution and empirical counts.
pub fn total_variation(exact: &[(Partition, f64)], counts: &HashMap<Partition, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 1.0;
    }
    let mut seen = 0.0;
    let mut tv = 0.0;
    for (p, prob) in exact {
        let emp = counts.get(p).copied().unwrap_or(0) as f64 / total as f64;
        seen += emp;
        tv += (prob - emp).abs();
    }
    // Mass on partitions outside the support of `exact`.
    tv += (1.0 - seen).max(0.0);
    0.5 * tv
}
