use std::collections::HashMap;

use crate::conjugate::{block_log_marginal, ClusterSuffStats, GaussFixedVarPrior};
use crate::dpmm::oracle::{ln_factorial, set_partitions, MAX_ORACLE_N};
use crate::dpmm::{canonical_partition, Partition};
use crate::error::{CrmhError, Result};
use crate::matrix::Rows;

fn ln_rising(a: f64, n: usize) -> f64 {
    (0..n).map(|i| (a + i as f64).ln()).sum()
}

/// Posterior over dish partitions of the customers under an HDP mixture,
/// summing the franchise prior times the marginal likelihood over every
/// seating and every assignment of tables to dishes.
pub fn exact_hdp_dish_posterior(
    x: &Rows,
    groups: &[u32],
    alpha: f64,
    gamma: f64,
    prior: &GaussFixedVarPrior,
) -> Result<Vec<(Partition, f64)>> {
    let n = x.len();
    if n > MAX_ORACLE_N {
        return Err(CrmhError::Size(format!("enumeration supports n <= {MAX_ORACLE_N}, got {n}")));
    }
    if groups.len() != n {
        return Err(CrmhError::Param("one group per row required".into()));
    }
    let mut members: Vec<(u32, Vec<usize>)> = Vec::new();
    for (i, &g) in groups.iter().enumerate() {
        match members.iter_mut().find(|(id, _)| *id == g) {
            Some((_, v)) => v.push(i),
            None => members.push((g, vec![i])),
        }
    }
    let seatings: Vec<Vec<Partition>> = members.iter().map(|(_, v)| set_partitions(v.len())).collect();
    let mut acc: HashMap<Partition, f64> = HashMap::new();
    let mut pick = vec![0usize; members.len()];
    loop {
        // Tables of this seating, as lists of customers.
        let mut tables: Vec<Vec<usize>> = Vec::new();
        let mut ln_seat = 0.0;
        for (s, (_, rows)) in members.iter().enumerate() {
            let p = &seatings[s][pick[s]];
            let t = *p.iter().max().unwrap() as usize + 1;
            let mut blocks = vec![Vec::new(); t];
            for (c, &b) in p.iter().enumerate() {
                blocks[b as usize].push(rows[c]);
            }
            ln_seat += t as f64 * gamma.ln() - ln_rising(gamma, rows.len());
            ln_seat += blocks.iter().map(|b| ln_factorial(b.len() - 1)).sum::<f64>();
            tables.extend(blocks);
        }
        for dishes in set_partitions(tables.len()) {
            let k = *dishes.iter().max().unwrap() as usize + 1;
            let mut per_dish = vec![0usize; k];
            let mut stats = vec![ClusterSuffStats::empty(x.dim); k];
            let mut label = vec![0usize; n];
            for (t, &d) in dishes.iter().enumerate() {
                per_dish[d as usize] += 1;
                for &i in &tables[t] {
                    stats[d as usize].add(x.row(i));
                    label[i] = d as usize;
                }
            }
            let ln_top = k as f64 * alpha.ln() - ln_rising(alpha, tables.len())
                + per_dish.iter().map(|&m| ln_factorial(m - 1)).sum::<f64>();
            let lik: f64 = stats.iter().map(|s| block_log_marginal(prior, s)).sum();
            let w = (ln_seat + ln_top + lik).exp();
            *acc.entry(canonical_partition(&label)).or_default() += w;
        }
        let mut s = 0;
        while s < pick.len() {
            pick[s] += 1;
            if pick[s] < seatings[s].len() {
                break;
            }
            pick[s] = 0;
            s += 1;
        }
        if s == pick.len() {
            break;
        }
    }
    let z: f64 = acc.values().sum();
    Ok(set_partitions(n)
        .into_iter()
        .map(|p| {
            let w = acc.get(&p).copied().unwrap_or(0.0) / z;
            (p, w)
        })
        .collect())
}
