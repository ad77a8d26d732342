use nalgebra::DMatrix;

use crate::error::{param, Result};
use crate::rng::RngStream;

/// Sequential (buffet) draw of an `n × K` binary matrix from the two-parameter
/// beta-Bernoulli prior with mass `alpha` and concentration `c`.
pub fn ibp_prior_forward(n: usize, alpha: f64, c: f64, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    if n == 0 {
        return param("need at least one row");
    }
    if !(alpha >= 0.0) || !(c > 0.0) {
        return param("mass must be >= 0 and concentration > 0");
    }
    let mut cols: Vec<Vec<u8>> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for i in 0..n {
        let den = c + i as f64;
        for (col, m) in cols.iter_mut().zip(counts.iter_mut()) {
            if rng.bernoulli(*m as f64 / den) {
                col[i] = 1;
                *m += 1;
            }
        }
        let fresh = rng.poisson(alpha * c / den)?;
        for _ in 0..fresh {
            let mut col = vec![0u8; n];
            col[i] = 1;
            cols.push(col);
            counts.push(1);
        }
    }
    Ok(DMatrix::from_fn(n, cols.len(), |i, k| cols[k][i] as f64))
}

/// Non-empty columns sorted into left-ordered form (row 0 most significant).
/// Two matrices that differ only by a column permutation encode identically.
pub fn left_ordered_form(z: &DMatrix<f64>) -> Vec<Vec<u8>> {
    let mut cols: Vec<Vec<u8>> = z
        .column_iter()
        .map(|c| c.iter().map(|&v| (v != 0.0) as u8).collect::<Vec<u8>>())
        .filter(|c| c.iter().any(|&v| v == 1))
        .collect();
    cols.sort_by(|a, b| b.cmp(a));
    cols
}
