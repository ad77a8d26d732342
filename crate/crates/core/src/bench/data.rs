//! Synthetic data sets, the train/test split and CSV I/O.

use std::path::Path;

use nalgebra::DMatrix;

use crate::chain::streams;
use crate::error::{param, CrmhError, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Rows,
    pub labels: Option<Vec<usize>>,
    pub groups: Option<Vec<u32>>,
    /// Ground-truth binary features and loadings, when generated.
    pub z_true: Option<DMatrix<f64>>,
    pub a_true: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn plain(x: Rows) -> Self {
        Dataset {
            x,
            labels: None,
            groups: None,
            z_true: None,
            a_true: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
            z_true: self
                .z_true
                .as_ref()
                .map(|z| DMatrix::from_fn(idx.len(), z.ncols(), |r, c| z[(idx[r], c)])),
            a_true: self.a_true.clone(),
        }
    }
}

/// Two unit-covariance blobs at `+5·1` and `-5·1`, alternating labels.
pub fn gen_gauss_blobs(n: usize, dim: usize, rng: &mut RngStream) -> Result<Dataset> {
    if dim == 0 {
        return param("dimension must be at least 1");
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = i % 2;
        let centre = if l == 0 { 5.0 } else { -5.0 };
        data.extend((0..dim).map(|_| centre + rng.normal()));
        labels.push(l);
    }
    let mut d = Dataset::plain(Rows::new(dim, data)?);
    d.labels = Some(labels);
    Ok(d)
}

/// `groups` contiguous restaurants, each drawing from the same two blobs.
pub fn gen_grouped(n: usize, dim: usize, groups: usize, rng: &mut RngStream) -> Result<Dataset> {
    if groups == 0 {
        return param("need at least one group");
    }
    let mut d = gen_gauss_blobs(n, dim, rng)?;
    d.groups = Some((0..n).map(|i| (i * groups / n.max(1)) as u32).collect());
    Ok(d)
}

pub const CAMBRIDGE_SIDE: usize = 6;
pub const CAMBRIDGE_NOISE_SD: f64 = 0.5;

/// The four 6×6 patterns, one per quadrant: a filled block, a diagonal, a
/// cross and a ring.
pub fn cambridge_patterns() -> DMatrix<f64> {
    let s = CAMBRIDGE_SIDE;
    let mut a = DMatrix::zeros(4, s * s);
    let mut set = |k: usize, r: usize, c: usize| a[(k, r * s + c)] = 1.0;
    for r in 0..3 {
        for c in 0..3 {
            set(0, r, c);
        }
    }
    for i in 0..3 {
        set(1, i, 3 + i);
    }
    for i in 0..3 {
        set(2, 4, i);
        set(2, 3 + i, 1);
    }
    for r in 3..6 {
        for c in 3..6 {
            if r != 4 || c != 4 {
                set(3, r, c);
            }
        }
    }
    a
}

/// Each pattern included with probability ½, plus N(0, 0.5²) noise.
pub fn gen_cambridge(n: usize, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 {
        return param("need at least one row");
    }
    let a = cambridge_patterns();
    let d = a.ncols();
    let mut z = DMatrix::zeros(n, 4);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..4 {
            if rng.bernoulli(0.5) {
                z[(i, k)] = 1.0;
            }
        }
        for j in 0..d {
            let mean: f64 = (0..4).map(|k| z[(i, k)] * a[(k, j)]).sum();
            data.push(mean + CAMBRIDGE_NOISE_SD * rng.normal());
        }
    }
    let mut ds = Dataset::plain(Rows::new(d, data)?);
    ds.z_true = Some(z);
    ds.a_true = Some(a);
    Ok(ds)
}

/// Train and test index sets, each ascending; a pure function of
/// `(seed, n, test_fraction)`.
pub fn split_indices(seed: u64, n: usize, test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return param(format!("test fraction must lie in [0, 1), got {test_fraction}"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let perm = RngStream::new(seed, 0).split(streams::SPLIT).permutation(n);
    let mut test: Vec<usize> = perm[..n_test].to_vec();
    let mut train: Vec<usize> = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Write rows as CSV plus `.labels` / `.groups` companions when present.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    for row in ds.x.iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    if let Some(l) = &ds.labels {
        write_lines(&path.with_extension("labels"), l.iter())?;
    }
    if let Some(g) = &ds.groups {
        write_lines(&path.with_extension("groups"), g.iter())?;
    }
    Ok(())
}

fn write_lines<T: std::fmt::Display>(path: &Path, it: impl Iterator<Item = T>) -> Result<()> {
    let mut s = String::new();
    for v in it {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CrmhError {
    CrmhError::Io(std::io::Error::other(e.to_string()))
}

/// Read a numeric CSV matrix; a non-numeric first line is taken as a header.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut data = Vec::new();
    let mut dim = None;
    for (no, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if no == 0 => continue,
            Err(_) => return Err(CrmhError::Config(format!("{}: line {} is not numeric", path.display(), no + 1))),
        };
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(CrmhError::Config(format!("{}: ragged row {}", path.display(), no + 1)))
            }
            _ => {}
        }
        data.extend(vals);
    }
    let dim = dim.ok_or_else(|| CrmhError::Config(format!("{}: no data rows", path.display())))?;
    let mut ds = Dataset::plain(Rows::new(dim, data)?);
    let n = ds.len();
    ds.labels = read_companion(&path.with_extension("labels"), n)?;
    ds.groups = read_companion(&path.with_extension("groups"), n)?;
    Ok(ds)
}

fn read_companion<T: std::str::FromStr>(path: &Path, n: usize) -> Result<Option<Vec<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let v: Vec<T> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CrmhError::Config(format!("{}: expected one integer per line", path.display())))?;
    if v.len() != n {
        return Err(CrmhError::Config(format!("{}: {} entries for {n} rows", path.display(), v.len())));
    }
    Ok(Some(v))
}
