//! Counter-based splittable random streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so a worker
//! stream can be rebuilt anywhere from the root seed and its path of split ids.

use rand::RngCore;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{param, CrmhError, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const KEY_SALT: u64 = 0x8CB9_2BA7_2F3D_8DD7;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    key: u64,
    key2: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(seed ^ mix64(stream_id ^ KEY_SALT));
        let key2 = mix64(key ^ GOLDEN);
        RngStream {
            seed,
            stream_id,
            counter: 0,
            key,
            key2,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream; depends on the parent's identity only, never on its counter.
    pub fn split(&self, child_id: u64) -> RngStream {
        let id = mix64(self.stream_id ^ mix64(child_id.wrapping_add(SPLIT_SALT)));
        RngStream::new(self.seed, id)
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        let z = self.key.wrapping_add(c.wrapping_add(1).wrapping_mul(GOLDEN));
        mix64(mix64(z) ^ self.key2)
    }

    /// Uniform on [0, 1) with 53 bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_word() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Lemire's multiply-shift with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_word();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        if !(shape > 0.0) || !shape.is_finite() {
            return param(format!("gamma shape must be positive, got {shape}"));
        }
        let g = Gamma::new(shape, 1.0).map_err(|e| CrmhError::Param(e.to_string()))?;
        Ok(g.sample(self))
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0) || !(b > 0.0) {
            return param(format!("beta shapes must be positive, got ({a}, {b})"));
        }
        let ga = Gamma::new(a, 1.0).map_err(|e| CrmhError::Param(e.to_string()))?;
        let gb = Gamma::new(b, 1.0).map_err(|e| CrmhError::Param(e.to_string()))?;
        loop {
            let x = ga.sample(self);
            let y = gb.sample(self);
            let s = x + y;
            if s > 0.0 {
                return Ok(x / s);
            }
        }
    }

    pub fn dirichlet(&mut self, conc: &[f64]) -> Result<Vec<f64>> {
        if conc.is_empty() {
            return param("dirichlet needs at least one concentration");
        }
        if let Some(bad) = conc.iter().find(|a| !(**a > 0.0)) {
            return param(format!("dirichlet concentration must be positive, got {bad}"));
        }
        if conc.len() == 1 {
            return Ok(vec![1.0]);
        }
        let gammas = conc
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| CrmhError::Param(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        loop {
            let mut draws: Vec<f64> = gammas.iter().map(|g| g.sample(self)).collect();
            let s: f64 = draws.iter().sum();
            if s > 0.0 {
                draws.iter_mut().for_each(|d| *d /= s);
                return Ok(draws);
            }
        }
    }

    pub fn poisson(&mut self, rate: f64) -> Result<u64> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return param(format!("poisson rate must be nonnegative, got {rate}"));
        }
        if rate == 0.0 {
            return Ok(0);
        }
        let p = Poisson::new(rate).map_err(|e| CrmhError::Param(e.to_string()))?;
        Ok(p.sample(self) as u64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draw an index with probability proportional to `exp(log_weights[i])`.
    /// Consumes exactly one uniform.
    pub fn categorical_log(&mut self, log_weights: &[f64]) -> Result<usize> {
        let mut scratch = Vec::with_capacity(log_weights.len());
        self.categorical_log_with(log_weights, &mut scratch)
    }

    /// As [`categorical_log`](Self::categorical_log) but reuses a scratch buffer.
    pub fn categorical_log_with(&mut self, log_weights: &[f64], scratch: &mut Vec<f64>) -> Result<usize> {
        if log_weights.is_empty() {
            return param("categorical needs at least one weight");
        }
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(CrmhError::Degenerate);
        }
        if max.is_nan() || log_weights.iter().any(|w| w.is_nan()) {
            return param("categorical log-weight is NaN");
        }
        scratch.clear();
        let mut total = 0.0;
        for &w in log_weights {
            let e = (w - max).exp();
            total += e;
            scratch.push(e);
        }
        let mut u = self.uniform() * total;
        let mut last = 0;
        for (i, &e) in scratch.iter().enumerate() {
            if e > 0.0 {
                last = i;
                if u < e {
                    return Ok(i);
                }
                u -= e;
            }
        }
        Ok(last)
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        self.choose_distinct(n, n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

pub fn split_stream(parent: &RngStream, child_id: u64) -> RngStream {
    parent.split(child_id)
}

pub fn sample_beta(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    rng.beta(a, b)
}

pub fn sample_dirichlet(rng: &mut RngStream, conc: &[f64]) -> Result<Vec<f64>> {
    rng.dirichlet(conc)
}

pub fn sample_poisson(rng: &mut RngStream, rate: f64) -> Result<u64> {
    rng.poisson(rate)
}

pub fn sample_categorical_log(rng: &mut RngStream, log_weights: &[f64]) -> Result<usize> {
    rng.categorical_log(log_weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 100_000;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn same_identity_same_sequence() {
        let s = RngStream::new(7, 0);
        let mut a = s.split(3);
        let mut b = s.split(3);
        for _ in 0..1000 {
            assert_eq!(a.next_word(), b.next_word());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let s = RngStream::new(7, 0);
        let mut a = s.split(3);
        let mut b = s.split(4);
        let same = (0..1000).filter(|_| a.uniform() == b.uniform()).count();
        assert!(1000 - same >= 990);
    }

    #[test]
    fn split_is_not_commutative() {
        let s = RngStream::new(11, 5);
        let mut a = s.split(1).split(2);
        let mut b = s.split(2).split(1);
        let xa: Vec<u64> = (0..100).map(|_| a.next_word()).collect();
        let xb: Vec<u64> = (0..100).map(|_| b.next_word()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn split_ignores_parent_counter() {
        let s = RngStream::new(1, 2);
        let mut t = s.clone();
        t.uniform();
        assert_eq!(s.split(9), t.split(9));
    }

    #[test]
    fn counter_tracks_words() {
        let mut s = RngStream::new(1, 2);
        s.uniform();
        s.uniform();
        assert_eq!(s.counter(), 2);
        let mut buf = [0u8; 20];
        s.fill_bytes(&mut buf);
        assert_eq!(s.counter(), 5);
    }

    #[test]
    fn beta_moments() {
        let mut r = RngStream::new(3, 1);
        let xs: Vec<f64> = (0..N).map(|_| r.beta(3.0, 8.0).unwrap()).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - 3.0 / 11.0).abs() < 0.005, "{m}");
        let ys: Vec<f64> = (0..N).map(|_| r.beta(2.0, 2.0).unwrap()).collect();
        let (_, v) = mean_var(&ys);
        assert!((v - 0.05).abs() < 0.002, "{v}");
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let mut r = RngStream::new(4, 1);
        let mut xs: Vec<f64> = (0..N).map(|_| r.beta(1.0, 1.0).unwrap()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "{ks}");
    }

    #[test]
    fn beta_small_shapes_stay_in_unit_interval() {
        let mut r = RngStream::new(5, 1);
        for _ in 0..10_000 {
            let x = r.beta(0.01, 0.02).unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn beta_rejects_bad_shapes() {
        let mut r = RngStream::new(5, 1);
        assert!(r.beta(0.0, 1.0).is_err());
        assert!(r.beta(1.0, -2.0).is_err());
    }

    #[test]
    fn dirichlet_moments_and_simplex() {
        let mut r = RngStream::new(6, 1);
        assert_eq!(r.dirichlet(&[1.0]).unwrap(), vec![1.0]);
        let mut acc = [0.0; 3];
        for _ in 0..N {
            let d = r.dirichlet(&[2.0, 2.0, 4.0]).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                acc[k] += d[k];
            }
        }
        let want = [0.25, 0.25, 0.5];
        for k in 0..3 {
            assert!((acc[k] / N as f64 - want[k]).abs() < 0.005);
        }
        assert!(r.dirichlet(&[]).is_err());
        assert!(r.dirichlet(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn poisson_moments() {
        let mut r = RngStream::new(8, 1);
        assert_eq!(r.poisson(0.0).unwrap(), 0);
        assert!(r.poisson(-1.0).is_err());
        let xs: Vec<f64> = (0..N).map(|_| r.poisson(2.5).unwrap() as f64).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - 2.5).abs() < 0.02, "{m}");
        let zeros = (0..N).filter(|_| r.poisson(1.0).unwrap() == 0).count() as f64 / N as f64;
        assert!((zeros - (-1.0f64).exp()).abs() < 0.006, "{zeros}");
    }

    #[test]
    fn categorical_frequencies() {
        let mut r = RngStream::new(9, 1);
        let w = [2f64.ln(), 0.0, 0.0];
        let mut c = [0usize; 3];
        for _ in 0..N {
            c[r.categorical_log(&w).unwrap()] += 1;
        }
        let want = [0.5, 0.25, 0.25];
        for k in 0..3 {
            assert!((c[k] as f64 / N as f64 - want[k]).abs() < 0.01);
        }
    }

    #[test]
    fn categorical_edge_cases() {
        let mut r = RngStream::new(10, 1);
        for _ in 0..1000 {
            assert_eq!(r.categorical_log(&[0.0, f64::NEG_INFINITY]).unwrap(), 0);
        }
        assert!(matches!(
            r.categorical_log(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(CrmhError::Degenerate)
        ));
        assert!(r.categorical_log(&[]).is_err());
    }

    #[test]
    fn categorical_shift_invariant() {
        let w = [0.5, -1.0, 2.0, 0.0];
        let shifted: Vec<f64> = w.iter().map(|x| x + 1000.0).collect();
        let mut a = RngStream::new(12, 1);
        let mut b = RngStream::new(12, 1);
        for _ in 0..1000 {
            assert_eq!(a.categorical_log(&w).unwrap(), b.categorical_log(&shifted).unwrap());
        }
        assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn normal_moments() {
        let mut r = RngStream::new(13, 1);
        let xs: Vec<f64> = (0..N).map(|_| r.normal()).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 4.0 / (N as f64).sqrt());
        assert!((v - 1.0).abs() < 4.0 * (2.0 / N as f64).sqrt());
    }

    #[test]
    fn below_and_permutation() {
        let mut r = RngStream::new(14, 1);
        let mut c = [0usize; 5];
        for _ in 0..50_000 {
            c[r.below(5) as usize] += 1;
        }
        assert!(c.iter().all(|&x| (x as f64 - 10_000.0).abs() < 400.0));
        let mut p = r.permutation(10);
        p.sort();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }
}
