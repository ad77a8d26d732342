//! Hybrid beta-Bernoulli sampler for the linear-Gaussian latent feature model.
//! Features `k ≤ J` carry `(μ_k, A_k)`; tail features exist only on proposing
//! shards and keep `ZᵀZ` and `Zᵀ(residual)` so their loadings stay integrated out.

use nalgebra::DMatrix;

use crate::chain::{check_sorted_reports, GlobalModel, HybridChain, Metrics, ShardModel};
use crate::conjugate::gauss::LN_2PI;
use crate::conjugate::{posterior_from_stats, sample_features, FeatureSuffStats, LinearGaussianModel, TailPredictor};
use crate::dist::message::{ComponentStats, Message, NewComponent, ParamEntry, Source};
use crate::error::{param, CrmhError, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

fn check_mass(alpha: f64, c: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return param(format!("mass must be non-negative, got {alpha}"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return param(format!("concentration must be positive, got {c}"));
    }
    Ok(())
}

fn sigmoid_draw(log_odds: f64, rng: &mut RngStream) -> bool {
    if log_odds == f64::INFINITY {
        return true;
    }
    if log_odds == f64::NEG_INFINITY {
        return false;
    }
    let p = if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    };
    rng.uniform() < p
}

/// Rows of one worker with their feature memberships.
pub struct IbpShard {
    worker_id: u32,
    model: LinearGaussianModel,
    alpha: f64,
    n_total: u64,
    data: Rows,
    /// `n × J`, row-major.
    z: Vec<u8>,
    mu: Vec<f64>,
    /// `J × D`, row-major.
    theta: Vec<f64>,
    /// Local and other-shard counts of instantiated features.
    counts: Vec<u64>,
    others: Vec<u64>,
    tail_of: Vec<Vec<u32>>,
    tail: FeatureSuffStats,
    resid: Vec<f64>,
    mean: Vec<f64>,
    zt: Vec<f64>,
}

impl IbpShard {
    /// `n_total` is the number of rows across all shards. With `all_ones`,
    /// every row starts with one shared feature; otherwise with none.
    pub fn new(worker_id: u32, model: LinearGaussianModel, alpha: f64, n_total: u64, data: Rows, all_ones: bool) -> Result<Self> {
        check_mass(alpha, 1.0)?;
        if data.dim != model.dim {
            return param("data width differs from model dimension");
        }
        if (data.len() as u64) > n_total || n_total == 0 {
            return param("shard holds more rows than the global total");
        }
        let n = data.len();
        let j = all_ones as usize;
        Ok(IbpShard {
            worker_id,
            model,
            alpha,
            n_total,
            z: vec![1; n * j],
            mu: vec![0.5; j],
            theta: vec![0.0; j * model.dim],
            counts: vec![n as u64; j],
            others: vec![0; j],
            tail_of: vec![Vec::new(); n],
            tail: FeatureSuffStats::empty(0, model.dim),
            resid: vec![0.0; model.dim],
            mean: vec![0.0; model.dim],
            zt: Vec::new(),
            data,
        })
    }

    /// Replace the instantiated features. `z` is `n × J` row-major.
    pub fn set_state(&mut self, z: Vec<u8>, mu: Vec<f64>, theta: Vec<f64>) -> Result<()> {
        let j = mu.len();
        if z.len() != self.data.len() * j || theta.len() != j * self.model.dim {
            return param("instantiated state has inconsistent shapes");
        }
        self.z = z;
        self.mu = mu;
        self.theta = theta;
        self.others = vec![0; j];
        self.recount();
        self.tail_of.iter_mut().for_each(Vec::clear);
        self.tail = FeatureSuffStats::empty(0, self.model.dim);
        Ok(())
    }

    fn recount(&mut self) {
        let j = self.mu.len();
        self.counts = vec![0; j];
        for row in self.z.chunks_exact(j.max(1)) {
            for (c, &v) in self.counts.iter_mut().zip(row) {
                *c += v as u64;
            }
        }
    }

    pub fn num_instantiated(&self) -> usize {
        self.mu.len()
    }

    pub fn num_tail(&self) -> usize {
        self.tail.gram.diagonal().iter().filter(|&&m| m > 0.5).count()
    }

    pub fn data(&self) -> &Rows {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Rows {
        &mut self.data
    }

    pub fn z_inst(&self, i: usize, k: usize) -> bool {
        self.z[i * self.mu.len() + k] == 1
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Full `n × K` membership matrix, instantiated columns first, then live
    /// tail features in slot order.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let j = self.mu.len();
        let live = self.live_slots();
        let mut rank = vec![usize::MAX; self.tail.num_features()];
        for (r, &t) in live.iter().enumerate() {
            rank[t] = r;
        }
        let mut out = DMatrix::zeros(self.data.len(), j + live.len());
        for i in 0..self.data.len() {
            for k in 0..j {
                out[(i, k)] = self.z[i * j + k] as f64;
            }
            for &t in &self.tail_of[i] {
                out[(i, j + rank[t as usize])] = 1.0;
            }
        }
        out
    }

    fn live_slots(&self) -> Vec<usize> {
        (0..self.tail.num_features()).filter(|&t| self.tail.gram[(t, t)] > 0.5).collect()
    }

    fn residual(&mut self, i: usize) {
        let d = self.model.dim;
        let j = self.mu.len();
        self.resid.copy_from_slice(self.data.row(i));
        for k in 0..j {
            if self.z[i * j + k] == 1 {
                for (r, t) in self.resid.iter_mut().zip(&self.theta[k * d..(k + 1) * d]) {
                    *r -= t;
                }
            }
        }
    }

    fn dense_tail(&mut self, i: usize) {
        self.zt.clear();
        self.zt.resize(self.tail.num_features(), 0.0);
        for &t in &self.tail_of[i] {
            self.zt[t as usize] = 1.0;
        }
    }

    fn ll(&self, var: f64) -> f64 {
        let sq: f64 = self.resid.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * self.model.dim as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
    }

    /// Tail moments for the current `zt`, written into `self.mean`.
    fn tail_moments(&mut self, pred: Option<&TailPredictor>, fresh: usize) -> f64 {
        match pred {
            Some(p) => p.moments(&self.zt, fresh, &mut self.mean),
            None => {
                self.mean.iter_mut().for_each(|m| *m = 0.0);
                self.model.noise_var + fresh as f64 * self.model.feature_var
            }
        }
    }

    /// Resample `Z_ik` for instantiated `k`, given the tail moments already in
    /// `self.mean` and `var`, with `self.resid` holding the current residual.
    fn finite_step(&mut self, i: usize, k: usize, var: f64, rng: &mut RngStream) {
        let d = self.model.dim;
        let j = self.mu.len();
        let th = &self.theta[k * d..(k + 1) * d];
        let on = self.z[i * j + k] == 1;
        if on {
            for (r, t) in self.resid.iter_mut().zip(th) {
                *r += t;
            }
        }
        // resid now excludes feature k
        let mut dot = 0.0;
        let mut tt = 0.0;
        for ((r, m), t) in self.resid.iter().zip(&self.mean).zip(th) {
            dot += t * (r - m);
            tt += t * t;
        }
        let mu = self.mu[k];
        let log_odds = mu.ln() - (1.0 - mu).ln() + (2.0 * dot - tt) / (2.0 * var);
        let take = sigmoid_draw(log_odds, rng);
        if take {
            for (r, t) in self.resid.iter_mut().zip(th) {
                *r -= t;
            }
        }
        self.counts[k] = self.counts[k] - on as u64 + take as u64;
        self.z[i * j + k] = take as u8;
    }

    /// Gibbs update of `Z_ik` for one instantiated feature, tail taken as-is.
    pub fn gibbs_finite(&mut self, i: usize, k: usize, rng: &mut RngStream) -> Result<()> {
        if k >= self.mu.len() || i >= self.data.len() {
            return param("row or feature index out of range");
        }
        self.residual(i);
        self.dense_tail(i);
        let pred = self.detached_predictor(i)?;
        let var = self.tail_moments(pred.as_ref(), 0);
        self.finite_step(i, k, var, rng);
        self.reattach(i);
        Ok(())
    }

    fn detached_predictor(&mut self, i: usize) -> Result<Option<TailPredictor>> {
        self.detach(i);
        self.predictor()
    }

    fn detach(&mut self, i: usize) {
        if !self.tail_of[i].is_empty() {
            self.tail.remove_row(&self.zt, &self.resid);
        }
    }

    fn predictor(&self) -> Result<Option<TailPredictor>> {
        if self.tail.num_features() == 0 {
            return Ok(None);
        }
        Ok(Some(TailPredictor::new(&self.tail, &self.model)?))
    }

    /// Instantiated features held by row `i` alone lose their parameters and
    /// join the row's collapsed singletons.
    fn collapse_singletons(&mut self, i: usize) {
        let d = self.model.dim;
        let j = self.mu.len();
        for k in 0..j {
            if self.z[i * j + k] == 1 && self.counts[k] == 1 && self.others[k] == 0 {
                self.z[i * j + k] = 0;
                self.counts[k] = 0;
                for (r, t) in self.resid.iter_mut().zip(&self.theta[k * d..(k + 1) * d]) {
                    *r += t;
                }
                let t = self.alloc_slot(i);
                self.tail_of[i].push(t);
            }
        }
        self.tail_of[i].sort_unstable();
        self.dense_tail(i);
    }


    fn reattach(&mut self, i: usize) {
        if !self.tail_of[i].is_empty() {
            self.dense_tail(i);
            self.tail.add_row(&self.zt, &self.resid);
        }
    }

    fn alloc_slot(&mut self, i: usize) -> u32 {
        let t_len = self.tail.num_features();
        for t in 0..t_len {
            if self.tail.gram[(t, t)] < 0.5 && !self.tail_of[i].contains(&(t as u32)) {
                return t as u32;
            }
        }
        let gram = std::mem::replace(&mut self.tail.gram, DMatrix::zeros(0, 0));
        self.tail.gram = gram.resize(t_len + 1, t_len + 1, 0.0);
        let cross = std::mem::replace(&mut self.tail.cross, DMatrix::zeros(0, 0));
        self.tail.cross = cross.resize(t_len + 1, self.model.dim, 0.0);
        t_len as u32
    }

    /// Visit row `i`: instantiated features, shared tail features, then the
    /// singleton birth/death move. Tail and singleton steps only on proposers.
    pub fn update_row(&mut self, i: usize, proposer: bool, rng: &mut RngStream) -> Result<()> {
        let j = self.mu.len();
        self.residual(i);
        self.dense_tail(i);
        let mut pred = if proposer {
            self.detach(i);
            self.predictor()?
        } else {
            None
        };
        let var = self.tail_moments(pred.as_ref(), 0);
        for k in 0..j {
            self.finite_step(i, k, var, rng);
        }
        if proposer {
            self.collapse_singletons(i);
            if pred.as_ref().map(|p| p.num_features()) != Some(self.tail.num_features()) {
                pred = self.predictor()?;
            }
            if let Some(p) = pred.as_ref() {
                self.tail_step(i, p, rng);
            }
            self.singleton_step(i, pred.as_ref(), rng)?;
        }
        self.reattach(i);
        Ok(())
    }

    fn tail_step(&mut self, i: usize, pred: &TailPredictor, rng: &mut RngStream) {
        let n = self.n_total as f64;
        for t in 0..self.tail.num_features() {
            let m = self.tail.gram[(t, t)].round();
            if m < 0.5 {
                continue;
            }
            self.zt[t] = 0.0;
            let v0 = pred.moments(&self.zt, 0, &mut self.mean);
            let l0 = self.ll(v0);
            self.zt[t] = 1.0;
            let v1 = pred.moments(&self.zt, 0, &mut self.mean);
            let l1 = self.ll(v1);
            let take = sigmoid_draw(m.ln() - (n - m).ln() + l1 - l0, rng);
            self.zt[t] = take as u8 as f64;
        }
        self.tail_of[i] = (0..self.zt.len()).filter(|&t| self.zt[t] == 1.0).map(|t| t as u32).collect();
    }

    /// Replace the row's singleton tail features by `Poisson(α/n)` fresh ones,
    /// accepted on the collapsed likelihood ratio.
    fn singleton_step(&mut self, i: usize, pred: Option<&TailPredictor>, rng: &mut RngStream) -> Result<()> {
        let singles: Vec<u32> = self.tail_of[i]
            .iter()
            .copied()
            .filter(|&t| self.tail.gram[(t as usize, t as usize)] < 0.5)
            .collect();
        let s = singles.len();
        let s_new = rng.poisson(self.alpha / self.n_total as f64)? as usize;
        let accept = if s == s_new {
            true
        } else {
            for &t in &singles {
                self.zt[t as usize] = 0.0;
            }
            let vc = self.tail_moments(pred, s);
            let lc = self.ll(vc);
            let vp = self.tail_moments(pred, s_new);
            let lp = self.ll(vp);
            for &t in &singles {
                self.zt[t as usize] = 1.0;
            }
            rng.uniform_open().ln() < lp - lc
        };
        if accept && s != s_new {
            self.tail_of[i].retain(|t| !singles.contains(t));
            for _ in 0..s_new {
                let t = self.alloc_slot(i);
                self.tail_of[i].push(t);
            }
            self.tail_of[i].sort_unstable();
        }
        Ok(())
    }

    /// Local `ZᵀZ` and `ZᵀX` over `[instantiated.., live tail..]`.
    fn local_stats(&self) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
        let j = self.mu.len();
        let live = self.live_slots();
        let mut rank = vec![usize::MAX; self.tail.num_features()];
        for (r, &t) in live.iter().enumerate() {
            rank[t] = j + r;
        }
        let k = j + live.len();
        let d = self.model.dim;
        let mut gram = DMatrix::zeros(k, k);
        let mut cross = DMatrix::zeros(k, d);
        let mut active = Vec::new();
        for i in 0..self.data.len() {
            active.clear();
            active.extend((0..j).filter(|&a| self.z[i * j + a] == 1));
            active.extend(self.tail_of[i].iter().map(|&t| rank[t as usize]));
            let x = self.data.row(i);
            for &a in &active {
                for &b in &active {
                    gram[(a, b)] += 1.0;
                }
                for (dd, v) in x.iter().enumerate() {
                    cross[(a, dd)] += v;
                }
            }
        }
        (live, gram, cross)
    }
}

impl ShardModel for IbpShard {
    fn apply(&mut self, update: &Message) -> Result<()> {
        let d = self.model.dim;
        let n = self.data.len();
        let j_old = self.mu.len();
        let j_new = update.params.len();
        let mut inst_used = vec![false; j_old];
        let mut tail_used = vec![false; self.tail.num_features()];
        let mut z = vec![0u8; n * j_new];
        let mut mu = Vec::with_capacity(j_new);
        let mut theta = Vec::with_capacity(j_new * d);
        for (idx, p) in update.params.iter().enumerate() {
            if p.id != idx as u64 + 1 || p.atom.len() != d {
                return Err(CrmhError::Protocol(format!("malformed parameter entry {}", p.id)));
            }
            match p.source {
                Source::Prev(k) => {
                    let k = (k as usize).wrapping_sub(1);
                    if k < j_old {
                        inst_used[k] = true;
                        for i in 0..n {
                            z[i * j_new + idx] = self.z[i * j_old + k];
                        }
                    }
                }
                Source::Born(w, b) if w == self.worker_id => {
                    let b = b as usize;
                    if b >= tail_used.len() {
                        return Err(CrmhError::Protocol(format!("unknown birth {b} for worker {w}")));
                    }
                    tail_used[b] = true;
                    for i in 0..n {
                        if self.tail_of[i].contains(&(b as u32)) {
                            z[i * j_new + idx] = 1;
                        }
                    }
                }
                Source::Born(..) => {}
            }
            mu.push(p.weight);
            theta.extend_from_slice(&p.atom);
        }
        for i in 0..n {
            let lost_inst = (0..j_old).any(|k| !inst_used[k] && self.z[i * j_old + k] == 1);
            let lost_tail = self.tail_of[i].iter().any(|&t| !tail_used[t as usize]);
            if lost_inst || lost_tail {
                return Err(CrmhError::Protocol("update dropped a feature that still holds local rows".into()));
            }
        }
        self.z = z;
        self.mu = mu;
        self.theta = theta;
        self.recount();
        self.others = vec![0; j_new];
        for c in &update.components {
            let k = (c.id as usize).wrapping_sub(1);
            if k >= j_new || c.m < self.counts[k] {
                return Err(CrmhError::Protocol(format!("global count for feature {} is inconsistent", c.id)));
            }
            self.others[k] = c.m - self.counts[k];
        }
        self.tail_of.iter_mut().for_each(Vec::clear);
        self.tail = FeatureSuffStats::empty(0, d);
        Ok(())
    }

    fn sweep(&mut self, proposer: bool, rng: &mut RngStream) -> Result<()> {
        for i in 0..self.data.len() {
            self.update_row(i, proposer, rng)?;
        }
        Ok(())
    }

    fn report(&self, worker_id: u32, epoch: u64) -> Message {
        let j = self.mu.len();
        let (live, gram, cross) = self.local_stats();
        let row = |a: usize| -> (u64, Vec<f64>, Vec<f64>) {
            (
                gram[(a, a)].round() as u64,
                cross.row(a).iter().copied().collect(),
                gram.row(a).iter().copied().collect(),
            )
        };
        let mut msg = Message::report(worker_id, epoch);
        msg.components = (0..j)
            .map(|a| {
                let (m, sum, g) = row(a);
                ComponentStats {
                    id: a as u64 + 1,
                    m,
                    sum,
                    gram_row: Some(g),
                    tables: None,
                }
            })
            .collect();
        msg.new_components = live
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let (m, sum, g) = row(j + r);
                NewComponent {
                    birth: t as u64,
                    m,
                    sum,
                    gram_row: Some(g),
                    tables: None,
                }
            })
            .collect();
        msg
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }
}

/// Coordinator state: global `ZᵀZ`, `ZᵀX`, feature probabilities and loadings.
pub struct IbpGlobal {
    model: LinearGaussianModel,
    c: f64,
    n: u64,
    stats: FeatureSuffStats,
    sources: Vec<Source>,
    mu: Vec<f64>,
    loadings: DMatrix<f64>,
    train_sq: f64,
    test: Rows,
    test_samples: usize,
}

impl IbpGlobal {
    pub fn new(model: LinearGaussianModel, c: f64, n: u64, train_sq: f64, test: Rows, all_ones: bool) -> Result<Self> {
        check_mass(0.0, c)?;
        if n == 0 {
            return param("need at least one training row");
        }
        let k = all_ones as usize;
        Ok(IbpGlobal {
            model,
            c,
            n,
            stats: FeatureSuffStats::empty(k, model.dim),
            sources: (1..=k as u64).map(Source::Prev).collect(),
            mu: Vec::new(),
            loadings: DMatrix::zeros(0, model.dim),
            train_sq,
            test,
            test_samples: 100,
        })
    }

    /// Monte Carlo draws per test row in the held-out likelihood.
    pub fn with_test_samples(mut self, s: usize) -> Self {
        self.test_samples = s.max(1);
        self
    }

    pub fn set_train_sq(&mut self, q: f64) {
        self.train_sq = q;
    }

    pub fn counts(&self) -> Vec<u64> {
        self.stats.counts().iter().map(|m| m.round() as u64).collect()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn stats(&self) -> &FeatureSuffStats {
        &self.stats
    }

    /// Mean over `x` of `log (1/S) Σ_s N(x; z_s A, σ_X² I)`, `z_s ~ Bernoulli(μ)`,
    /// `A` at its posterior mean.
    pub fn test_loglik(&self, test: &Rows, samples: usize, rng: &mut RngStream) -> Result<f64> {
        if test.is_empty() {
            return param("empty test set");
        }
        let (mean_a, _) = posterior_from_stats(&self.stats, &self.model)?;
        let k = self.mu.len();
        let d = self.model.dim;
        let s = if k == 0 { 1 } else { samples.max(1) };
        let v = self.model.noise_var;
        let c0 = -0.5 * d as f64 * (LN_2PI + v.ln());
        let mut total = 0.0;
        let mut terms = Vec::with_capacity(s);
        let mut pred = vec![0.0; d];
        for x in test.iter() {
            terms.clear();
            for _ in 0..s {
                pred.iter_mut().for_each(|p| *p = 0.0);
                for (a, &m) in self.mu.iter().enumerate() {
                    if rng.bernoulli(m) {
                        for (dd, p) in pred.iter_mut().enumerate() {
                            *p += mean_a[(a, dd)];
                        }
                    }
                }
                let sq: f64 = x.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
                terms.push(c0 - 0.5 * sq / v);
            }
            total += crate::bench::metrics::logsumexp(&terms) - (s as f64).ln();
        }
        Ok(total / test.len() as f64)
    }
}

impl GlobalModel for IbpGlobal {
    fn merge(&mut self, reports: &[Message]) -> Result<()> {
        check_sorted_reports(reports, None)?;
        let d = self.model.dim;
        let jp = self.stats.num_features();
        let born: usize = reports.iter().map(|r| r.new_components.len()).sum();
        let k = jp + born;
        let mut gram = DMatrix::zeros(k, k);
        let mut cross = DMatrix::zeros(k, d);
        let mut sources: Vec<Source> = (1..=jp as u64).map(Source::Prev).collect();
        let mut offset = jp;
        for r in reports {
            let w = r.worker_id.unwrap_or(0);
            let local = r.new_components.len();
            let map = |l: usize| if l < jp { l } else { offset + l - jp };
            let mut place = |g: &Option<Vec<f64>>, sum: &[f64], m: u64, at: usize| -> Result<()> {
                let g = g
                    .as_ref()
                    .filter(|g| g.len() == jp + local)
                    .ok_or_else(|| CrmhError::Protocol(format!("gram row from worker {w} has the wrong length")))?;
                if sum.len() != d || m > self.n || g[if at < jp { at } else { jp + at - offset }] != m as f64 {
                    return Err(CrmhError::Protocol(format!("inconsistent feature statistics from worker {w}")));
                }
                for (l, v) in g.iter().enumerate() {
                    gram[(at, map(l))] += v;
                }
                for (dd, v) in sum.iter().enumerate() {
                    cross[(at, dd)] += v;
                }
                Ok(())
            };
            let mut seen = vec![false; jp];
            for c in &r.components {
                let a = (c.id as usize).wrapping_sub(1);
                if a >= jp || seen[a] {
                    return Err(CrmhError::Protocol(format!("feature id {} invalid or repeated", c.id)));
                }
                seen[a] = true;
                place(&c.gram_row, &c.sum, c.m, a)?;
            }
            let mut last: Option<u64> = None;
            for (l, c) in r.new_components.iter().enumerate() {
                if last.is_some_and(|b| c.birth <= b) {
                    return Err(CrmhError::Protocol(format!("birth ids from worker {w} collide")));
                }
                last = Some(c.birth);
                place(&c.gram_row, &c.sum, c.m, offset + l)?;
                sources.push(Source::Born(w, c.birth));
            }
            offset += local;
        }
        let keep: Vec<usize> = (0..k).filter(|&a| gram[(a, a)] > 0.5).collect();
        if keep.iter().any(|&a| gram[(a, a)] > self.n as f64 + 0.5) {
            return Err(CrmhError::Protocol("feature count exceeds the number of rows".into()));
        }
        self.stats = FeatureSuffStats {
            gram: gram.select_rows(&keep).select_columns(&keep),
            cross: cross.select_rows(&keep),
        };
        self.sources = keep.iter().map(|&a| sources[a]).collect();
        Ok(())
    }

    fn resample(&mut self, rng: &mut RngStream) -> Result<Message> {
        let n = self.n as f64;
        self.mu = self
            .counts()
            .iter()
            .map(|&m| rng.beta(m as f64, n - m as f64 + self.c))
            .collect::<Result<_>>()?;
        self.loadings = sample_features(&self.stats, &self.model, rng)?;
        let mut msg = Message::update();
        msg.params = (0..self.mu.len())
            .map(|a| ParamEntry {
                id: a as u64 + 1,
                source: self.sources[a],
                weight: self.mu[a],
                atom: self.loadings.row(a).iter().copied().collect(),
            })
            .collect();
        msg.components = self
            .counts()
            .into_iter()
            .enumerate()
            .map(|(a, m)| ComponentStats {
                id: a as u64 + 1,
                m,
                sum: Vec::new(),
                gram_row: None,
                tables: None,
            })
            .collect();
        Ok(msg)
    }

    fn metrics(&self, rng: &mut RngStream) -> Result<Metrics> {
        let d = self.model.dim as f64;
        let v = self.model.noise_var;
        let a = &self.loadings;
        let fit = if a.nrows() == 0 {
            0.0
        } else {
            let tr_ac: f64 = a.iter().zip(self.stats.cross.iter()).map(|(x, y)| x * y).sum();
            let ga = &self.stats.gram * a;
            let tr_aga: f64 = a.iter().zip(ga.iter()).map(|(x, y)| x * y).sum();
            2.0 * tr_ac - tr_aga
        };
        let train_ll = -0.5 * self.n as f64 * d * (LN_2PI + v.ln()) - (self.train_sq - fit) / (2.0 * v);
        let test_ll = if self.test.is_empty() {
            None
        } else {
            Some(self.test_loglik(&self.test, self.test_samples, rng)?)
        };
        Ok(Metrics {
            train_ll,
            test_ll,
            num_components: self.mu.len(),
            b_star: None,
            extra: Some(self.counts().iter().sum::<u64>() as f64),
        })
    }

    fn num_components(&self) -> usize {
        self.stats.num_features()
    }

    fn component_sizes(&self) -> Vec<u64> {
        self.counts()
    }
}

/// Serial hybrid beta-Bernoulli sampler.
pub struct IbpHybrid {
    chain: HybridChain<IbpGlobal, IbpShard>,
}

impl IbpHybrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        train: Rows,
        test: Rows,
        model: LinearGaussianModel,
        alpha: f64,
        c: f64,
        all_ones: bool,
        root: &RngStream,
    ) -> Result<Self> {
        check_mass(alpha, c)?;
        let n = train.len() as u64;
        let global = IbpGlobal::new(model, c, n, train.sum_sq(), test, all_ones)?;
        let shard = IbpShard::new(1, model, alpha, n, train, all_ones)?;
        Ok(IbpHybrid {
            chain: HybridChain::new(global, shard, root)?,
        })
    }

    /// Sweep every row, then resample `μ` and `A` with `J = K`.
    pub fn iterate(&mut self) -> Result<Metrics> {
        self.chain.step()
    }

    pub fn num_features(&self) -> usize {
        self.chain.global.num_components()
    }

    pub fn global(&self) -> &IbpGlobal {
        &self.chain.global
    }

    pub fn shard(&self) -> &IbpShard {
        &self.chain.shard
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        self.chain.shard.z_matrix()
    }

    /// Redraw `X ~ N(Z A, σ_X² I)` from the current state.
    pub fn regenerate_data(&mut self, rng: &mut RngStream) {
        let shard = &mut self.chain.shard;
        let d = shard.model.dim;
        let j = shard.mu.len();
        let sd = shard.model.noise_var.sqrt();
        for i in 0..shard.data.len() {
            for dd in 0..d {
                let mut v = sd * rng.normal();
                for k in 0..j {
                    if shard.z[i * j + k] == 1 {
                        v += shard.theta[k * d + dd];
                    }
                }
                shard.data.row_mut(i)[dd] = v;
            }
        }
        let q = shard.data.sum_sq();
        self.chain.global.set_train_sq(q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{lg_collapsed_marginal, lg_conditional_loglik};

    fn model(a: f64, x: f64, d: usize) -> LinearGaussianModel {
        LinearGaussianModel::new(a, x, d).unwrap()
    }

    fn shard_with(rows: Vec<f64>, d: usize, m: LinearGaussianModel, alpha: f64) -> IbpShard {
        let data = Rows::new(d, rows).unwrap();
        let n = data.len() as u64;
        IbpShard::new(1, m, alpha, n, data, false).unwrap()
    }

    #[test]
    fn near_certain_feature_is_taken() {
        let mut s = shard_with(vec![0.0], 1, model(1.0, 1.0, 1), 1.0);
        s.set_state(vec![0], vec![1.0 - 1e-12], vec![3.0]).unwrap();
        let mut rng = RngStream::new(1, 0);
        let mut on = 0;
        for _ in 0..1000 {
            s.gibbs_finite(0, 0, &mut rng).unwrap();
            on += s.z_inst(0, 0) as u32;
        }
        assert_eq!(on, 1000);
    }

    #[test]
    fn flat_likelihood_gives_prior_probability() {
        let mut s = shard_with(vec![0.4, -0.3], 2, model(1.0, 1.0, 2), 1.0);
        s.set_state(vec![0], vec![0.3], vec![0.0, 0.0]).unwrap();
        let mut rng = RngStream::new(2, 0);
        let reps = 10_000;
        let mut on = 0;
        for _ in 0..reps {
            s.gibbs_finite(0, 0, &mut rng).unwrap();
            on += s.z_inst(0, 0) as u32;
        }
        let p = on as f64 / reps as f64;
        let se = (0.3f64 * 0.7 / reps as f64).sqrt();
        assert!((p - 0.3).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn exact_match_at_tiny_noise() {
        let mut s = shard_with(vec![1.5, -0.5], 2, model(1.0, 1e-8, 2), 1.0);
        s.set_state(vec![0], vec![0.01], vec![1.5, -0.5]).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            s.gibbs_finite(0, 0, &mut rng).unwrap();
            assert!(s.z_inst(0, 0));
        }
    }

    #[test]
    fn finite_odds_match_conditional_likelihood() {
        // Instantiated feature plus one shared tail feature: the Bernoulli odds
        // used by the sweep must equal μ f(z=1) / ((1-μ) f(z=0)).
        let m = model(1.2, 0.7, 1);
        let mut s = shard_with(vec![0.9, 1.4, -0.2], 1, m, 0.0);
        s.set_state(vec![1, 0, 1], vec![0.4], vec![0.8]).unwrap();
        // Put rows 0 and 1 in one tail feature by hand.
        s.tail = FeatureSuffStats::empty(0, 1);
        let t = s.alloc_slot(0);
        for i in [0usize, 1] {
            s.tail_of[i].push(t);
            s.residual(i);
            s.dense_tail(i);
            s.tail.add_row(&s.zt.clone(), &s.resid.clone());
        }
        // Oracle for row 0 via the library function.
        let theta = DMatrix::from_row_slice(1, 1, &[0.8]);
        let mut rest = FeatureSuffStats::empty(1, 1);
        rest.add_row(&[1.0], &[1.4]);
        let l1 = lg_conditional_loglik(&[0.9], &[1.0, 1.0], &theta, &rest, &m).unwrap();
        let l0 = lg_conditional_loglik(&[0.9], &[0.0, 1.0], &theta, &rest, &m).unwrap();
        let p_want = 1.0 / (1.0 + (0.6 / 0.4) * (l0 - l1).exp());
        let mut rng = RngStream::new(4, 0);
        let reps = 40_000;
        let mut on = 0;
        for _ in 0..reps {
            s.gibbs_finite(0, 0, &mut rng).unwrap();
            on += s.z_inst(0, 0) as u32;
        }
        let p = on as f64 / reps as f64;
        let se = (p_want * (1.0 - p_want) / reps as f64).sqrt();
        assert!((p - p_want).abs() < 4.0 * se, "{p} vs {p_want}");
    }

    #[test]
    fn tail_prior_odds_with_negligible_loadings() {
        // Loadings with ~zero prior variance make both likelihoods equal, so
        // the tail draw follows m_{-i} / n.
        let m = model(1e-14, 1.0, 1);
        let mut s = shard_with(vec![0.1, 0.2, 0.3, 0.4], 1, m, 0.0);
        s.set_state(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let t = s.alloc_slot(0);
        for i in [1usize, 2] {
            s.tail_of[i].push(t);
            s.residual(i);
            s.dense_tail(i);
            s.tail.add_row(&s.zt.clone(), &s.resid.clone());
        }
        let mut rng = RngStream::new(5, 0);
        let reps = 10_000;
        let mut on = 0;
        for _ in 0..reps {
            s.update_row(0, true, &mut rng).unwrap();
            on += s.tail_of[0].contains(&t) as u32;
        }
        let p = on as f64 / reps as f64;
        let se = (0.5f64 * 0.5 / reps as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "{p}");
    }

    #[test]
    fn tail_feature_shared_by_all_others_is_taken() {
        let m = model(4.0, 0.01, 1);
        let mut s = shard_with(vec![2.0, 2.0, 2.0, 2.0], 1, m, 0.0);
        s.set_state(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let t = s.alloc_slot(0);
        for i in 1..4 {
            s.tail_of[i].push(t);
            s.residual(i);
            s.dense_tail(i);
            s.tail.add_row(&s.zt.clone(), &s.resid.clone());
        }
        let mut rng = RngStream::new(6, 0);
        for _ in 0..200 {
            s.update_row(0, true, &mut rng).unwrap();
            assert!(s.tail_of[0].contains(&t));
        }
    }

    #[test]
    fn zero_mass_removes_singletons() {
        let m = model(1.0, 1.0, 1);
        let mut s = shard_with(vec![0.1, 0.2], 1, m, 0.0);
        s.set_state(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let t = s.alloc_slot(0);
        s.tail_of[0].push(t);
        s.residual(0);
        s.dense_tail(0);
        s.tail.add_row(&s.zt.clone(), &s.resid.clone());
        let mut rng = RngStream::new(7, 0);
        let mut gone = false;
        for _ in 0..200 {
            s.update_row(0, true, &mut rng).unwrap();
            gone |= s.tail_of[0].is_empty();
            assert!(s.tail_of[0].len() <= 1);
        }
        assert!(gone);
        assert!(s.tail_of[0].is_empty(), "rate zero never proposes a birth");
    }

    #[test]
    fn non_proposers_never_create_features() {
        let m = model(1.0, 0.5, 2);
        let mut s = shard_with(vec![5.0, 5.0, -3.0, 1.0, 0.0, 2.0], 2, m, 10.0);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..20 {
            s.sweep(false, &mut rng).unwrap();
        }
        assert_eq!(s.num_tail(), 0);
        assert_eq!(s.z_matrix().ncols(), 0);
    }

    /// Exact posterior over `(a, b, c)`: counts of columns `(1,0)`, `(0,1)`,
    /// `(1,1)` for two rows, with `α = 1`, `c = 1`.
    fn two_row_oracle(x: &[f64], m: &LinearGaussianModel, max_k: usize) -> Vec<((usize, usize, usize), f64)> {
        let xm = DMatrix::from_row_slice(2, 1, x);
        let mut out = Vec::new();
        let mut ln_fact = vec![0.0f64; max_k + 1];
        for i in 1..=max_k {
            ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
        }
        for a in 0..=max_k {
            for b in 0..=max_k - a {
                for c in 0..=max_k - a - b {
                    let k = a + b + c;
                    let mut z = DMatrix::zeros(2, k);
                    for col in 0..k {
                        if col < a || col >= a + b {
                            z[(0, col)] = 1.0;
                        }
                        if col >= a {
                            z[(1, col)] = 1.0;
                        }
                    }
                    let lp = k as f64 * 0.5f64.ln() - ln_fact[a] - ln_fact[b] - ln_fact[c]
                        + lg_collapsed_marginal(&xm, &z, m).unwrap();
                    out.push(((a, b, c), lp));
                }
            }
        }
        let mx = out.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = out.iter().map(|p| (p.1 - mx).exp()).sum();
        out.into_iter().map(|(k, lp)| (k, (lp - mx).exp() / tot)).collect()
    }

    #[test]
    fn singleton_move_matches_enumeration() {
        let m = model(1.0, 0.5, 1);
        let x = [1.2, 0.4];
        let max_k = 12;
        let mut exact = vec![0.0; 2 * max_k + 1];
        for ((a, b, _), p) in two_row_oracle(&x, &m, max_k) {
            exact[a + b] += p;
        }
        // No global steps: every feature stays collapsed, so the chain is the
        // tail Gibbs plus the singleton move alone.
        let train = Rows::new(1, x.to_vec()).unwrap();
        let mut s = IbpShard::new(1, m, 1.0, 2, train, false).unwrap();
        let mut rng = RngStream::new(11, 0);
        let mut hist = vec![0u64; 2 * max_k + 1];
        let iters = 100_000;
        for t in 0..iters + 1000 {
            s.sweep(true, &mut rng).unwrap();
            if t >= 1000 {
                let z = s.z_matrix();
                let singles = z.column_iter().filter(|c| c.sum() == 1.0).count();
                hist[singles.min(2 * max_k)] += 1;
            }
        }
        let tv: f64 = 0.5 * exact.iter().zip(&hist).map(|(p, &h)| (p - h as f64 / iters as f64).abs()).sum::<f64>();
        assert!(tv < 0.05, "tv {tv}");
    }

    #[test]
    fn report_round_trip_keeps_statistics() {
        let m = model(1.0, 0.5, 2);
        let root = RngStream::new(12, 0);
        let mut r = RngStream::new(13, 0);
        let rows: Vec<f64> = (0..40).map(|_| r.normal() * 2.0).collect();
        let train = Rows::new(2, rows).unwrap();
        let x = train.to_dmatrix();
        let mut s = IbpHybrid::new(train, Rows::empty(2), m, 2.0, 1.0, true, &root).unwrap();
        for _ in 0..15 {
            s.iterate().unwrap();
            let z = s.z_matrix();
            let want = FeatureSuffStats::from_data(&z, &x);
            let got = s.global().stats();
            assert_eq!(got.gram, want.gram);
            assert!((&got.cross - &want.cross).abs().max() < 1e-9);
            assert!(s.global().mu().iter().all(|&p| p > 0.0 && p <= 1.0));
            assert!(s.global().counts().iter().all(|&c| c >= 1));
        }
    }

    #[test]
    fn train_loglik_matches_direct_sum() {
        let m = model(1.0, 0.5, 2);
        let root = RngStream::new(14, 0);
        let mut r = RngStream::new(15, 0);
        let rows: Vec<f64> = (0..20).map(|_| r.normal()).collect();
        let train = Rows::new(2, rows).unwrap();
        let x = train.to_dmatrix();
        let mut s = IbpHybrid::new(train, Rows::empty(2), m, 2.0, 1.0, true, &root).unwrap();
        for _ in 0..5 {
            let met = s.iterate().unwrap();
            let pred = s.z_matrix() * s.global().loadings();
            let direct: f64 = (0..10)
                .map(|i| {
                    crate::conjugate::iso_normal_logpdf(&[x[(i, 0)], x[(i, 1)]], &[pred[(i, 0)], pred[(i, 1)]], 0.5)
                })
                .sum();
            assert!((met.train_ll - direct).abs() < 1e-8, "{} vs {direct}", met.train_ll);
        }
    }

    #[test]
    fn test_loglik_without_features_is_exact() {
        let m = model(1.0, 0.5, 1);
        let g = IbpGlobal::new(m, 1.0, 3, 0.0, Rows::empty(1), false).unwrap();
        let test = Rows::new(1, vec![0.3, -1.0]).unwrap();
        let mut rng = RngStream::new(1, 1);
        let got = g.test_loglik(&test, 100, &mut rng).unwrap();
        let want = 0.5
            * (crate::conjugate::iso_normal_logpdf(&[0.3], &[0.0], 0.5)
                + crate::conjugate::iso_normal_logpdf(&[-1.0], &[0.0], 0.5));
        assert!((got - want).abs() < 1e-12);
        assert!(g.test_loglik(&Rows::empty(1), 10, &mut rng).is_err());
    }
}
