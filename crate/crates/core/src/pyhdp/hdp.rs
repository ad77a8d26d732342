//! Hierarchical Dirichlet process in Chinese-restaurant-franchise form.
//! Dishes `k ≤ J` carry top-level weights `β_k` and atoms `φ_k`; dishes born
//! since the last sync are collapsed and served only on the proposer.

use std::collections::BTreeMap;

use crate::chain::{check_sorted_reports, GlobalModel, HybridChain, Metrics, ShardModel};
use crate::conjugate::gauss::LN_2PI;
use crate::conjugate::{
    block_log_marginal, block_loglik_at, block_predictive, cluster_predictive_logpdf, iso_normal_logpdf,
    prior_predictive_logpdf, ClusterSuffStats, GaussFixedVarPrior,
};
use crate::dist::message::{ComponentStats, Message, NewComponent, ParamEntry, Source};
use crate::dpmm::hybrid::add_wire;
use crate::error::{param, CrmhError, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dish {
    Inst(u32),
    Tail(u32),
}

#[derive(Debug, Clone)]
struct Table {
    dish: Dish,
    stats: ClusterSuffStats,
}

#[derive(Debug, Clone, Default)]
struct DishStats {
    stats: ClusterSuffStats,
    tables: usize,
}

#[derive(Debug, Clone)]
struct Restaurant {
    id: u32,
    /// Local row of each customer.
    rows: Vec<usize>,
    seat: Vec<u32>,
    tables: Vec<Table>,
    free: Vec<u32>,
}

pub(crate) fn check_hdp(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return param(format!("concentrations must be positive, got alpha={alpha}, gamma={gamma}"));
    }
    Ok(())
}

/// The restaurants held by one worker.
pub struct HdpShard {
    worker_id: u32,
    prior: GaussFixedVarPrior,
    alpha: f64,
    gamma: f64,
    data: Rows,
    index: Vec<usize>,
    rests: Vec<Restaurant>,
    inst: Vec<DishStats>,
    tail: Vec<DishStats>,
    tail_free: Vec<u32>,
    ln_inst: Vec<f64>,
    atoms: Vec<f64>,
    b_star: f64,
    ln_1mb: f64,
    dish_ll: Vec<f64>,
    buf: Vec<f64>,
    opts: Vec<(Option<u32>, Dish)>,
    scratch: Vec<f64>,
}

impl HdpShard {
    /// `groups[i]` is the restaurant of row `i`; `index[i]` its position in
    /// the full data set. Every restaurant starts at a single table serving
    /// dish 1.
    pub fn new(
        worker_id: u32,
        prior: GaussFixedVarPrior,
        alpha: f64,
        gamma: f64,
        data: Rows,
        groups: &[u32],
        index: Vec<usize>,
    ) -> Result<Self> {
        check_hdp(alpha, gamma)?;
        if data.dim != prior.dim() {
            return param("data width differs from prior dimension");
        }
        if groups.len() != data.len() || index.len() != data.len() {
            return param("groups and index must have one entry per row");
        }
        let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &g) in groups.iter().enumerate() {
            by_group.entry(g).or_default().push(i);
        }
        let dim = data.dim;
        let mut all = DishStats {
            stats: ClusterSuffStats::empty(dim),
            tables: 0,
        };
        let rests = by_group
            .into_iter()
            .map(|(id, rows)| {
                let stats = ClusterSuffStats::from_points(dim, rows.iter().map(|&i| data.row(i)));
                all.stats.merge(&stats);
                all.tables += 1;
                Restaurant {
                    id,
                    seat: vec![0; rows.len()],
                    rows,
                    tables: vec![Table {
                        dish: Dish::Inst(0),
                        stats,
                    }],
                    free: Vec::new(),
                }
            })
            .collect();
        Ok(HdpShard {
            worker_id,
            prior,
            alpha,
            gamma,
            data,
            index,
            rests,
            inst: vec![all],
            tail: Vec::new(),
            tail_free: Vec::new(),
            ln_inst: Vec::new(),
            atoms: Vec::new(),
            b_star: 1.0,
            ln_1mb: f64::NEG_INFINITY,
            dish_ll: Vec::new(),
            buf: Vec::new(),
            opts: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn num_instantiated(&self) -> usize {
        self.inst.len()
    }

    pub fn restaurant_ids(&self) -> Vec<u32> {
        self.rests.iter().map(|r| r.id).collect()
    }

    /// Position of each local row in the full data set.
    pub fn index(&self) -> &[usize] {
        &self.index
    }

    /// Dish per local row: instantiated first, then live tail dishes in slot order.
    pub fn labels(&self) -> Vec<usize> {
        let j = self.inst.len();
        let mut rank = vec![0usize; self.tail.len()];
        let mut r = 0;
        for (t, d) in self.tail.iter().enumerate() {
            if d.tables > 0 {
                rank[t] = r;
                r += 1;
            }
        }
        let mut out = vec![0usize; self.data.len()];
        for rest in &self.rests {
            for (c, &row) in rest.rows.iter().enumerate() {
                out[row] = match rest.tables[rest.seat[c] as usize].dish {
                    Dish::Inst(k) => k as usize,
                    Dish::Tail(t) => j + rank[t as usize],
                };
            }
        }
        out
    }

    /// Occupied tables per restaurant.
    pub fn num_tables(&self) -> usize {
        self.rests
            .iter()
            .map(|r| r.tables.iter().filter(|t| t.stats.count > 0).count())
            .sum()
    }

    /// Recount every dish from the seating and compare with the running totals.
    pub fn audit(&self) -> Result<()> {
        let mut inst = vec![(0usize, 0usize); self.inst.len()];
        let mut tail = vec![(0usize, 0usize); self.tail.len()];
        for r in &self.rests {
            let mut sizes = vec![0usize; r.tables.len()];
            for &t in &r.seat {
                sizes[t as usize] += 1;
            }
            for (t, tab) in r.tables.iter().enumerate() {
                if tab.stats.count != sizes[t] {
                    return Err(CrmhError::State(format!("table {t} of restaurant {} miscounted", r.id)));
                }
                if sizes[t] == 0 {
                    continue;
                }
                let e = match tab.dish {
                    Dish::Inst(k) => &mut inst[k as usize],
                    Dish::Tail(d) => &mut tail[d as usize],
                };
                e.0 += sizes[t];
                e.1 += 1;
            }
        }
        for (want, have) in inst.iter().zip(&self.inst).chain(tail.iter().zip(&self.tail)) {
            if want.0 != have.stats.count || want.1 != have.tables {
                return Err(CrmhError::State("dish totals disagree with seating".into()));
            }
        }
        Ok(())
    }

    fn dish_mut(&mut self, d: Dish) -> &mut DishStats {
        match d {
            Dish::Inst(k) => &mut self.inst[k as usize],
            Dish::Tail(t) => &mut self.tail[t as usize],
        }
    }

    fn release_tail(&mut self, d: Dish) {
        if let Dish::Tail(t) = d {
            if self.tail[t as usize].tables == 0 {
                self.tail_free.push(t);
            }
        }
    }

    fn new_tail_dish(&mut self) -> u32 {
        if let Some(t) = self.tail_free.pop() {
            t
        } else {
            self.tail.push(DishStats {
                stats: ClusterSuffStats::empty(self.data.dim),
                tables: 0,
            });
            (self.tail.len() - 1) as u32
        }
    }

    fn tail_tables(&self) -> usize {
        self.tail.iter().map(|d| d.tables).sum()
    }

    fn inst_loglik(&self, x: &[f64], k: usize) -> f64 {
        let d = x.len();
        iso_normal_logpdf(x, &self.atoms[k * d..(k + 1) * d], self.prior.obs_var)
    }

    /// Reseat customer `c` of restaurant `r`.
    fn sample_table(&mut self, r: usize, c: usize, proposer: bool, rng: &mut RngStream) -> Result<()> {
        let dim = self.data.dim;
        let row = self.rests[r].rows[c];
        let x: Vec<f64> = self.data.row(row).to_vec();
        let t = self.rests[r].seat[c] as usize;
        let dish = self.rests[r].tables[t].dish;
        self.rests[r].tables[t].stats.remove(&x);
        self.dish_mut(dish).stats.remove(&x);
        if self.rests[r].tables[t].stats.count == 0 {
            self.dish_mut(dish).tables -= 1;
            self.rests[r].free.push(t as u32);
            self.release_tail(dish);
        }

        let j = self.inst.len();
        self.dish_ll.clear();
        for k in 0..j {
            let v = self.inst_loglik(&x, k);
            self.dish_ll.push(v);
        }
        let tail_ll: Vec<f64> = self
            .tail
            .iter()
            .map(|d| {
                if d.tables > 0 {
                    cluster_predictive_logpdf(&self.prior, &d.stats, &x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();

        self.buf.clear();
        self.opts.clear();
        for (u, tab) in self.rests[r].tables.iter().enumerate() {
            if tab.stats.count == 0 {
                continue;
            }
            let ll = match tab.dish {
                Dish::Inst(k) => self.dish_ll[k as usize],
                Dish::Tail(d) => tail_ll[d as usize],
            };
            self.buf.push((tab.stats.count as f64).ln() + ll);
            self.opts.push((Some(u as u32), tab.dish));
        }
        let ln_g = self.gamma.ln();
        for k in 0..j {
            self.buf.push(ln_g + self.ln_inst[k] + self.dish_ll[k]);
            self.opts.push((None, Dish::Inst(k as u32)));
        }
        if proposer {
            let ln_den = (self.tail_tables() as f64 + self.alpha).ln();
            for (d, ds) in self.tail.iter().enumerate() {
                if ds.tables > 0 {
                    self.buf
                        .push(ln_g + self.ln_1mb + (ds.tables as f64).ln() - ln_den + tail_ll[d]);
                    self.opts.push((None, Dish::Tail(d as u32)));
                }
            }
            self.buf
                .push(ln_g + self.ln_1mb + self.alpha.ln() - ln_den + prior_predictive_logpdf(&self.prior, &x));
            self.opts.push((None, Dish::Tail(u32::MAX)));
        }

        let pick = rng.categorical_log_with(&self.buf, &mut self.scratch)?;
        let (table, mut dish) = self.opts[pick];
        if dish == Dish::Tail(u32::MAX) {
            dish = Dish::Tail(self.new_tail_dish());
        }
        let t = match table {
            Some(u) => u,
            None => {
                let rest = &mut self.rests[r];
                let u = match rest.free.pop() {
                    Some(u) => u,
                    None => {
                        rest.tables.push(Table {
                            dish,
                            stats: ClusterSuffStats::empty(dim),
                        });
                        (rest.tables.len() - 1) as u32
                    }
                };
                rest.tables[u as usize].dish = dish;
                self.dish_mut(dish).tables += 1;
                u
            }
        };
        self.rests[r].tables[t as usize].stats.add(&x);
        self.dish_mut(dish).stats.add(&x);
        self.rests[r].seat[c] = t;
        Ok(())
    }

    /// Log-weights for the dish of an occupied table whose block has already
    /// been taken out of its dish; fills `opts` in parallel.
    fn dish_logprobs(&mut self, block: &ClusterSuffStats, proposer: bool) {
        let j = self.inst.len();
        let d = self.data.dim;
        self.buf.clear();
        self.opts.clear();
        for k in 0..j {
            let ll = block_loglik_at(&self.prior, block, &self.atoms[k * d..(k + 1) * d]);
            self.buf.push(self.ln_inst[k] + ll);
            self.opts.push((None, Dish::Inst(k as u32)));
        }
        if proposer {
            let ln_den = (self.tail_tables() as f64 + self.alpha).ln();
            for (t, ds) in self.tail.iter().enumerate() {
                if ds.tables > 0 {
                    let ll = block_predictive(&self.prior, &ds.stats, block);
                    self.buf.push(self.ln_1mb + (ds.tables as f64).ln() - ln_den + ll);
                    self.opts.push((None, Dish::Tail(t as u32)));
                }
            }
            self.buf
                .push(self.ln_1mb + self.alpha.ln() - ln_den + block_log_marginal(&self.prior, block));
            self.opts.push((None, Dish::Tail(u32::MAX)));
        }
    }

    fn sample_dish(&mut self, r: usize, u: usize, proposer: bool, rng: &mut RngStream) -> Result<()> {
        let block = self.rests[r].tables[u].stats.clone();
        let old = self.rests[r].tables[u].dish;
        {
            let ds = self.dish_mut(old);
            ds.stats.unmerge(&block);
            ds.tables -= 1;
        }
        self.release_tail(old);
        self.dish_logprobs(&block, proposer);
        let pick = rng.categorical_log_with(&self.buf, &mut self.scratch)?;
        let mut dish = self.opts[pick].1;
        if dish == Dish::Tail(u32::MAX) {
            dish = Dish::Tail(self.new_tail_dish());
        }
        let ds = self.dish_mut(dish);
        ds.stats.merge(&block);
        ds.tables += 1;
        self.rests[r].tables[u].dish = dish;
        Ok(())
    }
}

impl ShardModel for HdpShard {
    fn apply(&mut self, update: &Message) -> Result<()> {
        let b_star = update
            .b_star
            .ok_or_else(|| CrmhError::Protocol("update without b_star".into()))?;
        let dim = self.data.dim;
        let mut inst_map: Vec<Option<u32>> = vec![None; self.inst.len()];
        let mut tail_map: Vec<Option<u32>> = vec![None; self.tail.len()];
        let mut new_inst = Vec::with_capacity(update.params.len());
        let mut atoms = Vec::with_capacity(update.params.len() * dim);
        let mut ln_inst = Vec::with_capacity(update.params.len());
        let ln_b = b_star.ln();
        let empty = || DishStats {
            stats: ClusterSuffStats::empty(dim),
            tables: 0,
        };
        for (idx, p) in update.params.iter().enumerate() {
            if p.id != idx as u64 + 1 || p.atom.len() != dim {
                return Err(CrmhError::Protocol(format!("malformed parameter entry {}", p.id)));
            }
            let stats = match p.source {
                Source::Prev(k) => {
                    let k = (k as usize).wrapping_sub(1);
                    match inst_map.get_mut(k) {
                        Some(slot) => {
                            *slot = Some(idx as u32);
                            std::mem::replace(&mut self.inst[k], empty())
                        }
                        None => empty(),
                    }
                }
                Source::Born(w, b) if w == self.worker_id => {
                    let slot = tail_map
                        .get_mut(b as usize)
                        .ok_or_else(|| CrmhError::Protocol(format!("unknown birth {b} for worker {w}")))?;
                    *slot = Some(idx as u32);
                    std::mem::replace(&mut self.tail[b as usize], empty())
                }
                Source::Born(..) => empty(),
            };
            new_inst.push(stats);
            atoms.extend_from_slice(&p.atom);
            ln_inst.push(ln_b + p.weight.ln());
        }
        if self.inst.iter().chain(&self.tail).any(|d| d.tables > 0) {
            return Err(CrmhError::Protocol("update dropped a dish that still serves local tables".into()));
        }
        for rest in self.rests.iter_mut() {
            for tab in rest.tables.iter_mut() {
                let mapped = match tab.dish {
                    Dish::Inst(k) => inst_map[k as usize],
                    Dish::Tail(t) => tail_map[t as usize],
                };
                tab.dish = match mapped {
                    Some(k) => Dish::Inst(k),
                    None if tab.stats.count == 0 => Dish::Inst(0),
                    None => return Err(CrmhError::Protocol("unmapped local dish".into())),
                };
            }
        }
        self.inst = new_inst;
        self.tail.clear();
        self.tail_free.clear();
        self.atoms = atoms;
        self.ln_inst = ln_inst;
        self.b_star = b_star;
        self.ln_1mb = (1.0 - b_star).ln();
        Ok(())
    }

    /// Reseat every customer, then redraw the dish of every occupied table.
    fn sweep(&mut self, proposer: bool, rng: &mut RngStream) -> Result<()> {
        for r in 0..self.rests.len() {
            for c in 0..self.rests[r].rows.len() {
                self.sample_table(r, c, proposer, rng)?;
            }
        }
        for r in 0..self.rests.len() {
            for u in 0..self.rests[r].tables.len() {
                if self.rests[r].tables[u].stats.count > 0 {
                    self.sample_dish(r, u, proposer, rng)?;
                }
            }
        }
        Ok(())
    }

    fn report(&self, worker_id: u32, epoch: u64) -> Message {
        let mut msg = Message::report(worker_id, epoch);
        msg.components = self
            .inst
            .iter()
            .enumerate()
            .map(|(k, d)| ComponentStats {
                id: k as u64 + 1,
                m: d.stats.count as u64,
                sum: d.stats.sum.clone(),
                gram_row: None,
                tables: Some(d.tables as u64),
            })
            .collect();
        msg.new_components = self
            .tail
            .iter()
            .enumerate()
            .filter(|(_, d)| d.tables > 0)
            .map(|(t, d)| NewComponent {
                birth: t as u64,
                m: d.stats.count as u64,
                sum: d.stats.sum.clone(),
                gram_row: None,
                tables: Some(d.tables as u64),
            })
            .collect();
        msg
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }
}

/// Coordinator state: merged customer statistics and table counts per dish.
pub struct HdpGlobal {
    prior: GaussFixedVarPrior,
    alpha: f64,
    n: u64,
    comps: Vec<ClusterSuffStats>,
    tables: Vec<u64>,
    sources: Vec<Source>,
    beta: Vec<f64>,
    atoms: Vec<Vec<f64>>,
    b_star: f64,
    train_sq: f64,
    test: Rows,
}

impl HdpGlobal {
    pub fn new(prior: GaussFixedVarPrior, alpha: f64, gamma: f64, n: u64, train_sq: f64, test: Rows) -> Result<Self> {
        check_hdp(alpha, gamma)?;
        if n == 0 {
            return param("need at least one training point");
        }
        let dim = prior.dim();
        Ok(HdpGlobal {
            prior,
            alpha,
            n,
            comps: vec![ClusterSuffStats::empty(dim)],
            tables: vec![0],
            sources: vec![Source::Prev(1)],
            beta: Vec::new(),
            atoms: Vec::new(),
            b_star: 1.0,
            train_sq,
            test,
        })
    }

    pub fn b_star(&self) -> f64 {
        self.b_star
    }

    pub fn weights(&self) -> &[f64] {
        &self.beta
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// Customers per dish.
    pub fn counts(&self) -> Vec<usize> {
        self.comps.iter().map(|s| s.count).collect()
    }

    /// Tables per dish.
    pub fn table_counts(&self) -> &[u64] {
        &self.tables
    }

    /// Log predictive of a new customer in a new restaurant under the
    /// top-level measure.
    pub fn predictive_logpdf(&self, x: &[f64]) -> f64 {
        let ln_b = self.b_star.ln();
        let mut terms: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.atoms)
            .map(|(w, th)| ln_b + w.ln() + iso_normal_logpdf(x, th, self.prior.obs_var))
            .collect();
        terms.push((1.0 - self.b_star).ln() + prior_predictive_logpdf(&self.prior, x));
        crate::bench::metrics::logsumexp(&terms)
    }
}

impl GlobalModel for HdpGlobal {
    fn merge(&mut self, reports: &[Message]) -> Result<()> {
        check_sorted_reports(reports, None)?;
        let dim = self.prior.dim();
        let jp = self.comps.len();
        let mut merged = vec![ClusterSuffStats::empty(dim); jp];
        let mut tables = vec![0u64; jp];
        let mut sources: Vec<Source> = (1..=jp as u64).map(Source::Prev).collect();
        for r in reports {
            let mut seen = vec![false; jp];
            for c in &r.components {
                let k = (c.id as usize).wrapping_sub(1);
                if k >= jp || seen[k] {
                    return Err(CrmhError::Protocol(format!("component id {} invalid or repeated", c.id)));
                }
                seen[k] = true;
                add_wire(&mut merged[k], c.m, &c.sum, dim)?;
                tables[k] += wire_tables(c.tables, c.m)?;
            }
        }
        for r in reports {
            let w = r.worker_id.unwrap_or(0);
            let mut last: Option<u64> = None;
            for c in &r.new_components {
                if last.is_some_and(|b| c.birth <= b) {
                    return Err(CrmhError::Protocol(format!("birth ids from worker {w} collide")));
                }
                last = Some(c.birth);
                let mut s = ClusterSuffStats::empty(dim);
                add_wire(&mut s, c.m, &c.sum, dim)?;
                merged.push(s);
                tables.push(wire_tables(c.tables, c.m)?);
                sources.push(Source::Born(w, c.birth));
            }
        }
        let total: u64 = merged.iter().map(|s| s.count as u64).sum();
        if total != self.n {
            return Err(CrmhError::Protocol(format!("reports account for {total} customers, expected {}", self.n)));
        }
        let keep: Vec<usize> = (0..merged.len()).filter(|&k| tables[k] > 0).collect();
        self.comps = keep.iter().map(|&k| std::mem::take(&mut merged[k])).collect();
        self.tables = keep.iter().map(|&k| tables[k]).collect();
        self.sources = keep.iter().map(|&k| sources[k]).collect();
        Ok(())
    }

    fn resample(&mut self, rng: &mut RngStream) -> Result<Message> {
        let m: u64 = self.tables.iter().sum();
        self.b_star = rng.beta(m as f64, self.alpha)?;
        let conc: Vec<f64> = self.tables.iter().map(|&t| t as f64).collect();
        self.beta = rng.dirichlet(&conc)?;
        self.atoms = self.comps.iter().map(|s| self.prior.sample_atom(s, rng)).collect();
        let mut msg = Message::update();
        msg.b_star = Some(self.b_star);
        msg.params = (0..self.comps.len())
            .map(|k| ParamEntry {
                id: k as u64 + 1,
                source: self.sources[k],
                weight: self.beta[k],
                atom: self.atoms[k].clone(),
            })
            .collect();
        Ok(msg)
    }

    fn metrics(&self, _rng: &mut RngStream) -> Result<Metrics> {
        let d = self.prior.dim() as f64;
        let v = self.prior.obs_var;
        let mut fit = 0.0;
        for (s, th) in self.comps.iter().zip(&self.atoms) {
            let cross: f64 = s.sum.iter().zip(th).map(|(a, b)| a * b).sum();
            let tt: f64 = th.iter().map(|t| t * t).sum();
            fit += 2.0 * cross - s.count as f64 * tt;
        }
        let train_ll = -0.5 * self.n as f64 * d * (LN_2PI + v.ln()) - (self.train_sq - fit) / (2.0 * v);
        let test_ll = if self.test.is_empty() {
            None
        } else {
            let total: f64 = self.test.iter().map(|x| self.predictive_logpdf(x)).sum();
            Some(total / self.test.len() as f64)
        };
        Ok(Metrics {
            train_ll,
            test_ll,
            num_components: self.comps.len(),
            b_star: Some(self.b_star),
            extra: Some(self.tables.iter().sum::<u64>() as f64),
        })
    }

    fn num_components(&self) -> usize {
        self.comps.len()
    }

    fn component_sizes(&self) -> Vec<u64> {
        self.comps.iter().map(|s| s.count as u64).collect()
    }
}

fn wire_tables(tables: Option<u64>, m: u64) -> Result<u64> {
    let t = tables.ok_or_else(|| CrmhError::Protocol("dish statistics without a table count".into()))?;
    if t > m || (m > 0 && t == 0) {
        return Err(CrmhError::Protocol(format!("{t} tables cannot seat {m} customers")));
    }
    Ok(t)
}

/// Serial hybrid HDP sampler.
pub struct HdpHybrid {
    chain: HybridChain<HdpGlobal, HdpShard>,
}

impl HdpHybrid {
    /// `groups[i]` is the restaurant of training row `i`.
    pub fn new(
        train: Rows,
        groups: &[u32],
        test: Rows,
        prior: GaussFixedVarPrior,
        alpha: f64,
        gamma: f64,
        root: &RngStream,
    ) -> Result<Self> {
        let global = HdpGlobal::new(prior.clone(), alpha, gamma, train.len() as u64, train.sum_sq(), test)?;
        let index = (0..train.len()).collect();
        let shard = HdpShard::new(1, prior, alpha, gamma, train, groups, index)?;
        Ok(HdpHybrid {
            chain: HybridChain::new(global, shard, root)?,
        })
    }

    /// Reseat customers and redraw dishes, then resample `B*`, `β` and the
    /// atoms with `J = K`.
    pub fn iterate(&mut self) -> Result<Metrics> {
        self.chain.step()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.chain.shard.labels()
    }

    pub fn global(&self) -> &HdpGlobal {
        &self.chain.global
    }

    pub fn shard(&self) -> &HdpShard {
        &self.chain.shard
    }

    pub fn num_components(&self) -> usize {
        self.chain.global.num_components()
    }
}
