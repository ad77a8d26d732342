//! Hybrid mixture sampler: instantiated atoms for `k ≤ J`, a collapsed
//! Chinese-restaurant tail for `k > J`. A discount `sigma > 0` gives the
//! Pitman-Yor version; `sigma = 0` is the Dirichlet process.

use crate::chain::{check_sorted_reports, GlobalModel, HybridChain, Metrics, ShardModel};
use crate::conjugate::gauss::LN_2PI;
use crate::conjugate::{cluster_predictive_logpdf, prior_predictive_logpdf, ClusterSuffStats, GaussFixedVarPrior};
use crate::dist::message::{ComponentStats, Message, NewComponent, ParamEntry, Source};
use crate::error::{param, CrmhError, Result};
use crate::matrix::Rows;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Label {
    Inst(u32),
    Tail(u32),
}

pub(crate) fn check_discount(alpha: f64, sigma: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return param(format!("concentration must be positive, got {alpha}"));
    }
    if !(0.0..1.0).contains(&sigma) {
        return param(format!("discount must lie in [0, 1), got {sigma}"));
    }
    Ok(())
}

/// Per-sweep constants for the assignment conditional.
struct AssignCtx<'a> {
    prior: &'a GaussFixedVarPrior,
    ln_inst: &'a [f64],
    atoms: &'a [f64],
    ln_1mb: f64,
    alpha: f64,
    sigma: f64,
    j: usize,
    ll_const: f64,
}

impl AssignCtx<'_> {
    /// Log-weights over `[instantiated.., live tail.., new]`; only the
    /// instantiated block when `restricted`.
    fn fill<'s>(
        &self,
        x: &[f64],
        tail: impl Iterator<Item = &'s ClusterSuffStats> + Clone,
        restricted: bool,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let d = x.len();
        let inv2v = 0.5 / self.prior.obs_var;
        for k in 0..self.j {
            let th = &self.atoms[k * d..(k + 1) * d];
            let sq: f64 = x.iter().zip(th).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(self.ln_inst[k] + self.ll_const - sq * inv2v);
        }
        if restricted {
            return;
        }
        let (mut n_tail, mut k_tail) = (0usize, 0usize);
        for s in tail.clone() {
            n_tail += s.count;
            k_tail += 1;
        }
        let ln_den = (n_tail as f64 + self.alpha + self.j as f64 * self.sigma).ln();
        for s in tail {
            out.push(self.ln_1mb + (s.count as f64 - self.sigma).ln() - ln_den + cluster_predictive_logpdf(self.prior, s, x));
        }
        let k_all = (self.j + k_tail) as f64;
        out.push(self.ln_1mb + (self.alpha + k_all * self.sigma).ln() - ln_den + prior_predictive_logpdf(self.prior, x));
    }
}

fn obs_const(prior: &GaussFixedVarPrior) -> f64 {
    -0.5 * prior.dim() as f64 * (LN_2PI + prior.obs_var.ln())
}

/// Log-weights over `(1..J, J+1..K, new)` for one point; `tail` holds
/// leave-one-out statistics of the collapsed clusters.
#[allow(clippy::too_many_arguments)]
pub fn mixture_assign_logprobs(
    prior: &GaussFixedVarPrior,
    b_star: f64,
    weights: &[f64],
    atoms: &[Vec<f64>],
    tail: &[ClusterSuffStats],
    alpha: f64,
    sigma: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&b_star) {
        return Err(CrmhError::State(format!("leftover mass {b_star} outside [0, 1]")));
    }
    check_discount(alpha, sigma)?;
    if weights.len() != atoms.len() {
        return param("weights and atoms differ in length");
    }
    let ln_b = b_star.ln();
    let ln_inst: Vec<f64> = weights.iter().map(|w| ln_b + w.ln()).collect();
    let flat: Vec<f64> = atoms.iter().flatten().copied().collect();
    let ctx = AssignCtx {
        prior,
        ln_inst: &ln_inst,
        atoms: &flat,
        ln_1mb: (1.0 - b_star).ln(),
        alpha,
        sigma,
        j: weights.len(),
        ll_const: obs_const(prior),
    };
    let mut out = Vec::new();
    ctx.fill(x, tail.iter().filter(|s| s.count > 0), false, &mut out);
    Ok(out)
}

/// Dirichlet-process case of [`mixture_assign_logprobs`].
pub fn dpmm_assign_logprobs(
    prior: &GaussFixedVarPrior,
    b_star: f64,
    weights: &[f64],
    atoms: &[Vec<f64>],
    tail: &[ClusterSuffStats],
    alpha: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    mixture_assign_logprobs(prior, b_star, weights, atoms, tail, alpha, 0.0, x)
}

/// One worker's rows and their cluster assignments.
pub struct MixtureShard {
    worker_id: u32,
    prior: GaussFixedVarPrior,
    alpha: f64,
    sigma: f64,
    data: Rows,
    labels: Vec<Label>,
    inst: Vec<ClusterSuffStats>,
    tail: Vec<ClusterSuffStats>,
    free: Vec<u32>,
    ln_inst: Vec<f64>,
    atoms: Vec<f64>,
    b_star: f64,
    ln_1mb: f64,
    buf: Vec<f64>,
    opts: Vec<Label>,
    scratch: Vec<f64>,
}

impl MixtureShard {
    /// All rows start in component 1.
    pub fn new(worker_id: u32, prior: GaussFixedVarPrior, alpha: f64, sigma: f64, data: Rows) -> Result<Self> {
        check_discount(alpha, sigma)?;
        if data.dim != prior.dim() {
            return param("data width differs from prior dimension");
        }
        let all = ClusterSuffStats::from_points(data.dim, data.iter());
        Ok(MixtureShard {
            worker_id,
            prior,
            alpha,
            sigma,
            labels: vec![Label::Inst(0); data.len()],
            data,
            inst: vec![all],
            tail: Vec::new(),
            free: Vec::new(),
            ln_inst: Vec::new(),
            atoms: Vec::new(),
            b_star: 1.0,
            ln_1mb: f64::NEG_INFINITY,
            buf: Vec::new(),
            opts: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn num_instantiated(&self) -> usize {
        self.inst.len()
    }

    /// Component index per row: instantiated first, then live tail clusters in slot order.
    pub fn labels(&self) -> Vec<usize> {
        let j = self.inst.len();
        let mut rank = vec![0usize; self.tail.len()];
        let mut r = 0;
        for (t, s) in self.tail.iter().enumerate() {
            if s.count > 0 {
                rank[t] = r;
                r += 1;
            }
        }
        self.labels
            .iter()
            .map(|l| match *l {
                Label::Inst(k) => k as usize,
                Label::Tail(t) => j + rank[t as usize],
            })
            .collect()
    }

    pub fn data(&self) -> &Rows {
        &self.data
    }

    fn new_tail_slot(&mut self) -> u32 {
        if let Some(t) = self.free.pop() {
            t
        } else {
            self.tail.push(ClusterSuffStats::empty(self.data.dim));
            (self.tail.len() - 1) as u32
        }
    }
}

impl ShardModel for MixtureShard {
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
                            std::mem::replace(&mut self.inst[k], ClusterSuffStats::empty(dim))
                        }
                        None => ClusterSuffStats::empty(dim),
                    }
                }
                Source::Born(w, b) if w == self.worker_id => {
                    let slot = tail_map
                        .get_mut(b as usize)
                        .ok_or_else(|| CrmhError::Protocol(format!("unknown birth {b} for worker {w}")))?;
                    *slot = Some(idx as u32);
                    std::mem::replace(&mut self.tail[b as usize], ClusterSuffStats::empty(dim))
                }
                Source::Born(..) => ClusterSuffStats::empty(dim),
            };
            new_inst.push(stats);
            atoms.extend_from_slice(&p.atom);
            ln_inst.push(ln_b + p.weight.ln());
        }
        if self.inst.iter().chain(&self.tail).any(|s| s.count > 0) {
            return Err(CrmhError::Protocol("update dropped a component that still holds local points".into()));
        }
        for l in self.labels.iter_mut() {
            let mapped = match *l {
                Label::Inst(k) => inst_map[k as usize],
                Label::Tail(t) => tail_map[t as usize],
            };
            *l = Label::Inst(mapped.ok_or_else(|| CrmhError::Protocol("unmapped local label".into()))?);
        }
        self.inst = new_inst;
        self.tail.clear();
        self.free.clear();
        self.atoms = atoms;
        self.ln_inst = ln_inst;
        self.b_star = b_star;
        self.ln_1mb = (1.0 - b_star).ln();
        Ok(())
    }

    fn sweep(&mut self, proposer: bool, rng: &mut RngStream) -> Result<()> {
        let j = self.inst.len();
        let ll_const = obs_const(&self.prior);
        for i in 0..self.data.len() {
            let cur = self.labels[i];
            {
                let x = &self.data.data[i * self.data.dim..(i + 1) * self.data.dim];
                let s = match cur {
                    Label::Inst(k) => &mut self.inst[k as usize],
                    Label::Tail(t) => &mut self.tail[t as usize],
                };
                s.remove(x);
                if let Label::Tail(t) = cur {
                    if s.count == 0 {
                        self.free.push(t);
                    }
                }
            }
            let x = &self.data.data[i * self.data.dim..(i + 1) * self.data.dim];
            let ctx = AssignCtx {
                prior: &self.prior,
                ln_inst: &self.ln_inst,
                atoms: &self.atoms,
                ln_1mb: self.ln_1mb,
                alpha: self.alpha,
                sigma: self.sigma,
                j,
                ll_const,
            };
            let live = self.tail.iter().filter(|s| s.count > 0);
            ctx.fill(x, live, !proposer, &mut self.buf);
            self.opts.clear();
            self.opts.extend((0..j as u32).map(Label::Inst));
            if proposer {
                self.opts.extend(
                    self.tail
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.count > 0)
                        .map(|(t, _)| Label::Tail(t as u32)),
                );
            }
            let pick = rng.categorical_log_with(&self.buf, &mut self.scratch)?;
            let next = if pick < self.opts.len() {
                self.opts[pick]
            } else {
                Label::Tail(self.new_tail_slot())
            };
            let x = &self.data.data[i * self.data.dim..(i + 1) * self.data.dim];
            match next {
                Label::Inst(k) => self.inst[k as usize].add(x),
                Label::Tail(t) => self.tail[t as usize].add(x),
            }
            self.labels[i] = next;
        }
        Ok(())
    }

    fn report(&self, worker_id: u32, epoch: u64) -> Message {
        let mut msg = Message::report(worker_id, epoch);
        msg.components = self
            .inst
            .iter()
            .enumerate()
            .map(|(k, s)| ComponentStats {
                id: k as u64 + 1,
                m: s.count as u64,
                sum: s.sum.clone(),
                gram_row: None,
                tables: None,
            })
            .collect();
        msg.new_components = self
            .tail
            .iter()
            .enumerate()
            .filter(|(_, s)| s.count > 0)
            .map(|(t, s)| NewComponent {
                birth: t as u64,
                m: s.count as u64,
                sum: s.sum.clone(),
                gram_row: None,
                tables: None,
            })
            .collect();
        msg
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }
}

/// Coordinator state for mixtures: merged counts and sums, fresh weights and atoms.
pub struct MixtureGlobal {
    prior: GaussFixedVarPrior,
    alpha: f64,
    sigma: f64,
    n: u64,
    comps: Vec<ClusterSuffStats>,
    sources: Vec<Source>,
    weights: Vec<f64>,
    atoms: Vec<Vec<f64>>,
    b_star: f64,
    train_sq: f64,
    test: Rows,
}

impl MixtureGlobal {
    /// `train_sq` is the summed squared norm of all training rows.
    pub fn new(prior: GaussFixedVarPrior, alpha: f64, sigma: f64, n: u64, train_sq: f64, test: Rows) -> Result<Self> {
        check_discount(alpha, sigma)?;
        if n == 0 {
            return param("need at least one training point");
        }
        let dim = prior.dim();
        Ok(MixtureGlobal {
            prior,
            alpha,
            sigma,
            n,
            comps: vec![ClusterSuffStats::empty(dim)],
            sources: vec![Source::Prev(1)],
            weights: Vec::new(),
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
        &self.weights
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn counts(&self) -> Vec<usize> {
        self.comps.iter().map(|s| s.count).collect()
    }

    /// Per-point log predictive of the decomposed measure at `J = K`.
    pub fn predictive_logpdf(&self, x: &[f64]) -> f64 {
        let ln_b = self.b_star.ln();
        let mut terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.atoms)
            .map(|(w, th)| ln_b + w.ln() + crate::conjugate::iso_normal_logpdf(x, th, self.prior.obs_var))
            .collect();
        terms.push((1.0 - self.b_star).ln() + prior_predictive_logpdf(&self.prior, x));
        crate::bench::metrics::logsumexp(&terms)
    }
}

impl GlobalModel for MixtureGlobal {
    fn merge(&mut self, reports: &[Message]) -> Result<()> {
        check_sorted_reports(reports, None)?;
        let dim = self.prior.dim();
        let jp = self.comps.len();
        let mut merged = vec![ClusterSuffStats::empty(dim); jp];
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
                sources.push(Source::Born(w, c.birth));
            }
        }
        let total: u64 = merged.iter().map(|s| s.count as u64).sum();
        if total != self.n {
            return Err(CrmhError::Protocol(format!("reports account for {total} points, expected {}", self.n)));
        }
        let keep: Vec<usize> = (0..merged.len()).filter(|&k| merged[k].count > 0).collect();
        self.comps = keep.iter().map(|&k| std::mem::take(&mut merged[k])).collect();
        self.sources = keep.iter().map(|&k| sources[k]).collect();
        Ok(())
    }

    fn resample(&mut self, rng: &mut RngStream) -> Result<Message> {
        let j = self.comps.len();
        let js = j as f64 * self.sigma;
        let n = self.n as f64;
        self.b_star = rng.beta(n - js, self.alpha + js)?;
        let conc: Vec<f64> = self.comps.iter().map(|s| s.count as f64 - self.sigma).collect();
        self.weights = rng.dirichlet(&conc)?;
        self.atoms = self.comps.iter().map(|s| self.prior.sample_atom(s, rng)).collect();
        let mut msg = Message::update();
        msg.b_star = Some(self.b_star);
        msg.params = (0..j)
            .map(|k| ParamEntry {
                id: k as u64 + 1,
                source: self.sources[k],
                weight: self.weights[k],
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
            extra: None,
        })
    }

    fn num_components(&self) -> usize {
        self.comps.len()
    }

    fn component_sizes(&self) -> Vec<u64> {
        self.comps.iter().map(|s| s.count as u64).collect()
    }
}

pub(crate) fn add_wire(s: &mut ClusterSuffStats, m: u64, sum: &[f64], dim: usize) -> Result<()> {
    if sum.len() != dim {
        return Err(CrmhError::Protocol("sufficient statistic has the wrong width".into()));
    }
    s.count += m as usize;
    for (a, b) in s.sum.iter_mut().zip(sum) {
        *a += b;
    }
    Ok(())
}

/// Serial hybrid mixture sampler (DP when `sigma = 0`, Pitman-Yor otherwise).
pub struct MixtureHybrid {
    chain: HybridChain<MixtureGlobal, MixtureShard>,
}

impl MixtureHybrid {
    pub fn new(train: Rows, test: Rows, prior: GaussFixedVarPrior, alpha: f64, sigma: f64, root: &RngStream) -> Result<Self> {
        let global = MixtureGlobal::new(prior.clone(), alpha, sigma, train.len() as u64, train.sum_sq(), test)?;
        let shard = MixtureShard::new(1, prior, alpha, sigma, train)?;
        Ok(MixtureHybrid {
            chain: HybridChain::new(global, shard, root)?,
        })
    }

    /// One iteration: sweep with the current parameters, then resample
    /// `B*`, weights and atoms with `J = K`.
    pub fn iterate(&mut self) -> Result<Metrics> {
        self.chain.step()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.chain.shard.labels()
    }

    pub fn global(&self) -> &MixtureGlobal {
        &self.chain.global
    }

    pub fn num_components(&self) -> usize {
        self.chain.global.num_components()
    }
}
