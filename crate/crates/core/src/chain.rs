//! The shard/global split shared by the serial hybrid samplers and the
//! distributed runtime. A serial hybrid iteration is exactly one distributed
//! epoch with a single worker that is always the proposer.

use crate::dist::message::Message;
use crate::error::{CrmhError, Result};
use crate::rng::RngStream;

/// Child ids of the root stream.
pub mod streams {
    pub const GLOBAL: u64 = 1;
    pub const PROPOSER: u64 = 2;
    pub const METRICS: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const WORKER_BASE: u64 = 100;

    pub fn worker(worker_id: u32) -> u64 {
        WORKER_BASE + worker_id as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub train_ll: f64,
    pub test_ll: Option<f64>,
    pub num_components: usize,
    pub b_star: Option<f64>,
    pub extra: Option<f64>,
}

/// Local data and assignments of one worker.
pub trait ShardModel: Send {
    /// Install a `GlobalUpdate`: relabel local components to the new dense ids
    /// and take the fresh parameters.
    fn apply(&mut self, update: &Message) -> Result<()>;
    /// One local sweep. Proposers may create components beyond `J`.
    fn sweep(&mut self, proposer: bool, rng: &mut RngStream) -> Result<()>;
    /// Additive statistics of every component touched by this shard.
    fn report(&self, worker_id: u32, epoch: u64) -> Message;
    fn num_points(&self) -> usize;
}

/// Coordinator-side model state.
pub trait GlobalModel: Send {
    /// `reports` must be sorted by worker id.
    fn merge(&mut self, reports: &[Message]) -> Result<()>;
    /// Draw parameters for every component; returns the update without epoch
    /// or proposer set.
    fn resample(&mut self, rng: &mut RngStream) -> Result<Message>;
    fn metrics(&self, rng: &mut RngStream) -> Result<Metrics>;
    fn num_components(&self) -> usize;
    fn component_sizes(&self) -> Vec<u64>;
}

pub(crate) fn check_sorted_reports(reports: &[Message], epoch_check: Option<u64>) -> Result<()> {
    let mut last = 0u32;
    for r in reports {
        r.expect(crate::dist::message::MessageType::Report)?;
        let w = r
            .worker_id
            .ok_or_else(|| CrmhError::Protocol("report without worker_id".into()))?;
        if w <= last {
            return Err(CrmhError::Protocol(format!("duplicate or unordered report from worker {w}")));
        }
        if let Some(e) = epoch_check {
            if r.epoch() != e {
                return Err(CrmhError::Protocol(format!(
                    "stale report from worker {w}: epoch {} but expected {e}",
                    r.epoch()
                )));
            }
        }
        last = w;
    }
    Ok(())
}

/// Serial hybrid sampler built from one shard and one global model.
pub struct HybridChain<G: GlobalModel, S: ShardModel> {
    pub global: G,
    pub shard: S,
    global_rng: RngStream,
    worker_rng: RngStream,
    metrics_rng: RngStream,
    iteration: u64,
}

impl<G: GlobalModel, S: ShardModel> HybridChain<G, S> {
    pub fn new(mut global: G, mut shard: S, root: &RngStream) -> Result<Self> {
        let mut global_rng = root.split(streams::GLOBAL);
        let report = shard.report(1, 0);
        global.merge(std::slice::from_ref(&report))?;
        let mut update = global.resample(&mut global_rng)?;
        update.epoch = Some(1);
        update.proposers = vec![1];
        shard.apply(&update)?;
        Ok(HybridChain {
            global,
            shard,
            global_rng,
            worker_rng: root.split(streams::worker(1)),
            metrics_rng: root.split(streams::METRICS),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Sweep, gather, resample; returns metrics of the freshly resampled state.
    pub fn step(&mut self) -> Result<Metrics> {
        self.iteration += 1;
        self.shard.sweep(true, &mut self.worker_rng)?;
        let report = self.shard.report(1, self.iteration);
        self.global.merge(std::slice::from_ref(&report))?;
        let mut update = self.global.resample(&mut self.global_rng)?;
        let metrics = self.global.metrics(&mut self.metrics_rng)?;
        update.epoch = Some(self.iteration + 1);
        update.proposers = vec![1];
        self.shard.apply(&update)?;
        Ok(metrics)
    }
}
