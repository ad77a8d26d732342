//! Build a sampler from a config, run it, and write the trace and summary.

use std::io::Write;
use std::net::TcpListener;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bench::config::{DatasetSpec, ExperimentConfig, Model, SamplerKind};
use crate::bench::data::{gen_cambridge, gen_gauss_blobs, gen_grouped, read_dataset, split_indices, Dataset};
use crate::chain::{streams, GlobalModel, HybridChain, Metrics, ShardModel};
use crate::conjugate::{GaussFixedVarPrior, LinearGaussianModel};
use crate::dist::{
    hdp_group_partition, run_coordinator, run_in_memory, run_worker, shard_ranges, DistConfig, Link, TcpLink, TraceRow,
};
use crate::dpmm::{CollapsedMixture, MixtureGlobal, MixtureShard, UncollapsedDpmm};
use crate::error::{CrmhError, Result};
use crate::ibp::{IbpGlobal, IbpShard};
use crate::matrix::Rows;
use crate::pyhdp::{HdpGlobal, HdpShard};
use crate::rng::RngStream;

pub const TRACE_HEADER: &str = "iter,wall_time_s,train_ll,test_ll,K,b_star,proposers,extra";

/// Comment line placed above the CSV header.
pub fn trace_note(model: Model) -> &'static str {
    match model {
        Model::Dpmm | Model::Pymm => {
            "# test_ll: mean log predictive of held-out rows under B*·Σπ_k f(x;θ_k) + (1-B*)·f_H(x) at J=K"
        }
        Model::Hdp => "# test_ll: mean log predictive under the top-level measure B*·Σβ_k f(x;φ_k) + (1-B*)·f_H(x); extra: total tables",
        Model::Ibp => {
            "# test_ll: mean log of (1/S)·Σ_s N(x; z_s A, σ_X² I), z_s ~ Bernoulli(μ), A at its posterior mean; extra: Σ_k m_k"
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV line without the trailing newline.
pub fn format_row(row: &TraceRow) -> String {
    let m = &row.metrics;
    format!(
        "{},{},{},{},{},{},{},{}",
        row.iter,
        row.wall_time_s,
        m.train_ll,
        fmt_opt(m.test_ll),
        m.num_components,
        fmt_opt(m.b_star),
        row.proposers,
        fmt_opt(m.extra)
    )
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<TraceRow>,
    pub final_k: usize,
    pub component_sizes: Vec<u64>,
    /// Cluster or dish per training row (mixtures and HDP).
    pub labels: Option<Vec<usize>>,
    /// Feature matrix of the training rows (IBP).
    pub z: Option<DMatrix<f64>>,
    pub runtime_s: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: std::collections::BTreeMap<String, String>,
    seed: u64,
    #[serde(rename = "final_K")]
    final_k: usize,
    component_sizes: &'a [u64],
    runtime_s: f64,
}

/// Generate or load the data set named in the config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut rng = RngStream::new(cfg.seed, 0).split(streams::DATA);
    match &cfg.dataset {
        DatasetSpec::GaussBlobs => gen_gauss_blobs(cfg.n, cfg.dim, &mut rng),
        DatasetSpec::Grouped => gen_grouped(cfg.n, cfg.dim, cfg.groups, &mut rng),
        DatasetSpec::Cambridge => gen_cambridge(cfg.n, &mut rng),
        DatasetSpec::File(p) => read_dataset(p),
    }
}

/// Train and test parts of the configured data set.
pub fn build_split(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let ds = build_dataset(cfg)?;
    let (tr, te) = split_indices(cfg.seed, ds.len(), cfg.test_fraction)?;
    Ok((ds.select(&tr), ds.select(&te)))
}

fn gauss_prior(cfg: &ExperimentConfig, dim: usize) -> Result<GaussFixedVarPrior> {
    GaussFixedVarPrior::isotropic(dim, 0.0, cfg.prior_var, cfg.obs_var)
}

fn lg_model(cfg: &ExperimentConfig, dim: usize) -> LinearGaussianModel {
    LinearGaussianModel {
        feature_var: cfg.feature_var,
        noise_var: cfg.noise_var,
        dim,
    }
}

fn dist_config(cfg: &ExperimentConfig) -> DistConfig {
    DistConfig {
        workers: cfg.workers,
        epochs: cfg.iterations,
        sync_period: cfg.sync_period,
        local_sweeps: cfg.local_sweeps,
        schedule: cfg.schedule,
    }
}

/// Training-row indices held by each worker.
pub fn worker_rows(cfg: &ExperimentConfig, train: &Dataset) -> Vec<Vec<usize>> {
    let p = if cfg.sampler == SamplerKind::Distributed { cfg.workers } else { 1 };
    if cfg.model == Model::Hdp {
        let groups = restaurant_of(train);
        let mut ids: Vec<u32> = groups.clone();
        ids.sort_unstable();
        ids.dedup();
        let sizes: Vec<usize> = ids.iter().map(|g| groups.iter().filter(|&&x| x == *g).count()).collect();
        hdp_group_partition(&sizes, p)
            .into_iter()
            .map(|rs| {
                let mine: Vec<u32> = rs.iter().map(|&r| ids[r]).collect();
                (0..train.len()).filter(|&i| mine.contains(&groups[i])).collect()
            })
            .collect()
    } else {
        shard_ranges(train.len(), p).into_iter().map(|r| r.collect()).collect()
    }
}

fn restaurant_of(ds: &Dataset) -> Vec<u32> {
    ds.groups.clone().unwrap_or_else(|| vec![0; ds.len()])
}

/// Shard for worker `w` (1-based) of the configured hybrid model.
pub enum AnyShard {
    Mixture(MixtureShard),
    Ibp(IbpShard),
    Hdp(HdpShard),
}

pub fn build_shard(cfg: &ExperimentConfig, train: &Dataset, rows: &[usize], w: u32) -> Result<AnyShard> {
    let dim = train.x.dim;
    let data = train.x.select(rows);
    Ok(match cfg.model {
        Model::Dpmm | Model::Pymm => {
            AnyShard::Mixture(MixtureShard::new(w, gauss_prior(cfg, dim)?, cfg.alpha, cfg.sigma, data)?)
        }
        Model::Ibp => AnyShard::Ibp(IbpShard::new(
            w,
            lg_model(cfg, dim),
            cfg.alpha,
            train.len() as u64,
            data,
            cfg.ibp_init_ones,
        )?),
        Model::Hdp => {
            let groups = restaurant_of(train);
            let g: Vec<u32> = rows.iter().map(|&i| groups[i]).collect();
            AnyShard::Hdp(HdpShard::new(w, gauss_prior(cfg, dim)?, cfg.alpha, cfg.gamma, data, &g, rows.to_vec())?)
        }
    })
}

fn hybrid_run<G: GlobalModel, S: ShardModel>(
    cfg: &ExperimentConfig,
    global: G,
    mut shards: Vec<S>,
    on_row: &mut dyn FnMut(&TraceRow) -> Result<()>,
) -> Result<(G, Vec<S>, Vec<TraceRow>)> {
    let root = RngStream::new(cfg.seed, 0);
    let mut rows = Vec::new();
    let mut push = |r: TraceRow| -> Result<()> {
        on_row(&r)?;
        rows.push(r);
        Ok(())
    };
    if cfg.sampler == SamplerKind::Distributed {
        let (g, s) = run_in_memory(global, shards, &dist_config(cfg), &root, |r| push(r.clone()))?;
        Ok((g, s, rows))
    } else {
        let shard = shards.pop().ok_or_else(|| CrmhError::State("no shard".into()))?;
        let mut chain = HybridChain::new(global, shard, &root)?;
        let start = Instant::now();
        for _ in 0..cfg.iterations {
            let metrics = chain.step()?;
            push(TraceRow {
                iter: chain.iteration(),
                wall_time_s: start.elapsed().as_secs_f64(),
                metrics,
                proposers: 1,
            })?;
        }
        Ok((chain.global, vec![chain.shard], rows))
    }
}

fn baseline_run(
    cfg: &ExperimentConfig,
    mut iterate: impl FnMut() -> Result<Metrics>,
    on_row: &mut dyn FnMut(&TraceRow) -> Result<()>,
) -> Result<Vec<TraceRow>> {
    let start = Instant::now();
    let mut rows = Vec::new();
    for it in 1..=cfg.iterations {
        let metrics = iterate()?;
        let row = TraceRow {
            iter: it,
            wall_time_s: start.elapsed().as_secs_f64(),
            metrics,
            proposers: 1,
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Run the configured sampler on `train`, scoring on `test`.
pub fn run_sampler(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Rows,
    on_row: &mut dyn FnMut(&TraceRow) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dim = train.x.dim;
    let root = RngStream::new(cfg.seed, 0);
    let n = train.len() as u64;
    let mut out = match (cfg.model, cfg.sampler) {
        (Model::Dpmm | Model::Pymm, SamplerKind::Collapsed) => {
            let mut s = CollapsedMixture::new(
                train.x.clone(),
                test.clone(),
                gauss_prior(cfg, dim)?,
                cfg.alpha,
                cfg.sigma,
                root.split(streams::BASELINE),
                root.split(streams::METRICS),
            )?;
            let rows = baseline_run(cfg, || s.iterate(), on_row)?;
            RunOutput {
                rows,
                final_k: s.num_components(),
                component_sizes: s.component_sizes(),
                labels: Some(s.labels().to_vec()),
                z: None,
                runtime_s: 0.0,
            }
        }
        (Model::Dpmm, SamplerKind::Uncollapsed) => {
            let mut s = UncollapsedDpmm::new(
                train.x.clone(),
                test.clone(),
                gauss_prior(cfg, dim)?,
                cfg.alpha,
                cfg.empty_atoms,
                root.split(streams::BASELINE),
            )?;
            let rows = baseline_run(cfg, || s.iterate(), on_row)?;
            RunOutput {
                rows,
                final_k: s.num_components(),
                component_sizes: s.component_sizes(),
                labels: Some(s.labels().to_vec()),
                z: None,
                runtime_s: 0.0,
            }
        }
        (_, SamplerKind::Hybrid | SamplerKind::Distributed) => {
            let parts = worker_rows(cfg, train);
            let mut shards = Vec::with_capacity(parts.len());
            for (w, rows) in parts.iter().enumerate() {
                shards.push(build_shard(cfg, train, rows, w as u32 + 1)?);
            }
            match cfg.model {
                Model::Dpmm | Model::Pymm => {
                    let g = MixtureGlobal::new(gauss_prior(cfg, dim)?, cfg.alpha, cfg.sigma, n, train.x.sum_sq(), test.clone())?;
                    let shards: Vec<MixtureShard> = shards
                        .into_iter()
                        .map(|s| match s {
                            AnyShard::Mixture(m) => m,
                            _ => unreachable!(),
                        })
                        .collect();
                    let (g, shards, rows) = hybrid_run(cfg, g, shards, on_row)?;
                    let mut labels = vec![0usize; train.len()];
                    for (s, idx) in shards.iter().zip(&parts) {
                        for (l, &i) in s.labels().into_iter().zip(idx) {
                            labels[i] = l;
                        }
                    }
                    RunOutput {
                        rows,
                        final_k: g.num_components(),
                        component_sizes: g.component_sizes(),
                        labels: Some(labels),
                        z: None,
                        runtime_s: 0.0,
                    }
                }
                Model::Hdp => {
                    let g = HdpGlobal::new(gauss_prior(cfg, dim)?, cfg.alpha, cfg.gamma, n, train.x.sum_sq(), test.clone())?;
                    let shards: Vec<HdpShard> = shards
                        .into_iter()
                        .map(|s| match s {
                            AnyShard::Hdp(m) => m,
                            _ => unreachable!(),
                        })
                        .collect();
                    let (g, shards, rows) = hybrid_run(cfg, g, shards, on_row)?;
                    let mut labels = vec![0usize; train.len()];
                    for s in &shards {
                        for (l, &i) in s.labels().into_iter().zip(s.index()) {
                            labels[i] = l;
                        }
                    }
                    RunOutput {
                        rows,
                        final_k: g.num_components(),
                        component_sizes: g.component_sizes(),
                        labels: Some(labels),
                        z: None,
                        runtime_s: 0.0,
                    }
                }
                Model::Ibp => {
                    let g = IbpGlobal::new(lg_model(cfg, dim), cfg.c, n, train.x.sum_sq(), test.clone(), cfg.ibp_init_ones)?
                        .with_test_samples(cfg.test_samples);
                    let shards: Vec<IbpShard> = shards
                        .into_iter()
                        .map(|s| match s {
                            AnyShard::Ibp(m) => m,
                            _ => unreachable!(),
                        })
                        .collect();
                    let (g, shards, rows) = hybrid_run(cfg, g, shards, on_row)?;
                    let k = g.num_components();
                    let mut z = DMatrix::zeros(train.len(), k);
                    for (s, idx) in shards.iter().zip(&parts) {
                        let zs = s.z_matrix();
                        for (r, &i) in idx.iter().enumerate() {
                            for c in 0..k.min(zs.ncols()) {
                                z[(i, c)] = zs[(r, c)];
                            }
                        }
                    }
                    RunOutput {
                        rows,
                        final_k: k,
                        component_sizes: g.component_sizes(),
                        labels: None,
                        z: Some(z),
                        runtime_s: 0.0,
                    }
                }
            }
        }
        (m, s) => return Err(CrmhError::Config(format!("sampler {s:?} is not available for model {m:?}"))),
    };
    out.runtime_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Full pipeline: data, split, run, then `trace.csv` and `summary.json`
/// under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (train, test) = build_split(cfg)?;
    with_trace(cfg, |on_row| run_sampler(cfg, &train, &test.x, on_row))
}

fn with_trace(
    cfg: &ExperimentConfig,
    run: impl FnOnce(&mut dyn FnMut(&TraceRow) -> Result<()>) -> Result<RunOutput>,
) -> Result<RunOutput> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut trace = std::io::BufWriter::new(std::fs::File::create(cfg.out.join("trace.csv"))?);
    writeln!(trace, "{}", trace_note(cfg.model))?;
    writeln!(trace, "{TRACE_HEADER}")?;
    let out = run(&mut |row| {
        writeln!(trace, "{}", format_row(row))?;
        Ok(())
    })?;
    trace.flush()?;
    let summary = Summary {
        config: cfg.echo(),
        seed: cfg.seed,
        final_k: out.final_k,
        component_sizes: &out.component_sizes,
        runtime_s: out.runtime_s,
    };
    std::fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(out)
}

fn coordinate<G: GlobalModel>(
    cfg: &ExperimentConfig,
    mut global: G,
    links: Vec<Box<dyn Link>>,
    on_row: &mut dyn FnMut(&TraceRow) -> Result<()>,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut rows = Vec::new();
    run_coordinator(&mut global, links, &dist_config(cfg), &RngStream::new(cfg.seed, 0), |r| {
        on_row(r)?;
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(RunOutput {
        rows,
        final_k: global.num_components(),
        component_sizes: global.component_sizes(),
        labels: None,
        z: None,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Coordinator of a multi-process run. Accepts `cfg.workers` connections on
/// `listener`, then writes the trace and summary like [`run_experiment`].
/// Labels stay with the workers.
pub fn run_tcp_coordinator(cfg: &ExperimentConfig, listener: &TcpListener) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.sampler != SamplerKind::Distributed {
        return Err(CrmhError::Config("--listen requires sampler=distributed".into()));
    }
    let (train, test) = build_split(cfg)?;
    let mut links: Vec<Box<dyn Link>> = Vec::new();
    for _ in 0..cfg.workers {
        let (stream, _) = listener.accept()?;
        links.push(Box::new(TcpLink::new(stream)?));
    }
    let dim = train.x.dim;
    let n = train.len() as u64;
    let test = test.x;
    with_trace(cfg, |on_row| match cfg.model {
        Model::Dpmm | Model::Pymm => {
            let g = MixtureGlobal::new(gauss_prior(cfg, dim)?, cfg.alpha, cfg.sigma, n, train.x.sum_sq(), test)?;
            coordinate(cfg, g, links, on_row)
        }
        Model::Hdp => {
            let g = HdpGlobal::new(gauss_prior(cfg, dim)?, cfg.alpha, cfg.gamma, n, train.x.sum_sq(), test)?;
            coordinate(cfg, g, links, on_row)
        }
        Model::Ibp => {
            let g = IbpGlobal::new(lg_model(cfg, dim), cfg.c, n, train.x.sum_sq(), test, cfg.ibp_init_ones)?
                .with_test_samples(cfg.test_samples);
            coordinate(cfg, g, links, on_row)
        }
    })
}

/// Worker `worker_id` of a multi-process run. Rebuilds the data from the
/// shared config, keeps its own rows and serves them to the coordinator.
pub fn run_tcp_worker(cfg: &ExperimentConfig, worker_id: u32, addr: &str, wait: Duration) -> Result<()> {
    cfg.validate()?;
    if worker_id == 0 || worker_id > cfg.workers {
        return Err(CrmhError::Config(format!("worker id {worker_id} outside 1..={}", cfg.workers)));
    }
    let (train, _) = build_split(cfg)?;
    let parts = worker_rows(cfg, &train);
    let shard = build_shard(cfg, &train, &parts[worker_id as usize - 1], worker_id)?;
    let mut link = TcpLink::connect(addr, wait)?;
    let root = RngStream::new(cfg.seed, 0);
    let dc = dist_config(cfg);
    match shard {
        AnyShard::Mixture(mut s) => run_worker(&mut s, worker_id, &mut link, &dc, &root),
        AnyShard::Ibp(mut s) => run_worker(&mut s, worker_id, &mut link, &dc, &root),
        AnyShard::Hdp(mut s) => run_worker(&mut s, worker_id, &mut link, &dc, &root),
    }
}

/// Drop the wall-time column so traces can be compared byte for byte.
pub fn strip_wall_time(trace: &str) -> String {
    trace
        .lines()
        .map(|l| {
            if l.starts_with('#') || l.starts_with("iter") {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 1 {
                f.remove(1);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
