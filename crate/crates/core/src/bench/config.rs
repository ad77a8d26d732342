//! Flat `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dist::Schedule;
use crate::error::{CrmhError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Dpmm,
    Ibp,
    Pymm,
    Hdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Hybrid,
    Collapsed,
    Uncollapsed,
    Distributed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    GaussBlobs,
    Cambridge,
    Grouped,
    File(PathBuf),
}

fn bad(msg: impl Into<String>) -> CrmhError {
    CrmhError::Config(msg.into())
}

impl FromStr for Model {
    type Err = CrmhError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpmm" => Ok(Model::Dpmm),
            "ibp" => Ok(Model::Ibp),
            "pymm" => Ok(Model::Pymm),
            "hdp" => Ok(Model::Hdp),
            _ => Err(bad(format!("unknown model '{s}' (dpmm, ibp, pymm, hdp)"))),
        }
    }
}

impl FromStr for SamplerKind {
    type Err = CrmhError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(SamplerKind::Hybrid),
            "collapsed" => Ok(SamplerKind::Collapsed),
            "uncollapsed" => Ok(SamplerKind::Uncollapsed),
            "distributed" => Ok(SamplerKind::Distributed),
            _ => Err(bad(format!("unknown sampler '{s}' (hybrid, collapsed, uncollapsed, distributed)"))),
        }
    }
}

impl DatasetSpec {
    fn parse(s: &str) -> Self {
        match s {
            "gauss_blobs" => DatasetSpec::GaussBlobs,
            "cambridge" => DatasetSpec::Cambridge,
            "grouped" => DatasetSpec::Grouped,
            path => DatasetSpec::File(PathBuf::from(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Model,
    pub sampler: SamplerKind,
    pub dataset: DatasetSpec,
    pub n: usize,
    pub dim: usize,
    pub groups: usize,
    pub seed: u64,
    pub alpha: f64,
    pub c: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub prior_var: f64,
    pub obs_var: f64,
    pub feature_var: f64,
    pub noise_var: f64,
    pub ibp_init_ones: bool,
    pub empty_atoms: usize,
    pub test_samples: usize,
    pub workers: u32,
    pub sync_period: u32,
    pub local_sweeps: u32,
    pub schedule: Schedule,
    pub iterations: u64,
    pub test_fraction: f64,
    pub out: PathBuf,
}

pub const KEYS: &[&str] = &[
    "model",
    "sampler",
    "dataset",
    "n",
    "dim",
    "groups",
    "seed",
    "alpha",
    "c",
    "sigma",
    "gamma",
    "prior_var",
    "obs_var",
    "feature_var",
    "noise_var",
    "ibp_init",
    "empty_atoms",
    "test_samples",
    "workers",
    "sync_period",
    "local_sweeps",
    "schedule",
    "iterations",
    "test_fraction",
    "out",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: Model::Dpmm,
            sampler: SamplerKind::Hybrid,
            dataset: DatasetSpec::GaussBlobs,
            n: 100,
            dim: 2,
            groups: 3,
            seed: 1,
            alpha: 1.0,
            c: 1.0,
            sigma: 0.0,
            gamma: 1.0,
            prior_var: 25.0,
            obs_var: 1.0,
            feature_var: 1.0,
            noise_var: 0.25,
            ibp_init_ones: true,
            empty_atoms: 3,
            test_samples: 100,
            workers: 1,
            sync_period: 5,
            local_sweeps: 1,
            schedule: Schedule::Warm,
            iterations: 100,
            test_fraction: 0.1,
            out: PathBuf::from("crmh-out"),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("{key}: cannot parse '{v}'")))
}

impl ExperimentConfig {
    /// Parse `key=value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", no + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
            for (k, v) in Self::parse_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => self.model = v.parse()?,
            "sampler" => self.sampler = v.parse()?,
            "dataset" => self.dataset = DatasetSpec::parse(v),
            "n" => self.n = num(key, v)?,
            "dim" => self.dim = num(key, v)?,
            "groups" => self.groups = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "c" => self.c = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "prior_var" => self.prior_var = num(key, v)?,
            "obs_var" => self.obs_var = num(key, v)?,
            "feature_var" => self.feature_var = num(key, v)?,
            "noise_var" => self.noise_var = num(key, v)?,
            "ibp_init" => {
                self.ibp_init_ones = match v {
                    "ones" => true,
                    "empty" => false,
                    _ => return Err(bad(format!("ibp_init must be 'ones' or 'empty', got '{v}'"))),
                }
            }
            "empty_atoms" => self.empty_atoms = num(key, v)?,
            "test_samples" => self.test_samples = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "sync_period" => self.sync_period = num(key, v)?,
            "local_sweeps" => self.local_sweeps = num(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "iterations" => self.iterations = num(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(bad(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(format!("{name} must be positive, got {v}")))
            }
        };
        pos("alpha", self.alpha)?;
        pos("c", self.c)?;
        pos("gamma", self.gamma)?;
        pos("prior_var", self.prior_var)?;
        pos("obs_var", self.obs_var)?;
        pos("feature_var", self.feature_var)?;
        pos("noise_var", self.noise_var)?;
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(bad(format!("sigma must lie in [0, 1), got {}", self.sigma)));
        }
        if self.model != Model::Pymm && self.sigma != 0.0 {
            return Err(bad("sigma is only used by model=pymm"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction)));
        }
        if self.n < 2 || self.dim == 0 || self.groups == 0 {
            return Err(bad("need n >= 2, dim >= 1 and groups >= 1"));
        }
        if self.workers == 0 || self.sync_period == 0 || self.local_sweeps == 0 {
            return Err(bad("workers, sync_period and local_sweeps must be positive"));
        }
        if self.empty_atoms == 0 || self.test_samples == 0 {
            return Err(bad("empty_atoms and test_samples must be positive"));
        }
        match (self.model, self.sampler) {
            (_, SamplerKind::Hybrid | SamplerKind::Distributed) => {}
            (Model::Dpmm | Model::Pymm, SamplerKind::Collapsed) => {}
            (Model::Dpmm, SamplerKind::Uncollapsed) => {}
            (m, s) => return Err(bad(format!("sampler {s:?} is not available for model {m:?}"))),
        }
        if self.sampler != SamplerKind::Distributed && self.workers != 1 {
            return Err(bad("workers > 1 requires sampler=distributed"));
        }
        Ok(())
    }

    /// Every key with its current value, for the run summary.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let model = match self.model {
            Model::Dpmm => "dpmm",
            Model::Ibp => "ibp",
            Model::Pymm => "pymm",
            Model::Hdp => "hdp",
        };
        let sampler = match self.sampler {
            SamplerKind::Hybrid => "hybrid",
            SamplerKind::Collapsed => "collapsed",
            SamplerKind::Uncollapsed => "uncollapsed",
            SamplerKind::Distributed => "distributed",
        };
        let dataset = match &self.dataset {
            DatasetSpec::GaussBlobs => "gauss_blobs".to_string(),
            DatasetSpec::Cambridge => "cambridge".to_string(),
            DatasetSpec::Grouped => "grouped".to_string(),
            DatasetSpec::File(p) => p.display().to_string(),
        };
        let vals = [
            model.to_string(),
            sampler.to_string(),
            dataset,
            self.n.to_string(),
            self.dim.to_string(),
            self.groups.to_string(),
            self.seed.to_string(),
            self.alpha.to_string(),
            self.c.to_string(),
            self.sigma.to_string(),
            self.gamma.to_string(),
            self.prior_var.to_string(),
            self.obs_var.to_string(),
            self.feature_var.to_string(),
            self.noise_var.to_string(),
            if self.ibp_init_ones { "ones" } else { "empty" }.to_string(),
            self.empty_atoms.to_string(),
            self.test_samples.to_string(),
            self.workers.to_string(),
            self.sync_period.to_string(),
            self.local_sweeps.to_string(),
            self.schedule.as_str().to_string(),
            self.iterations.to_string(),
            self.test_fraction.to_string(),
            self.out.display().to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }
}
