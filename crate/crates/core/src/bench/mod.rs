//! Experiment harness: data generators, metrics, configuration and traces.

pub mod config;
pub mod data;
pub mod experiment;
pub mod metrics;

pub use config::{DatasetSpec, ExperimentConfig, Model, SamplerKind};
pub use data::{gen_cambridge, gen_gauss_blobs, gen_grouped, split_indices, Dataset};
pub use experiment::{build_split, run_experiment, run_sampler, RunOutput, TRACE_HEADER};
pub use metrics::{median, pairwise_f1};
