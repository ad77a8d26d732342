use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crmh::bench::data::write_dataset;
use crmh::bench::experiment::{build_dataset, run_tcp_coordinator, run_tcp_worker};
use crmh::bench::{run_experiment, DatasetSpec, ExperimentConfig};
use crmh::conjugate::GaussFixedVarPrior;
use crmh::dpmm::{exact_partition_posterior, exact_py_partition_posterior};
use crmh::pyhdp::exact_hdp_dish_posterior;
use crmh::{CrmhError, Result, Rows};

#[derive(Parser)]
#[command(name = "crmh", version, about = "Hybrid MCMC for completely random measure models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment; any config key can be given as `--key value`.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coordinate workers started with `crmh worker` instead of threads.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Serve one shard of a distributed run to a coordinator.
    Worker {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "ADDR")]
        connect: String,
        #[arg(long)]
        worker_id: u32,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 30)]
        wait: u64,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Write a synthetic data set as CSV (plus .labels / .groups files).
    Gen {
        #[arg(long, default_value = "gauss_blobs")]
        dataset: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        groups: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the exact posterior over partitions of a small data set.
    Oracle {
        #[arg(long, default_value = "dpmm")]
        model: String,
        /// Number of 1-D points drawn from the blob generator when --x is absent.
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// Comma-separated 1-D observations.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        /// Comma-separated restaurant ids (hdp); defaults to two halves.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 4.0)]
        prior_var: f64,
        #[arg(long, default_value_t = 1.0)]
        obs_var: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn pairs(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| CrmhError::Config(format!("expected --key, got '{a}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
            continue;
        }
        let v = it
            .next()
            .ok_or_else(|| CrmhError::Config(format!("--{key} needs a value")))?;
        out.push((key.replace('-', "_"), v.clone()));
    }
    Ok(out)
}

/// Remove `key` from the override list; the last occurrence wins.
fn take(pairs: &mut Vec<(String, String)>, key: &str) -> Option<String> {
    let mut found = None;
    pairs.retain(|(k, v)| {
        if k == key {
            found = Some(v.clone());
            false
        } else {
            true
        }
    });
    found
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CrmhError::Config(format!("{what}: cannot parse '{t}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, listen, overrides } => {
            let mut kv = pairs(&overrides)?;
            let listen = take(&mut kv, "listen").or(listen);
            let config = take(&mut kv, "config").map(PathBuf::from).or(config);
            let cfg = ExperimentConfig::load(config.as_deref(), &kv)?;
            let out = match listen {
                Some(addr) => {
                    let listener = TcpListener::bind(&addr)?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    run_tcp_coordinator(&cfg, &listener)?
                }
                None => run_experiment(&cfg)?,
            };
            println!(
                "K={} rows={} runtime={:.3}s out={}",
                out.final_k,
                out.rows.len(),
                out.runtime_s,
                cfg.out.display()
            );
        }
        Cmd::Worker {
            config,
            connect,
            worker_id,
            wait,
            overrides,
        } => {
            let mut kv = pairs(&overrides)?;
            let config = take(&mut kv, "config").map(PathBuf::from).or(config);
            let cfg = ExperimentConfig::load(config.as_deref(), &kv)?;
            run_tcp_worker(&cfg, worker_id, &connect, Duration::from_secs(wait))?;
        }
        Cmd::Gen {
            dataset,
            n,
            dim,
            groups,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::default();
            cfg.set("dataset", &dataset)?;
            if matches!(cfg.dataset, DatasetSpec::File(_)) {
                return Err(CrmhError::Config(format!(
                    "unknown generator '{dataset}' (gauss_blobs, cambridge, grouped)"
                )));
            }
            cfg.n = n;
            cfg.dim = dim;
            cfg.groups = groups;
            cfg.seed = seed;
            cfg.validate()?;
            let ds = build_dataset(&cfg)?;
            write_dataset(&ds, &out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Cmd::Oracle {
            model,
            n,
            x,
            groups,
            alpha,
            sigma,
            gamma,
            prior_var,
            obs_var,
            seed,
        } => {
            let x = match x {
                Some(s) => parse_list::<f64>(&s, "--x")?,
                None => {
                    let cfg = ExperimentConfig {
                        n,
                        dim: 1,
                        seed,
                        ..Default::default()
                    };
                    build_dataset(&cfg)?.x.data
                }
            };
            let len = x.len();
            let rows = Rows::new(1, x)?;
            let prior = GaussFixedVarPrior::isotropic(1, 0.0, prior_var, obs_var)?;
            let post = match model.as_str() {
                "dpmm" => exact_partition_posterior(&rows, alpha, &prior)?,
                "pymm" => exact_py_partition_posterior(&rows, alpha, sigma, &prior)?,
                "hdp" => {
                    let g = match groups {
                        Some(s) => parse_list::<u32>(&s, "--groups")?,
                        None => (0..len).map(|i| (2 * i / len) as u32).collect(),
                    };
                    exact_hdp_dish_posterior(&rows, &g, alpha, gamma, &prior)?
                }
                other => return Err(CrmhError::Config(format!("oracle supports dpmm, pymm, hdp; got '{other}'"))),
            };
            println!("partition,probability");
            for (part, p) in post {
                let labels: Vec<String> = part.iter().map(|l| l.to_string()).collect();
                println!("{},{p}", labels.join(" "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crmh: {e}");
            match e {
                CrmhError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
