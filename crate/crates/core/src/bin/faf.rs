use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use faf_core::allocation::{AllocateRequest, AllocationRegime};
use faf_core::api::{self, BoundsRequest, EstimateRequest, McAnalysis, McOptions};
use faf_core::bounds::BoundConfig;
use faf_core::data_gen::{sample_group, DatasetSidecar};
use faf_core::io::{read_model, write_dataset_csv};
use faf_core::model::{Group, PopulationModel, DEFAULT_GRID_POINTS};
use faf_core::montecarlo::{McConfig, ProbeConfig};
use faf_core::rng::RngSpec;
use faf_core::service::{serve_blocking, ServiceConfig};
use faf_core::{FafError, Result};

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "faf", version, about = "Fairness-accuracy frontiers for two-group linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the population frontier over a uniform weight grid.
    Frontier {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
        /// `.json` writes JSON, anything else CSV. Defaults to CSV on stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an estimator to data given inline, sampled, or from CSV files.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the model in the config.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every bound, optionally over a parameter sweep.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// `name=start:end:{lin|log}[:points]`, name in n_r, n_b, n, lambda, het, noise_var.
        #[arg(long)]
        sweep: Option<String>,
        /// `.csv` writes CSV, anything else JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 4 when any bound precondition is violated.
        #[arg(long)]
        strict: bool,
    },
    /// Split a sampling budget between the groups.
    Allocate {
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Regime::BoundSearch)]
        regime: Regime,
        /// Per-group minimum; defaults to d.
        #[arg(long)]
        floor: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo experiments.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Analysis::Excess)]
        analysis: Analysis,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Weight grid size for the band analysis.
        #[arg(long)]
        grid: Option<usize>,
        /// Comma-separated sample sizes for the rate analysis.
        #[arg(long)]
        n_grid: Option<String>,
        /// Band: `.csv` writes the band CSV. Others: JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case risk over a hypercube of instances.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        persist: Option<PathBuf>,
        /// Concurrent Monte Carlo jobs; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
    },
    /// Check a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one group's dataset; writes CSV and a `.json` sidecar.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        group: Group,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    KnownCov,
    BoundSearch,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Excess,
    Decomposition,
    Asymmetry,
    Band,
    Rate,
}

impl From<Analysis> for McAnalysis {
    fn from(a: Analysis) -> Self {
        match a {
            Analysis::Excess => McAnalysis::Excess,
            Analysis::Decomposition => McAnalysis::Decomposition,
            Analysis::Asymmetry => McAnalysis::Asymmetry,
            Analysis::Band => McAnalysis::Band,
            Analysis::Rate => McAnalysis::Rate,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(out, &text)
}

fn is_ext(out: Option<&Path>, ext: &str) -> bool {
    out.and_then(|p| p.extension()).and_then(|e| e.to_str()) == Some(ext)
}

/// `Ok(code)` for runs that completed but should exit nonzero.
fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Frontier { model, grid, out } => {
            let m = read_model(&model)?;
            if is_ext(out.as_deref(), "json") {
                emit_json(out.as_deref(), &api::frontier(&m, grid)?)?;
            } else {
                emit_text(out.as_deref(), &api::frontier_csv(&m, grid)?)?;
            }
        }
        Command::Estimate { config, model, out } => {
            let mut v: serde_json::Value = read_json(&config)?;
            if let Some(path) = model {
                let m = read_model(&path)?;
                v["model"] = serde_json::to_value(&m)?;
            }
            let req: EstimateRequest = serde_json::from_value(v)?;
            emit_json(out.as_deref(), &api::estimate(&req, true)?)?;
        }
        Command::Bounds { config, sweep, out, strict } => {
            let req = BoundsRequest { config: read_json(&config)?, sweep };
            let resp = api::bounds(&req)?;
            if is_ext(out.as_deref(), "csv") {
                emit_text(out.as_deref(), &api::bounds_csv(&req)?)?;
            } else {
                emit_json(out.as_deref(), &resp)?;
            }
            let violations = resp.violations();
            for v in &violations {
                eprintln!("faf: precondition not met: {v}");
            }
            if strict && !violations.is_empty() {
                return Ok(4);
            }
        }
        Command::Allocate { budget, config, regime, floor, out } => {
            let cfg: BoundConfig = read_json(&config)?;
            let req = AllocateRequest {
                budget,
                config: cfg,
                regime: match regime {
                    Regime::KnownCov => AllocationRegime::KnownCovRule,
                    Regime::BoundSearch => AllocationRegime::BoundSearch,
                },
                floor,
            };
            emit_json(out.as_deref(), &api::allocation(&req)?)?;
        }
        Command::Mc { config, analysis, seed, replicates, grid, n_grid, out } => {
            let mut cfg: McConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            let opts = McOptions {
                analysis: analysis.into(),
                grid,
                n_grid: n_grid.as_deref().map(McOptions::parse_n_grid).transpose()?,
                keep_cloud: false,
            };
            if opts.analysis == McAnalysis::Band && is_ext(out.as_deref(), "csv") {
                emit_text(out.as_deref(), &api::band_csv(&cfg, &opts)?)?;
            } else {
                emit_json(out.as_deref(), &api::run_mc(&cfg, &opts)?)?;
            }
        }
        Command::Probe { config, seed, replicates, out } => {
            let mut cfg: ProbeConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            emit_json(out.as_deref(), &api::probe(&cfg)?)?;
        }
        Command::Serve { port, persist, workers, host } => {
            let mut cfg = ServiceConfig { persist, ..ServiceConfig::default() };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            serve_blocking(SocketAddr::new(host, port), cfg)?;
        }
        Command::Validate { model, out } => {
            let m: PopulationModel = read_model(&model)?;
            emit_json(out.as_deref(), &api::validate(&m))?;
        }
        Command::Sample { model, group, n, seed, stream, out } => {
            let m = read_model(&model)?;
            let data = sample_group(&m, group, n, RngSpec::new(seed, stream))?;
            let mut buf = Vec::new();
            write_dataset_csv(&data.xs, &data.ys, &mut buf)?;
            std::fs::write(&out, buf)?;
            let sidecar = DatasetSidecar { seed, stream, n, d: m.dim(), group };
            let mut side = out.clone().into_os_string();
            side.push(".json");
            emit_json(Some(Path::new(&side)), &sidecar)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("faf: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &FafError) -> u8 {
    e.class().exit_code() as u8
}
