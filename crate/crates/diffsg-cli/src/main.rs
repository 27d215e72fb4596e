//! `diffsg`: generate datasets, train the diffusion solver, sample
//! solutions, run baselines, evaluate, and export denoising traces.
//!
//! Every subcommand reads one TOML config (`--config`), applies flag
//! overrides, and writes a manifest next to its outputs; re-running a
//! manifest with `--threads 1` reproduces the outputs byte-for-byte.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "diffsg", version, about = "Diffusion-based solution generation for network optimization problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Problem kind override: co|msr3|msr80|nu.
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default 1 for reproducibility).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Samples per instance (best-of-K) override.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Condition strength override.
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Sampler override: ddpm|ddim.
    #[arg(long, global = true)]
    sampler: Option<String>,
    /// DDIM step subsequence, comma-separated, e.g. 20,15,10,5,1.
    #[arg(long, global = true, value_delimiter = ',')]
    ddim_steps: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/validation datasets with oracle labels plus
    /// normalization statistics.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the denoiser on the generated training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample solutions for instances from a dataset file.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file providing the instances.
        #[arg(long)]
        instances: PathBuf,
        /// How many instances to read from the file.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Evaluate the trained model on the validation splits.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to one domain: in|ood (default: both).
        #[arg(long)]
        domain: Option<String>,
    },
    /// Train/evaluate a baseline: gd|mtfnn.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        /// Baseline method.
        #[arg(long)]
        method: String,
        /// Restrict to one domain: in|ood (default: both).
        #[arg(long)]
        domain: Option<String>,
    },
    /// Export one denoising trajectory plus objective lattices.
    Trace {
        #[command(flatten)]
        common: CommonArgs,
        /// Index into the in-domain validation set.
        #[arg(long, default_value_t = 0)]
        instance_index: usize,
        /// Lattice points per axis.
        #[arg(long, default_value_t = 60)]
        resolution: usize,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData { common }
            | Command::Train { common }
            | Command::Sample { common, .. }
            | Command::Eval { common, .. }
            | Command::Baseline { common, .. }
            | Command::Trace { common, .. } => common,
        }
    }
}

fn resolve_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(problem) = &common.problem {
        config.problem = diffsg_core::problems::ProblemKind::parse(problem)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(k) = common.k {
        config.sampler.k = k;
    }
    if let Some(omega) = common.omega {
        config.guidance.omega = omega;
    }
    if let Some(sampler) = &common.sampler {
        config.sampler.kind = match sampler.as_str() {
            "ddpm" => diffsg_core::diffusion::SamplerKind::Ddpm,
            "ddim" => diffsg_core::diffusion::SamplerKind::Ddim,
            other => anyhow::bail!("unknown sampler {other:?} (expected ddpm|ddim)"),
        };
    }
    if let Some(steps) = &common.ddim_steps {
        config.sampler.ddim_steps = steps.clone();
    }
    config.guidance.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(cli.command.common())?;
    if config.threads == 0 {
        anyhow::bail!("--threads must be >= 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .ok(); // already built in-process (tests); the existing pool wins
    match &cli.command {
        Command::GenData { .. } => commands::gen_data(&config),
        Command::Train { .. } => commands::train(&config),
        Command::Sample { instances, count, .. } => commands::sample(&config, instances, *count),
        Command::Eval { domain, .. } => commands::eval(&config, domain.as_deref()),
        Command::Baseline { method, domain, .. } => {
            commands::baseline(&config, method, domain.as_deref())
        }
        Command::Trace { instance_index, resolution, .. } => {
            commands::trace(&config, *instance_index, *resolution)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIFFSG_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("diffsg: {err:#}");
            ExitCode::FAILURE
        }
    }
}
