//! `pab`: estimate the probabilistic available bandwidth of every path in a
//! network from packet-train probes (or a simulated prober), with
//! factor-graph inference and active sampling.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::EstimateOpts;

#[derive(Parser)]
#[command(name = "pab", version, about, max_term_width = 100)]
struct Cli {
    /// Config file (TOML) supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for results and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the PAB of every path in a topology.
    Estimate {
        #[command(flatten)]
        opts: EstimateOpts,
        /// Exit nonzero when the run stops at the iteration cap.
        #[arg(long)]
        strict: bool,
        /// Also write the factor-graph structure and all variable marginals.
        #[arg(long)]
        dump_graph: bool,
    },
    /// Probe the interval bounds reported by a previous estimate run.
    Validate {
        #[command(flatten)]
        opts: EstimateOpts,
        /// results.json from the estimate run.
        #[arg(long)]
        results: PathBuf,
        /// Probes per (path, rate) test.
        #[arg(long, default_value_t = 20)]
        reps: u64,
    },
    /// Batch simulation sweeps over strategies or topology error.
    Sweep {
        #[command(flatten)]
        args: SweepArgs,
    },
    /// Fit the likelihood model from a training CSV
    /// (path_id,rate_mbps,success_count,total_count).
    FitLikelihood {
        /// Training samples CSV.
        #[arg(long)]
        samples: PathBuf,
        /// Clamp floor for the fitted curve.
        #[arg(long, default_value_t = 0.02)]
        kappa: f64,
        /// Success probability the deployed model should align at r = y.
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
    },
    /// Run the packet-train receiver agent.
    Recv {
        /// Control address to listen on, e.g. 0.0.0.0:5001.
        #[arg(long)]
        listen: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepWhat {
    Strategies,
    Te,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// What to sweep.
    #[arg(value_enum)]
    what: SweepWhat,
    /// Base topology file; omitted means synthetic topologies.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Paths per replicate topology (comma-separated list for strategies).
    #[arg(long, default_value = "20")]
    m: String,
    /// Replicate topologies per cell.
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Strategies to compare (comma separated).
    #[arg(long, default_value = "rr-strict,seq,we,wci")]
    strategies: String,
    /// TE values to sweep (comma separated).
    #[arg(long, default_value = "0,0.05,0.15,0.25,0.5,0.75,0.9")]
    te: String,
    /// Row-flip probability: a number, or "auto" for matrix density.
    #[arg(long, default_value = "auto")]
    q_flip: String,
    /// Nodes in each synthetic topology.
    #[arg(long, default_value_t = 40)]
    nodes: usize,
    /// Probing endpoints in each synthetic topology.
    #[arg(long, default_value_t = 14)]
    endpoints_count: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SweepArgs {
    fn m_list(&self) -> Vec<usize> {
        self.m
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect()
    }
}

/// Process exit classes; distinct codes so scripts can tell config errors,
/// prober failures and strict-mode non-convergence apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExitKind {
    Success,
    ConfigError,
    ProberFailure,
    NotConverged,
}

impl ExitKind {
    fn code(self) -> ExitCode {
        match self {
            ExitKind::Success => ExitCode::SUCCESS,
            ExitKind::ConfigError => ExitCode::from(2),
            ExitKind::ProberFailure => ExitCode::from(3),
            ExitKind::NotConverged => ExitCode::from(4),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(kind) => kind.code(),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitKind::ConfigError.code()
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitKind> {
    let out = commands::default_out_dir(&cli.out);
    match cli.command {
        Command::Estimate {
            opts,
            strict,
            dump_graph,
        } => {
            let resolved = config::resolve(opts, cli.config.as_deref())?;
            commands::run_estimate(&resolved, &out, strict, dump_graph)
        }
        Command::Validate {
            mut opts,
            results,
            reps,
        } => {
            // Validation trains default to one long train per probe.
            opts.ls = opts.ls.or(Some(2400));
            opts.nt = opts.nt.or(Some(1));
            let resolved = config::resolve(opts, cli.config.as_deref())?;
            commands::run_validate(&resolved, &results, reps, &out)
        }
        Command::Sweep { args } => {
            if args.m_list().is_empty() {
                anyhow::bail!("--m must list at least one path count");
            }
            commands::run_sweep(&args, &out)
        }
        Command::FitLikelihood {
            samples,
            kappa,
            gamma,
        } => commands::run_fit(&samples, kappa, gamma, &out),
        Command::Recv { listen } => commands::run_recv(&listen),
    }
}
