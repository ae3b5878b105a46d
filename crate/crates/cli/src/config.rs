//! Option resolution: command-line flags override config-file values, which
//! override the built-in defaults. The fully resolved configuration is
//! echoed into the run manifest and written back out as a TOML file so a run
//! can be repeated from its own output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use pab_core::belief::RateGrid;
use pab_core::estimator::EstimatorConfig;
use pab_core::graph::BpSchedule;
use pab_core::likelihood::LikelihoodModel;
use pab_core::probing::{GroundTruth, ProbeConfig, SimulatedProber, UdpProber};
use pab_core::sampling::{StrategyConfig, StrategyKind};
use pab_core::seed;
use pab_core::topology::Topology;
use serde::{Deserialize, Serialize};

/// Estimation options; every field mirrors a config-file key of the same
/// name. Flags win over the file, the file wins over defaults.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateOpts {
    /// Topology file.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Path-selection strategy: rr, rr-strict, seq, we or wci.
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Master seed for all random streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Required success probability at rates up to the PAB.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Credible level of the reported intervals.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Target interval width in Mbps (stopping threshold).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Success margin between input and output rate, Mbps.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Likelihood decay constant.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Likelihood clamp floor.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Smallest rate on the grid, Mbps.
    #[arg(long)]
    pub b_min: Option<f64>,
    /// Largest rate on the grid, Mbps.
    #[arg(long)]
    pub b_max: Option<f64>,
    /// Grid step, Mbps.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Iteration cap for the whole run.
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Trains per measurement.
    #[arg(long)]
    pub nt: Option<u32>,
    /// Packets per train.
    #[arg(long)]
    pub ls: Option<u32>,
    /// Bytes per probe packet.
    #[arg(long)]
    pub psize: Option<u32>,
    /// Message cap per edge in one belief-propagation run.
    #[arg(long)]
    pub bp_messages: Option<usize>,
    /// Damping coefficient for cyclic graphs (0 disables).
    #[arg(long)]
    pub damping: Option<f64>,
    /// Use the simulated prober instead of packet trains.
    #[arg(long)]
    #[serde(default)]
    pub simulated: bool,
    /// Ground-truth link PABs (JSON map link -> Mbps) for simulated runs.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Draw ground-truth link PABs uniformly from "lo,hi" (simulated runs).
    #[arg(long)]
    pub gt_uniform: Option<String>,
    /// Receiver control endpoints (JSON map path -> "host:port") for real runs.
    #[arg(long)]
    pub endpoints: Option<PathBuf>,
}

impl EstimateOpts {
    /// Overlays `self` (flags) on top of `file` values.
    fn merged_over(mut self, file: EstimateOpts) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(self.$field = self.$field.or(file.$field);)*
            };
        }
        take!(
            topology, strategy, seed, gamma, eta, beta, epsilon, alpha, kappa, b_min, b_max,
            grid_step, max_iterations, nt, ls, psize, bp_messages, damping, ground_truth,
            gt_uniform, endpoints
        );
        self.simulated = self.simulated || file.simulated;
        self
    }
}

/// Fully resolved estimation configuration; serializes to the TOML schema
/// accepted by `--config`.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedEstimate {
    pub topology: PathBuf,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub grid_step: f64,
    pub max_iterations: u64,
    pub nt: u32,
    pub ls: u32,
    pub psize: u32,
    pub bp_messages: usize,
    pub damping: f64,
    pub simulated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_uniform: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<PathBuf>,
}

pub fn load_file_opts(config: Option<&Path>) -> Result<EstimateOpts> {
    let Some(path) = config else {
        return Ok(EstimateOpts::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

pub fn resolve(flags: EstimateOpts, config: Option<&Path>) -> Result<ResolvedEstimate> {
    let merged = flags.merged_over(load_file_opts(config)?);
    let Some(topology) = merged.topology else {
        bail!("no topology given: pass --topology or set it in the config file");
    };
    Ok(ResolvedEstimate {
        topology,
        strategy: merged.strategy.unwrap_or(StrategyKind::Wci),
        seed: merged.seed.unwrap_or(0),
        gamma: merged.gamma.unwrap_or(0.5),
        eta: merged.eta.unwrap_or(0.95),
        beta: merged.beta.unwrap_or(10.0),
        epsilon: merged.epsilon.unwrap_or(5.0),
        alpha: merged.alpha.unwrap_or(0.28),
        kappa: merged.kappa.unwrap_or(0.02),
        b_min: merged.b_min.unwrap_or(1.0),
        b_max: merged.b_max.unwrap_or(100.0),
        grid_step: merged.grid_step.unwrap_or(1.0),
        max_iterations: merged.max_iterations.unwrap_or(10_000),
        nt: merged.nt.unwrap_or(3),
        ls: merged.ls.unwrap_or(25),
        psize: merged.psize.unwrap_or(1000),
        bp_messages: merged.bp_messages.unwrap_or(5),
        damping: merged.damping.unwrap_or(0.0),
        simulated: merged.simulated,
        ground_truth: merged.ground_truth,
        gt_uniform: merged.gt_uniform,
        endpoints: merged.endpoints,
    })
}

impl ResolvedEstimate {
    pub fn grid(&self) -> Result<RateGrid> {
        RateGrid::new(self.b_min, self.b_max, self.grid_step).map_err(Into::into)
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let grid = self.grid()?;
        let likelihood = LikelihoodModel::new(self.alpha, self.kappa, self.gamma)?;
        let cfg = EstimatorConfig {
            epsilon: self.epsilon,
            gamma: self.gamma,
            eta: self.eta,
            beta: self.beta,
            grid,
            max_iterations: self.max_iterations,
            strategy: StrategyConfig {
                kind: self.strategy,
                seed: seed::derive(self.seed, "strategy", 0),
                beta: self.beta,
                eta: self.eta,
            },
            probe: ProbeConfig {
                n_trains: self.nt,
                train_length: self.ls,
                packet_size: self.psize,
                epsilon: self.epsilon,
                ..ProbeConfig::default()
            },
            likelihood,
            bp: BpSchedule {
                max_messages_per_edge: self.bp_messages,
                damping: self.damping,
                ..BpSchedule::default()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_topology(&self) -> Result<Topology> {
        Topology::load(&self.topology)
            .with_context(|| format!("loading topology {}", self.topology.display()))
    }

    /// Builds the prober: simulated (requires a ground-truth source) or a
    /// packet-train prober (requires the endpoints map).
    pub fn prober(&self, topology: &Topology) -> Result<Box<dyn pab_core::Prober>> {
        let cfg = self.estimator_config()?;
        if self.simulated {
            let gt = self.ground_truth(topology)?;
            Ok(Box::new(SimulatedProber::new(
                gt,
                cfg.likelihood,
                cfg.probe,
                seed::derive(self.seed, "prober", 0),
            )))
        } else {
            let Some(path) = &self.endpoints else {
                bail!("real probing needs --endpoints (JSON map path -> host:port); or pass --simulated");
            };
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading endpoints {}", path.display()))?;
            let endpoints: BTreeMap<String, String> =
                serde_json::from_str(&text).context("parsing endpoints map")?;
            Ok(Box::new(UdpProber::new(endpoints, cfg.probe)?))
        }
    }

    pub fn ground_truth(&self, topology: &Topology) -> Result<GroundTruth> {
        if let Some(path) = &self.ground_truth {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading ground truth {}", path.display()))?;
            let map: BTreeMap<String, f64> =
                serde_json::from_str(&text).context("parsing ground-truth map")?;
            return GroundTruth::from_link_pabs(topology, map).map_err(Into::into);
        }
        if let Some(range) = &self.gt_uniform {
            let (lo, hi) = range
                .split_once(',')
                .context("--gt-uniform expects 'lo,hi'")?;
            let lo: f64 = lo.trim().parse().context("--gt-uniform lo")?;
            let hi: f64 = hi.trim().parse().context("--gt-uniform hi")?;
            return GroundTruth::generate_uniform(
                topology,
                lo,
                hi,
                self.grid_step,
                seed::derive(self.seed, "gt", 0),
            )
            .map_err(Into::into);
        }
        bail!("simulated runs need --ground-truth <file> or --gt-uniform lo,hi");
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }
}
