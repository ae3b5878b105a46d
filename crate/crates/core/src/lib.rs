//! Network-wide probabilistic available bandwidth (PAB) estimation.
//!
//! The PAB of a path is the largest input rate at which traffic can be sent
//! while the output rate stays within `epsilon` of the input with probability
//! at least `gamma`. This crate estimates the PAB of every path in a network
//! simultaneously: paths are probed with UDP packet trains (or a simulated
//! prober), each probe yields a binary outcome, and a factor graph over link
//! and path PABs fuses outcomes across paths that share links. Belief
//! propagation produces per-path posteriors, and an active sampler picks the
//! next (path, rate) to probe until every path's credible interval is tight.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`topology`] — path/link incidence matrices, logical reduction, error models
//! * [`belief`] — discrete distributions over a rate grid and their queries
//! * [`likelihood`] — the clamped-sigmoid outcome model and its regression fit
//! * [`graph`] — factor-graph construction and sum-product message passing
//! * [`sampling`] — path-selection strategies and posterior-median rate choice
//! * [`probing`] — simulated and UDP packet-train probers
//! * [`estimator`] — the estimation loop and result validation
//! * [`experiments`] — seeded simulation sweeps and synthetic topologies

pub mod belief;
pub mod estimator;
pub mod experiments;
pub mod graph;
pub mod likelihood;
pub mod probing;
pub mod sampling;
pub mod seed;
pub mod topology;

pub use belief::{CredibleInterval, Pmf, RateGrid};
pub use estimator::{EstimationResult, EstimatorConfig, PathResult};
pub use graph::{BpSchedule, FactorGraph};
pub use likelihood::LikelihoodModel;
pub use probing::{GroundTruth, Measurement, ProbeConfig, Prober, SimulatedProber};
pub use sampling::{StrategyConfig, StrategyKind};
pub use topology::{PerturbationConfig, Topology};
