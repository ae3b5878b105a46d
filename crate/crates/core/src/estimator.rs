//! The estimation loop.
//!
//! Build the factor graph once, then iterate: pick a path, probe it at the
//! posterior median, attach the outcome as a likelihood factor, re-run
//! belief propagation and refresh every path's credible interval. The loop
//! ends when every interval is no wider than `beta` at level `eta`, or when
//! the iteration cap is reached. Intervals are recomputed from the current
//! marginals every iteration, so a path that was satisfied can re-enter the
//! candidate pool if later cross-path evidence widens it again.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, CredibleInterval, Pmf, RateGrid};
use crate::graph::{BpSchedule, FactorGraph, GraphError};
use crate::likelihood::{LikelihoodError, LikelihoodModel};
use crate::probing::{Measurement, ProbeConfig, ProbeError, Prober};
use crate::sampling::{select_rate, PathSelector, PathState, StrategyConfig, StrategyKind};
use crate::topology::{Topology, TopologyError};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Everything one estimation run needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorConfig {
    /// Success margin (Mbps) between input and output rate.
    pub epsilon: f64,
    /// Required success probability at rates up to the PAB.
    pub gamma: f64,
    /// Credible level for reported intervals.
    pub eta: f64,
    /// Target interval width (Mbps); global stopping threshold.
    pub beta: f64,
    pub grid: RateGrid,
    pub max_iterations: u64,
    pub strategy: StrategyConfig,
    pub probe: ProbeConfig,
    pub likelihood: LikelihoodModel,
    pub bp: BpSchedule,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let grid = RateGrid::new(1.0, 100.0, 1.0).expect("default grid is valid");
        Self {
            epsilon: 5.0,
            gamma: 0.5,
            eta: 0.95,
            beta: 10.0,
            grid,
            max_iterations: 10_000,
            strategy: StrategyConfig {
                kind: StrategyKind::Wci,
                seed: 0,
                beta: 10.0,
                eta: 0.95,
            },
            probe: ProbeConfig::default(),
            likelihood: LikelihoodModel::new(0.28, 0.02, 0.5).expect("default model is valid"),
            bp: BpSchedule::default(),
        }
    }
}

impl EstimatorConfig {
    /// Default configuration with the given strategy and seed.
    pub fn with_strategy(kind: StrategyKind, seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.strategy.kind = kind;
        cfg.strategy.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EstimateError::InvalidConfig(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(EstimateError::InvalidConfig(format!(
                "eta {} outside (0, 1)",
                self.eta
            )));
        }
        if !(self.beta > 0.0) {
            return Err(EstimateError::InvalidConfig("beta must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(EstimateError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.strategy.beta != self.beta || self.strategy.eta != self.eta {
            return Err(EstimateError::InvalidConfig(
                "strategy thresholds disagree with beta/eta".into(),
            ));
        }
        if self.likelihood.gamma() != self.gamma {
            return Err(EstimateError::InvalidConfig(
                "likelihood model gamma disagrees with gamma".into(),
            ));
        }
        self.probe.validate().map_err(EstimateError::Probe)?;
        Ok(())
    }
}

/// Final state of one path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub path: String,
    pub interval: CredibleInterval,
    pub marginal: Pmf,
    pub measurements: u64,
    pub bytes: u64,
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub paths: Vec<PathResult>,
    pub iterations: u64,
    pub converged: bool,
    /// Populated when the prober failed after retries and the run stopped
    /// early with partial results.
    pub aborted: Option<String>,
    pub measurements: Vec<Measurement>,
    /// Not serialized: wall time belongs in the run manifest, and results
    /// files must be identical across reruns with the same seed.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl EstimationResult {
    /// Deterministic JSON rendering of the results.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    /// `path_id,beta_min,beta_max,measurements,bytes` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("path_id,beta_min,beta_max,measurements,bytes\n");
        for p in &self.paths {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.path, p.interval.lower, p.interval.upper, p.measurements, p.bytes
            ));
        }
        out
    }
}

/// Runs the estimation loop over `topology` with the given prober.
pub fn estimate(
    topology: &Topology,
    cfg: &EstimatorConfig,
    prober: &mut dyn Prober,
) -> Result<EstimationResult, EstimateError> {
    estimate_with_graph(topology, cfg, prober).map(|(result, _)| result)
}

/// As [`estimate`], additionally handing back the final factor graph (for
/// structure dumps and per-variable marginal export).
pub fn estimate_with_graph(
    topology: &Topology,
    cfg: &EstimatorConfig,
    prober: &mut dyn Prober,
) -> Result<(EstimationResult, Option<FactorGraph>), EstimateError> {
    cfg.validate()?;
    let started = Instant::now();
    let n_paths = topology.n_paths();
    if n_paths == 0 {
        return Ok((
            EstimationResult {
                paths: Vec::new(),
                iterations: 0,
                converged: true,
                aborted: None,
                measurements: Vec::new(),
                wall_time: started.elapsed(),
            },
            None,
        ));
    }
    if cfg.max_iterations < n_paths as u64 {
        return Err(EstimateError::InvalidConfig(format!(
            "max_iterations {} is below the number of paths {n_paths}",
            cfg.max_iterations
        )));
    }

    // SEQ estimates each path from its own observations only; giving every
    // path private link variables removes cross-path message flow.
    let logical = topology.reduce_to_logical();
    let logical = if cfg.strategy.kind == StrategyKind::Seq {
        logical.isolate_paths()
    } else {
        logical
    };

    let mut graph = FactorGraph::build(&logical, cfg.grid)?;
    graph.run_bp(&cfg.bp);

    let mut selector = PathSelector::new(cfg.strategy);
    let mut counts = vec![0u64; n_paths];
    let mut bytes = vec![0u64; n_paths];
    let mut measurements = Vec::new();
    let mut iterations = 0u64;
    let mut aborted = None;

    let path_states = |graph: &FactorGraph, counts: &[u64]| -> Vec<PathState> {
        (0..n_paths)
            .map(|p| {
                PathState::from_marginal(
                    logical.paths()[p].id.clone(),
                    graph.path_marginal_at(p),
                    &cfg.strategy,
                    counts[p],
                )
            })
            .collect()
    };

    let mut states = path_states(&graph, &counts);
    while iterations < cfg.max_iterations {
        let Some(p) = selector.select_path(&states) else {
            break;
        };
        let rate = select_rate(&states[p].marginal);
        let path_id = &topology.paths()[p].id;
        let measurement = match prober.measure(path_id, rate) {
            Ok(m) => m,
            Err(first) => match prober.measure(path_id, rate) {
                Ok(m) => m,
                Err(second) => {
                    aborted = Some(format!(
                        "prober failed twice on {path_id} at {rate} Mbps: {first}; then: {second}"
                    ));
                    break;
                }
            },
        };
        graph.add_observation_at(p, rate, measurement.z, &cfg.likelihood);
        graph.run_bp(&cfg.bp);
        counts[p] += 1;
        bytes[p] += measurement.bytes_sent;
        measurements.push(measurement);
        iterations += 1;
        states = path_states(&graph, &counts);
    }

    let converged = aborted.is_none() && states.iter().all(|s| s.satisfied);
    let paths = states
        .into_iter()
        .enumerate()
        .map(|(p, s)| PathResult {
            path: s.path,
            interval: s.interval,
            marginal: s.marginal,
            measurements: counts[p],
            bytes: bytes[p],
        })
        .collect();

    Ok((
        EstimationResult {
            paths,
            iterations,
            converged,
            aborted,
            measurements,
            wall_time: started.elapsed(),
        },
        Some(graph),
    ))
}

/// How to exercise the estimates after a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationConfig {
    /// How many link-disjoint paths to test.
    pub paths: usize,
    /// Probes per (path, rate) pair.
    pub repetitions: u64,
    /// Offset added to the interval bounds for the upper test rates.
    pub epsilon: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            paths: 4,
            repetitions: 20,
            epsilon: 5.0,
        }
    }
}

/// One validation cell: empirical success frequency at a test rate.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationTest {
    pub path: String,
    pub rate: f64,
    pub trials: u64,
    pub successes: u64,
    pub frequency: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ValidationReport {
    pub tests: Vec<ValidationTest>,
    /// Prober failures, recorded but not fatal.
    pub failures: Vec<String>,
}

/// Probes up to `cfg.paths` link-disjoint paths at the four rates derived
/// from each path's interval: lower bound, lower + epsilon, upper bound,
/// upper + epsilon (deduplicated when the interval is degenerate).
pub fn validate(
    topology: &Topology,
    result: &EstimationResult,
    prober: &mut dyn Prober,
    cfg: &ValidationConfig,
) -> ValidationReport {
    let logical = topology.reduce_to_logical();
    let mut used = vec![false; logical.n_links()];
    let mut chosen = Vec::new();
    for (i, path) in result.paths.iter().enumerate() {
        if chosen.len() >= cfg.paths {
            break;
        }
        let Some(row) = logical.path_index(&path.path) else {
            continue;
        };
        if row != i && logical.paths()[row].id != path.path {
            continue;
        }
        let links: Vec<usize> = logical.path_links(row).collect();
        if links.iter().any(|&l| used[l]) {
            continue;
        }
        for &l in &links {
            used[l] = true;
        }
        chosen.push(i);
    }

    let mut report = ValidationReport::default();
    for &i in &chosen {
        let path = &result.paths[i];
        let mut rates = vec![
            path.interval.lower,
            path.interval.lower + cfg.epsilon,
            path.interval.upper,
            path.interval.upper + cfg.epsilon,
        ];
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        for rate in rates {
            let mut successes = 0u64;
            let mut trials = 0u64;
            for _ in 0..cfg.repetitions {
                match prober.measure(&path.path, rate) {
                    Ok(m) => {
                        trials += 1;
                        successes += m.z as u64;
                    }
                    Err(e) => report
                        .failures
                        .push(format!("{} at {rate} Mbps: {e}", path.path)),
                }
            }
            report.tests.push(ValidationTest {
                path: path.path.clone(),
                rate,
                trials,
                successes,
                frequency: if trials > 0 {
                    successes as f64 / trials as f64
                } else {
                    f64::NAN
                },
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probing::{GroundTruth, SimulatedProber};
    use crate::topology::PathMeta;

    fn single_path_topology() -> Topology {
        Topology::new(
            vec!["l1".into()],
            vec![PathMeta {
                id: "p1".into(),
                src: "a".into(),
                dst: "b".into(),
            }],
            vec![vec![true]],
        )
        .unwrap()
    }

    fn uniform_gt(t: &Topology, value: f64) -> GroundTruth {
        GroundTruth::from_link_pabs(t, t.links().iter().map(|l| (l.clone(), value)).collect())
            .unwrap()
    }

    fn sim_prober(t: &Topology, value: f64, seed: u64) -> SimulatedProber {
        let cfg = EstimatorConfig::default();
        SimulatedProber::new(uniform_gt(t, value), cfg.likelihood, cfg.probe, seed)
    }

    #[test]
    fn zero_paths_returns_immediately() {
        let t = Topology::new(vec!["l1".into()], vec![], vec![]).unwrap();
        let cfg = EstimatorConfig::default();
        let mut prober = sim_prober(&single_path_topology(), 50.0, 0);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.paths.is_empty());
    }

    #[test]
    fn single_path_run_brackets_the_truth_in_most_seeds() {
        let t = single_path_topology();
        let mut hits = 0;
        let runs = 20;
        for seed in 0..runs {
            let mut cfg = EstimatorConfig::with_strategy(StrategyKind::Wci, seed);
            cfg.bp = BpSchedule::default();
            let mut prober = sim_prober(&t, 50.0, 1000 + seed);
            let r = estimate(&t, &cfg, &mut prober).unwrap();
            assert!(r.converged);
            let iv = r.paths[0].interval;
            assert!(iv.size <= 10.0);
            if iv.lower <= 50.0 && 50.0 <= iv.upper {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.9 * runs as f64, "{hits}/{runs} covered");
    }

    #[test]
    fn cap_is_respected_exactly() {
        let t = single_path_topology();
        let mut cfg = EstimatorConfig::default();
        cfg.max_iterations = 1; // equals the path count
        cfg.beta = 0.5; // unreachable in one measurement
        cfg.strategy.beta = 0.5;
        let mut prober = sim_prober(&t, 50.0, 3);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.measurements.len(), 1);
    }

    #[test]
    fn iteration_accounting_matches_measurements() {
        let t = single_path_topology();
        let cfg = EstimatorConfig::with_strategy(StrategyKind::Rr, 5);
        let mut prober = sim_prober(&t, 30.0, 9);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        assert_eq!(r.iterations, r.measurements.len() as u64);
        assert_eq!(
            r.paths.iter().map(|p| p.measurements).sum::<u64>(),
            r.iterations
        );
        let per_path_bytes: u64 = r.paths.iter().map(|p| p.bytes).sum();
        assert_eq!(per_path_bytes, 75_000 * r.iterations);
    }

    #[test]
    fn probed_rates_stay_on_grid() {
        let t = single_path_topology();
        let cfg = EstimatorConfig::default();
        let mut prober = sim_prober(&t, 42.0, 11);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        for m in &r.measurements {
            assert_eq!(m.rate.fract(), 0.0);
            assert!((1.0..=100.0).contains(&m.rate));
        }
    }

    #[test]
    fn identical_seeds_reproduce_results_bitwise() {
        let t = single_path_topology();
        let run = || {
            let cfg = EstimatorConfig::with_strategy(StrategyKind::Wci, 21);
            let mut prober = sim_prober(&t, 64.0, 77);
            estimate(&t, &cfg, &mut prober).unwrap().to_json()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn seq_probes_each_path_to_completion_in_order() {
        // shared link between the two paths; isolation keeps p1 satisfied
        // once done, so all of p1's measurements precede p2's
        let t = Topology::new(
            vec!["l1".into(), "l2".into(), "l3".into()],
            vec![
                PathMeta {
                    id: "p1".into(),
                    src: "a".into(),
                    dst: "c".into(),
                },
                PathMeta {
                    id: "p2".into(),
                    src: "b".into(),
                    dst: "c".into(),
                },
            ],
            vec![vec![true, true, false], vec![false, true, true]],
        )
        .unwrap();
        let cfg = EstimatorConfig::with_strategy(StrategyKind::Seq, 2);
        let mut prober = sim_prober(&t, 40.0, 6);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        assert!(r.converged);
        let first_p2 = r
            .measurements
            .iter()
            .position(|m| m.path == "p2")
            .expect("p2 was probed");
        assert!(
            r.measurements[..first_p2].iter().all(|m| m.path == "p1"),
            "p1 probed to completion before p2 starts"
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let t = single_path_topology();
        let mut cfg = EstimatorConfig::default();
        cfg.eta = 1.5;
        let mut prober = sim_prober(&t, 50.0, 0);
        assert!(estimate(&t, &cfg, &mut prober).is_err());

        let mut cfg = EstimatorConfig::default();
        cfg.strategy.beta = 99.0;
        assert!(matches!(
            cfg.validate(),
            Err(EstimateError::InvalidConfig(_))
        ));

        let mut cfg = EstimatorConfig::default();
        cfg.max_iterations = 0;
        assert!(estimate(&t, &cfg, &mut prober).is_err());
    }

    struct FailingProber {
        ok_for: u64,
        inner: SimulatedProber,
    }

    impl Prober for FailingProber {
        fn measure(&mut self, path: &str, rate: f64) -> Result<Measurement, ProbeError> {
            if self.ok_for == 0 {
                return Err(ProbeError::MeasurementFailed("link down".into()));
            }
            self.ok_for -= 1;
            self.inner.measure(path, rate)
        }
    }

    #[test]
    fn prober_failure_after_retry_flags_partial_results() {
        let t = single_path_topology();
        let cfg = EstimatorConfig::default();
        let mut prober = FailingProber {
            ok_for: 2,
            inner: sim_prober(&t, 50.0, 5),
        };
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        assert!(!r.converged);
        assert!(r.aborted.is_some());
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn validation_tests_four_rates_and_dedupes() {
        let t = single_path_topology();
        let cfg = EstimatorConfig::default();
        let mut prober = sim_prober(&t, 50.0, 1);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        let report = validate(&t, &r, &mut prober, &ValidationConfig::default());
        let rates: Vec<f64> = report
            .tests
            .iter()
            .map(|t| t.rate)
            .collect();
        assert!(rates.len() <= 4);
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
        for test in &report.tests {
            assert_eq!(test.trials, 20);
        }
    }

    #[test]
    fn validation_success_decreases_across_the_interval() {
        // Averaged over an ensemble, probing at the lower bound succeeds at
        // least as often as required and probing past the upper bound fails
        // more often than gamma.
        let t = single_path_topology();
        let mut low = Vec::new();
        let mut high = Vec::new();
        for seed in 0..10 {
            let cfg = EstimatorConfig::with_strategy(StrategyKind::Wci, seed);
            let mut prober = sim_prober(&t, 50.0, 300 + seed);
            let r = estimate(&t, &cfg, &mut prober).unwrap();
            let report = validate(&t, &r, &mut prober, &ValidationConfig::default());
            let first = report.tests.first().unwrap();
            let last = report.tests.last().unwrap();
            low.push(first.frequency);
            high.push(last.frequency);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&low) >= 0.5, "low-rate success {}", mean(&low));
        assert!(mean(&high) < 0.5, "high-rate success {}", mean(&high));
    }

    #[test]
    fn summary_csv_has_one_row_per_path() {
        let t = single_path_topology();
        let cfg = EstimatorConfig::default();
        let mut prober = sim_prober(&t, 50.0, 2);
        let r = estimate(&t, &cfg, &mut prober).unwrap();
        let csv = r.summary_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("path_id,"));
        assert!(csv.contains("p1,"));
    }
}
