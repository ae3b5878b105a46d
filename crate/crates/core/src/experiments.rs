//! Seeded simulation sweeps.
//!
//! Reproduces the two desk-scale studies: strategy comparisons (how many
//! measurements each path-selection strategy needs, and how often the true
//! PAB lands inside the reported interval) and topology-error robustness
//! (estimation against a corrupted path matrix while outcomes come from the
//! true topology). Topologies are sampled from a base topology file or from
//! a hierarchical random-tree generator; link PABs are drawn uniformly.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::estimator::{estimate, EstimateError, EstimationResult, EstimatorConfig};
use crate::probing::{GroundTruth, ProbeError, SimulatedProber};
use crate::sampling::StrategyKind;
use crate::seed;
use crate::topology::{PathMeta, PerturbationConfig, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("topology generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Hierarchical random-tree topology generator. Endpoints sit on leaves and
/// paths are the unique tree routes between endpoint pairs, so paths share
/// core links the way routes through a hierarchical network do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticTopologySpec {
    pub n_nodes: usize,
    pub n_endpoints: usize,
    /// Probability that a new node attaches near the root rather than to a
    /// uniformly random earlier node; higher values give bushier cores.
    pub hub_bias: f64,
    /// Extra non-tree edges to add (introduces routing diversity).
    pub extra_edges: usize,
    /// Paths shorter than this many links are discarded.
    pub min_path_links: usize,
    pub m_paths: usize,
}

impl Default for SyntheticTopologySpec {
    fn default() -> Self {
        Self {
            n_nodes: 40,
            n_endpoints: 14,
            hub_bias: 0.5,
            extra_edges: 0,
            min_path_links: 3,
            m_paths: 20,
        }
    }
}

/// Generates a topology; retries internally with derived seeds when a draw
/// yields too few leaves or too few distinct paths.
pub fn generate_topology(
    spec: &SyntheticTopologySpec,
    seed_value: u64,
) -> Result<Topology, ExperimentError> {
    if spec.n_nodes < 4 || spec.n_endpoints < 2 || spec.m_paths == 0 {
        return Err(ExperimentError::Generation(format!("bad spec {spec:?}")));
    }
    for attempt in 0..64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "topo-gen", attempt));
        if let Some(t) = try_generate(spec, &mut rng) {
            return Ok(t);
        }
    }
    Err(ExperimentError::Generation(format!(
        "no draw produced {} paths of >= {} links",
        spec.m_paths, spec.min_path_links
    )))
}

fn try_generate(spec: &SyntheticTopologySpec, rng: &mut ChaCha8Rng) -> Option<Topology> {
    let n = spec.n_nodes;
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n - 1 + spec.extra_edges);
    for v in 1..n {
        let u = if rng.random::<f64>() < spec.hub_bias {
            rng.random_range(0..(v / 2).max(1))
        } else {
            rng.random_range(0..v)
        };
        edges.push((u.min(v), u.max(v)));
    }
    edges.sort_unstable();
    edges.dedup();
    let mut added = 0;
    let mut guard = 0;
    while added < spec.extra_edges && guard < 10 * spec.extra_edges + 10 {
        guard += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && !edges.contains(&e) {
            edges.push(e);
            added += 1;
        }
    }
    edges.sort_unstable();

    let mut adjacency = vec![Vec::new(); n];
    for (idx, &(a, b)) in edges.iter().enumerate() {
        adjacency[a].push((b, idx));
        adjacency[b].push((a, idx));
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }

    let mut leaves: Vec<usize> = (0..n).filter(|&v| adjacency[v].len() == 1).collect();
    if leaves.len() < spec.n_endpoints {
        return None;
    }
    leaves.shuffle(rng);
    let endpoints = &leaves[..spec.n_endpoints];

    // Unique routes between endpoint pairs via BFS parents.
    let mut routes: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for &s in endpoints {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut visited = vec![false; n];
        visited[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &(v, e) in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some((u, e));
                    queue.push_back(v);
                }
            }
        }
        for &t in endpoints {
            if t == s || !visited[t] {
                continue;
            }
            let mut links = Vec::new();
            let mut node = t;
            while let Some((up, e)) = parent[node] {
                links.push(e);
                node = up;
            }
            if links.len() < spec.min_path_links {
                continue;
            }
            links.sort_unstable();
            if seen.insert(links.clone()) {
                routes.push((s, t, links));
            }
        }
    }
    if routes.len() < spec.m_paths {
        return None;
    }

    let mut order: Vec<usize> = (0..routes.len()).collect();
    order.shuffle(rng);
    order.truncate(spec.m_paths);

    let links: Vec<String> = edges
        .iter()
        .map(|&(a, b)| format!("l{a}_{b}"))
        .collect();
    let mut paths = Vec::with_capacity(spec.m_paths);
    let mut matrix = Vec::with_capacity(spec.m_paths);
    for (i, &r) in order.iter().enumerate() {
        let (s, t, ref route) = routes[r];
        paths.push(PathMeta {
            id: format!("p{}", i + 1),
            src: format!("n{s}"),
            dst: format!("n{t}"),
        });
        let mut row = vec![false; links.len()];
        for &e in route {
            row[e] = true;
        }
        matrix.push(row);
    }
    Topology::new(links, paths, matrix).ok()
}

/// Where sweep replicates get their topologies from.
#[derive(Debug, Clone)]
pub enum TopologySource {
    /// Sample `m_paths` rows from a base topology per replicate.
    Base {
        topology: Topology,
        m_paths: usize,
    },
    /// Generate a synthetic topology per replicate.
    Synthetic(SyntheticTopologySpec),
}

impl TopologySource {
    fn realize(&self, seed_value: u64) -> Result<Topology, ExperimentError> {
        match self {
            TopologySource::Synthetic(spec) => generate_topology(spec, seed_value),
            TopologySource::Base { topology, m_paths } => {
                if *m_paths > topology.n_paths() {
                    return Err(ExperimentError::Generation(format!(
                        "base topology has {} paths, requested {m_paths}",
                        topology.n_paths()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
                let mut order: Vec<usize> = (0..topology.n_paths()).collect();
                order.shuffle(&mut rng);
                order.truncate(*m_paths);
                order.sort_unstable();
                let paths = order
                    .iter()
                    .map(|&i| topology.paths()[i].clone())
                    .collect();
                let matrix = order
                    .iter()
                    .map(|&i| topology.matrix()[i].clone())
                    .collect();
                Ok(Topology::new(topology.links().to_vec(), paths, matrix)?)
            }
        }
    }
}

/// One sweep: replicated topologies, a strategy list, a TE list, and the
/// estimator template the runs share.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub source: TopologySource,
    pub replicates: usize,
    pub strategies: Vec<StrategyKind>,
    pub te_values: Vec<f64>,
    /// Flip probability for corrupted rows; `None` uses the
    /// density-preserving helper with correction 1.
    pub q_flip: Option<f64>,
    /// Ground-truth link PAB range.
    pub gt_range: (f64, f64),
    pub seed: u64,
    pub config: EstimatorConfig,
}

impl SweepSpec {
    pub fn new(source: TopologySource, seed_value: u64) -> Self {
        Self {
            source,
            replicates: 20,
            strategies: vec![StrategyKind::Wci],
            te_values: vec![0.0],
            q_flip: None,
            gt_range: (1.0, 100.0),
            seed: seed_value,
            config: EstimatorConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.replicates == 0 {
            return Err(ExperimentError::Generation("replicates must be >= 1".into()));
        }
        if self.te_values.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(ExperimentError::Generation(
                "te values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn ground_truth(&self, t: &Topology, replicate: usize) -> Result<GroundTruth, ProbeError> {
        GroundTruth::generate_uniform(
            t,
            self.gt_range.0,
            self.gt_range.1,
            self.config.grid.step(),
            seed::derive(self.seed, "gt", replicate as u64),
        )
    }
}

/// Fraction of paths whose true PAB lies inside the reported interval.
pub fn accuracy(result: &EstimationResult, gt: &GroundTruth) -> f64 {
    if result.paths.is_empty() {
        return 1.0;
    }
    let hits = result
        .paths
        .iter()
        .filter(|p| {
            gt.path_pab(&p.path)
                .is_some_and(|y| p.interval.lower <= y && y <= p.interval.upper)
        })
        .count();
    hits as f64 / result.paths.len() as f64
}

/// Tight-link structure of a topology under a ground truth: the fraction of
/// paths whose tight link is tight for at least one other path, and the
/// number of distinct tight links divided by the path count.
pub fn tight_link_stats(t: &Topology, gt: &GroundTruth) -> (f64, f64) {
    let m = t.n_paths();
    if m == 0 {
        return (0.0, 0.0);
    }
    let tight: Vec<usize> = (0..m)
        .map(|i| {
            t.path_links(i)
                .min_by(|&a, &b| {
                    let va = gt.link_pabs()[&t.links()[a]];
                    let vb = gt.link_pabs()[&t.links()[b]];
                    va.total_cmp(&vb).then(a.cmp(&b))
                })
                .expect("paths are non-empty")
        })
        .collect();
    let mut counts = std::collections::BTreeMap::new();
    for &l in &tight {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let shared = tight.iter().filter(|l| counts[l] > 1).count();
    (shared as f64 / m as f64, counts.len() as f64 / m as f64)
}

/// One (replicate, strategy) cell of the strategy sweep.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub replicate: usize,
    pub n_paths: usize,
    pub measurements_per_path: f64,
    pub bytes_per_path: f64,
    pub accuracy: f64,
    pub shared_tight_fraction: f64,
    pub tight_links_per_path: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySweep {
    pub rows: Vec<StrategyRow>,
}

impl StrategySweep {
    pub fn mean_measurements(&self, strategy: StrategyKind) -> f64 {
        mean(self.filtered(strategy).map(|r| r.measurements_per_path))
    }

    pub fn mean_accuracy(&self, strategy: StrategyKind) -> f64 {
        mean(self.filtered(strategy).map(|r| r.accuracy))
    }

    fn filtered(&self, strategy: StrategyKind) -> impl Iterator<Item = &StrategyRow> {
        let name = strategy.to_string();
        self.rows.iter().filter(move |r| r.strategy == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("flushes")).expect("utf8")
    }
}

/// Runs every strategy on every replicate topology with a simulated prober
/// and scores accuracy against the ground truth.
pub fn run_strategy_sweep(spec: &SweepSpec) -> Result<StrategySweep, ExperimentError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for replicate in 0..spec.replicates {
        let topology = spec
            .source
            .realize(seed::derive(spec.seed, "topology", replicate as u64))?;
        let gt = spec.ground_truth(&topology, replicate)?;
        let (shared, tight_per_path) = tight_link_stats(&topology, &gt);
        for (si, &strategy) in spec.strategies.iter().enumerate() {
            let run_tag = (replicate * spec.strategies.len() + si) as u64;
            let mut cfg = spec.config;
            cfg.strategy.kind = strategy;
            cfg.strategy.seed = seed::derive(spec.seed, "strategy", run_tag);
            let mut prober = SimulatedProber::new(
                gt.clone(),
                cfg.likelihood,
                cfg.probe,
                seed::derive(spec.seed, "prober", run_tag),
            );
            let result = estimate(&topology, &cfg, &mut prober)?;
            let m = topology.n_paths() as f64;
            rows.push(StrategyRow {
                strategy: strategy.to_string(),
                replicate,
                n_paths: topology.n_paths(),
                measurements_per_path: result.iterations as f64 / m,
                bytes_per_path: result.measurements.iter().map(|x| x.bytes_sent).sum::<u64>()
                    as f64
                    / m,
                accuracy: accuracy(&result, &gt),
                shared_tight_fraction: shared,
                tight_links_per_path: tight_per_path,
                converged: result.converged,
            });
        }
    }
    Ok(StrategySweep { rows })
}

/// One (replicate, te) cell of the topology-error sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TeRow {
    pub te: f64,
    pub replicate: usize,
    pub n_paths: usize,
    pub q_flip: f64,
    pub measurements_per_path: f64,
    pub accuracy: f64,
    pub jaccard: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TeSweep {
    pub rows: Vec<TeRow>,
}

impl TeSweep {
    pub fn mean_measurements(&self, te: f64) -> f64 {
        mean(self.filtered(te).map(|r| r.measurements_per_path))
    }

    pub fn mean_accuracy(&self, te: f64) -> f64 {
        mean(self.filtered(te).map(|r| r.accuracy))
    }

    pub fn mean_jaccard(&self, te: f64) -> f64 {
        mean(self.filtered(te).map(|r| r.jaccard))
    }

    fn filtered(&self, te: f64) -> impl Iterator<Item = &TeRow> {
        self.rows.iter().filter(move |r| r.te == te)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("flushes")).expect("utf8")
    }
}

/// For each TE value, estimates against the perturbed matrix while outcomes
/// are generated from the true topology's ground truth.
pub fn run_te_sweep(spec: &SweepSpec) -> Result<TeSweep, ExperimentError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for replicate in 0..spec.replicates {
        let truth = spec
            .source
            .realize(seed::derive(spec.seed, "topology", replicate as u64))?;
        let gt = spec.ground_truth(&truth, replicate)?;
        let q_flip = spec
            .q_flip
            .unwrap_or_else(|| truth.density_preserving_q_flip(1.0));
        for (ti, &te) in spec.te_values.iter().enumerate() {
            let run_tag = (replicate * spec.te_values.len() + ti) as u64;
            let perturbed = truth.perturb(&PerturbationConfig::new(
                te,
                q_flip,
                seed::derive(spec.seed, "perturb", run_tag),
            )?);
            let jaccard = truth.jaccard_similarity(&perturbed)?;
            let mut cfg = spec.config;
            cfg.strategy.seed = seed::derive(spec.seed, "strategy", run_tag);
            let mut prober = SimulatedProber::new(
                gt.clone(),
                cfg.likelihood,
                cfg.probe,
                seed::derive(spec.seed, "prober", run_tag),
            );
            let result = estimate(&perturbed, &cfg, &mut prober)?;
            rows.push(TeRow {
                te,
                replicate,
                n_paths: truth.n_paths(),
                q_flip,
                measurements_per_path: result.iterations as f64 / truth.n_paths() as f64,
                accuracy: accuracy(&result, &gt),
                jaccard,
                converged: result.converged,
            });
        }
    }
    Ok(TeSweep { rows })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
