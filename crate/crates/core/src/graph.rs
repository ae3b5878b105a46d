//! Factor graph over link and path PABs, with sum-product message passing.
//!
//! Variables are the link PABs `x` (one per logical link) and the path PABs
//! `y` (one per path), all on a shared rate grid. Three factor kinds connect
//! them: a uniform prior on every link, one min-relation factor per path
//! tying the path PAB to the minimum of its links' PABs, and one likelihood
//! leaf per measurement. Leaf factors (priors and likelihoods) send a fixed
//! vector once and ignore return messages, so the messages that actually
//! iterate are the ones between link variables and min-relation factors.
//!
//! Min-relation messages are computed analytically from survival functions
//! rather than by tabulating the (n+1)-variable indicator factor: for links
//! with survival mass `S_l(r) = Pr(x_l >= r)` the minimum has mass
//! `prod_l S_l(r) - prod_l S_l(r + step)`, and the reverse message follows
//! from conditioning on the target link's value. Both directions cost
//! `O(bins * links)` per factor.

use serde::Serialize;
use thiserror::Error;

use crate::belief::{Pmf, RateGrid, MASS_FLOOR};
use crate::likelihood::LikelihoodModel;
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("topology has no paths or no links")]
    EmptyTopology,
    #[error("unknown path '{0}'")]
    UnknownPath(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("messages live on different grids")]
    GridMismatch,
    #[error("message set is empty")]
    NoMessages,
    #[error("messages are contradictory (zero-mass result)")]
    Contradiction,
}

/// Stopping rules for one belief-propagation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpSchedule {
    /// Hard cap on flooding rounds.
    pub max_rounds: usize,
    /// Cap on messages sent per directed edge in one run; with a flooding
    /// schedule one round sends one message per edge.
    pub max_messages_per_edge: usize,
    /// Stop once no message entry moved by more than this between rounds.
    pub convergence_tol: f64,
    /// Fraction of the previous message blended into each update; zero (the
    /// default) disables damping.
    pub damping: f64,
}

impl Default for BpSchedule {
    fn default() -> Self {
        Self {
            max_rounds: 50,
            max_messages_per_edge: 5,
            convergence_tol: 1e-6,
            damping: 0.0,
        }
    }
}

/// Outcome of one belief-propagation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpReport {
    pub converged: bool,
    pub rounds: usize,
    pub max_residual: f64,
}

/// A variable node reference, for marginal queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var<'a> {
    Link(&'a str),
    Path(&'a str),
}

#[derive(Debug, Clone)]
struct MinFactor {
    path: usize,
    links: Vec<usize>,
}

/// One measurement attached to the graph.
#[derive(Debug, Clone, Serialize)]
pub struct Observation {
    pub path: String,
    pub rate: f64,
    pub z: bool,
}

/// Factor graph with per-edge message state.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    grid: RateGrid,
    link_ids: Vec<String>,
    path_ids: Vec<String>,
    factors: Vec<MinFactor>,
    /// For every link, the (factor, slot) pairs it participates in.
    memberships: Vec<Vec<(usize, usize)>>,
    prior_log: Vec<f64>,
    observations: Vec<Observation>,
    /// Per path, the accumulated log-likelihood of its observations.
    obs_log: Vec<Vec<f64>>,
    msg_x_to_min: Vec<Vec<Vec<f64>>>,
    msg_min_to_x: Vec<Vec<Vec<f64>>>,
    msg_min_to_y: Vec<Vec<f64>>,
}

impl FactorGraph {
    /// Builds the graph for a (logically reduced) topology: one link variable
    /// and prior per link, one path variable and min-relation factor per
    /// path, and no likelihood factors yet. Edges mirror the path matrix.
    pub fn build(topology: &Topology, grid: RateGrid) -> Result<Self, GraphError> {
        if topology.n_paths() == 0 || topology.n_links() == 0 {
            return Err(GraphError::EmptyTopology);
        }
        let bins = grid.bins();
        let uniform = vec![1.0 / bins as f64; bins];
        let prior_log = uniform.iter().map(|&m| m.ln()).collect();

        let mut factors = Vec::with_capacity(topology.n_paths());
        let mut memberships = vec![Vec::new(); topology.n_links()];
        for i in 0..topology.n_paths() {
            let links: Vec<usize> = topology.path_links(i).collect();
            for (slot, &j) in links.iter().enumerate() {
                memberships[j].push((i, slot));
            }
            factors.push(MinFactor { path: i, links });
        }

        let msg_x_to_min = factors
            .iter()
            .map(|f| vec![uniform.clone(); f.links.len()])
            .collect();
        let msg_min_to_x = factors
            .iter()
            .map(|f| vec![uniform.clone(); f.links.len()])
            .collect();
        let msg_min_to_y = vec![uniform; topology.n_paths()];

        Ok(Self {
            grid,
            link_ids: topology.links().to_vec(),
            path_ids: topology.paths().iter().map(|p| p.id.clone()).collect(),
            factors,
            memberships,
            prior_log,
            observations: Vec::new(),
            obs_log: vec![vec![0.0; bins]; topology.n_paths()],
            msg_x_to_min,
            msg_min_to_x,
            msg_min_to_y,
        })
    }

    pub fn grid(&self) -> RateGrid {
        self.grid
    }

    pub fn link_ids(&self) -> &[String] {
        &self.link_ids
    }

    pub fn path_ids(&self) -> &[String] {
        &self.path_ids
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn path_index(&self, path: &str) -> Option<usize> {
        self.path_ids.iter().position(|p| p == path)
    }

    /// Attaches one likelihood leaf for a measurement on `path`.
    pub fn add_observation(
        &mut self,
        path: &str,
        rate: f64,
        z: bool,
        model: &LikelihoodModel,
    ) -> Result<(), GraphError> {
        let p = self
            .path_index(path)
            .ok_or_else(|| GraphError::UnknownPath(path.to_owned()))?;
        self.add_observation_at(p, rate, z, model);
        Ok(())
    }

    /// Index-addressed variant of [`FactorGraph::add_observation`].
    pub fn add_observation_at(&mut self, path: usize, rate: f64, z: bool, model: &LikelihoodModel) {
        let vector = model.likelihood_vector(rate, z, &self.grid);
        let sum: f64 = vector.iter().sum();
        for (acc, v) in self.obs_log[path].iter_mut().zip(&vector) {
            *acc += (v / sum).max(MASS_FLOOR).ln();
        }
        self.observations.push(Observation {
            path: self.path_ids[path].clone(),
            rate,
            z,
        });
    }

    /// Number of observations attached to each path, in path order.
    pub fn observation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.path_ids.len()];
        for o in &self.observations {
            if let Some(p) = self.path_index(&o.path) {
                counts[p] += 1;
            }
        }
        counts
    }

    /// Runs sum-product with a flooding schedule: each round recomputes every
    /// variable-to-factor message and then every factor-to-variable message,
    /// in construction order, reusing messages updated earlier in the same
    /// round. Messages persist across calls, so successive runs warm-start
    /// from the previous fixed point.
    pub fn run_bp(&mut self, schedule: &BpSchedule) -> BpReport {
        let bins = self.grid.bins();
        let rounds_cap = schedule.max_rounds.min(schedule.max_messages_per_edge);
        // Path-to-factor messages depend only on the observation set, which
        // is fixed during a run.
        let msg_y_to_min: Vec<Vec<f64>> = self
            .factors
            .iter()
            .map(|f| exp_normalize(&self.obs_log[f.path]))
            .collect();

        let mut log_buf = vec![0.0f64; bins];
        let mut report = BpReport {
            converged: false,
            rounds: 0,
            max_residual: f64::INFINITY,
        };

        for round in 1..=rounds_cap {
            let mut residual = 0.0f64;

            for fi in 0..self.factors.len() {
                for slot in 0..self.factors[fi].links.len() {
                    let link = self.factors[fi].links[slot];
                    log_buf.copy_from_slice(&self.prior_log);
                    for &(fj, sj) in &self.memberships[link] {
                        if fj == fi {
                            continue;
                        }
                        for (acc, &m) in log_buf.iter_mut().zip(&self.msg_min_to_x[fj][sj]) {
                            *acc += m.max(MASS_FLOOR).ln();
                        }
                    }
                    let fresh = exp_normalize(&log_buf);
                    residual = residual.max(update_message(
                        &mut self.msg_x_to_min[fi][slot],
                        fresh,
                        schedule.damping,
                    ));
                }
            }

            for fi in 0..self.factors.len() {
                let n = self.factors[fi].links.len();
                let survivals: Vec<Vec<f64>> = (0..n)
                    .map(|slot| survival(&self.msg_x_to_min[fi][slot]))
                    .collect();

                let fresh_y = min_from_survivals(&survivals, bins);
                residual = residual.max(update_message(
                    &mut self.msg_min_to_y[fi],
                    fresh_y,
                    schedule.damping,
                ));

                // Prefix/suffix survival products exclude one link at a time.
                let mut prefix = vec![vec![1.0f64; bins + 1]; n + 1];
                for slot in 0..n {
                    for r in 0..=bins {
                        prefix[slot + 1][r] = prefix[slot][r] * survivals[slot][r];
                    }
                }
                let mut suffix = vec![vec![1.0f64; bins + 1]; n + 1];
                for slot in (0..n).rev() {
                    for r in 0..=bins {
                        suffix[slot][r] = suffix[slot + 1][r] * survivals[slot][r];
                    }
                }
                for slot in 0..n {
                    let fresh = min_reverse_from_survivals(
                        &msg_y_to_min[fi],
                        &prefix[slot],
                        &suffix[slot + 1],
                        bins,
                    );
                    residual = residual.max(update_message(
                        &mut self.msg_min_to_x[fi][slot],
                        fresh,
                        schedule.damping,
                    ));
                }
            }

            report.rounds = round;
            report.max_residual = residual;
            if residual < schedule.convergence_tol {
                report.converged = true;
                break;
            }
        }
        report
    }

    /// Marginal of a variable by name.
    pub fn marginal(&self, var: Var<'_>) -> Result<Pmf, GraphError> {
        match var {
            Var::Path(id) => {
                let p = self
                    .path_index(id)
                    .ok_or_else(|| GraphError::UnknownVariable(id.to_owned()))?;
                Ok(self.path_marginal_at(p))
            }
            Var::Link(id) => {
                let l = self
                    .link_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| GraphError::UnknownVariable(id.to_owned()))?;
                Ok(self.link_marginal_at(l))
            }
        }
    }

    /// Marginal posterior of path `p`: the product of its likelihood
    /// messages and the incoming min-relation message.
    pub fn path_marginal_at(&self, p: usize) -> Pmf {
        let mut log = self.obs_log[p].clone();
        for (acc, &m) in log.iter_mut().zip(&self.msg_min_to_y[p]) {
            *acc += m.max(MASS_FLOOR).ln();
        }
        Pmf::from_weights(self.grid, exp_normalize(&log)).expect("normalized by construction")
    }

    /// Marginal posterior of link `l`: prior times all incoming min-relation
    /// messages.
    pub fn link_marginal_at(&self, l: usize) -> Pmf {
        let mut log = self.prior_log.clone();
        for &(fi, slot) in &self.memberships[l] {
            for (acc, &m) in log.iter_mut().zip(&self.msg_min_to_x[fi][slot]) {
                *acc += m.max(MASS_FLOOR).ln();
            }
        }
        Pmf::from_weights(self.grid, exp_normalize(&log)).expect("normalized by construction")
    }

    /// Node and edge listing for debugging dumps.
    pub fn structure(&self) -> GraphStructure {
        let mut edges = Vec::new();
        for id in &self.link_ids {
            edges.push(GraphEdge {
                factor: format!("prior[{id}]"),
                variable: format!("x[{id}]"),
            });
        }
        for f in &self.factors {
            let path = &self.path_ids[f.path];
            edges.push(GraphEdge {
                factor: format!("min[{path}]"),
                variable: format!("y[{path}]"),
            });
            for &l in &f.links {
                edges.push(GraphEdge {
                    factor: format!("min[{path}]"),
                    variable: format!("x[{}]", self.link_ids[l]),
                });
            }
        }
        for (k, o) in self.observations.iter().enumerate() {
            edges.push(GraphEdge {
                factor: format!("obs[{k}]"),
                variable: format!("y[{}]", o.path),
            });
        }
        GraphStructure {
            n_link_variables: self.link_ids.len(),
            n_path_variables: self.path_ids.len(),
            n_prior_factors: self.link_ids.len(),
            n_min_factors: self.factors.len(),
            n_likelihood_factors: self.observations.len(),
            edges,
        }
    }
}

/// Serializable node/edge dump of a [`FactorGraph`].
#[derive(Debug, Clone, Serialize)]
pub struct GraphStructure {
    pub n_link_variables: usize,
    pub n_path_variables: usize,
    pub n_prior_factors: usize,
    pub n_min_factors: usize,
    pub n_likelihood_factors: usize,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEdge {
    pub factor: String,
    pub variable: String,
}

/// Exact distribution of the minimum of independent variables with the given
/// marginals, via survival products.
pub fn min_message_to_path(inputs: &[Pmf]) -> Result<Pmf, GraphError> {
    let first = inputs.first().ok_or(GraphError::NoMessages)?;
    if inputs.iter().any(|p| p.grid() != first.grid()) {
        return Err(GraphError::GridMismatch);
    }
    let bins = first.grid().bins();
    let survivals: Vec<Vec<f64>> = inputs.iter().map(|p| survival(p.mass())).collect();
    let weights = min_from_survivals(&survivals, bins);
    Pmf::from_weights(first.grid(), weights).map_err(|_| GraphError::Contradiction)
}

/// Sum-product message from a min-relation factor back to one of its links,
/// given the path-side message and the other links' messages.
pub fn min_message_to_link(path_msg: &Pmf, others: &[Pmf]) -> Result<Pmf, GraphError> {
    if others.iter().any(|p| p.grid() != path_msg.grid()) {
        return Err(GraphError::GridMismatch);
    }
    let bins = path_msg.grid().bins();
    let mut product = vec![1.0f64; bins + 1];
    for other in others {
        for (acc, s) in product.iter_mut().zip(survival(other.mass())) {
            *acc *= s;
        }
    }
    let ones = vec![1.0f64; bins + 1];
    let weights = min_reverse_from_survivals(path_msg.mass(), &product, &ones, bins);
    Pmf::from_weights(path_msg.grid(), weights).map_err(|_| GraphError::Contradiction)
}

/// Survival mass `S(r) = sum_{v >= r} m(v)`, with a trailing zero entry.
fn survival(mass: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; mass.len() + 1];
    for r in (0..mass.len()).rev() {
        s[r] = s[r + 1] + mass[r];
    }
    s
}

fn min_from_survivals(survivals: &[Vec<f64>], bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|r| {
            let at: f64 = survivals.iter().map(|s| s[r]).product();
            let above: f64 = survivals.iter().map(|s| s[r + 1]).product();
            (at - above).max(0.0)
        })
        .collect()
}

/// Reverse min message: `out(r) = sum_{w < r} P_other(w) m_y(w) + m_y(r) S_other(r)`
/// where the other links' survival product is `prefix * suffix`.
fn min_reverse_from_survivals(
    path_msg: &[f64],
    prefix: &[f64],
    suffix: &[f64],
    bins: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(bins);
    let mut below = 0.0f64;
    for r in 0..bins {
        let s_at = prefix[r] * suffix[r];
        let s_above = prefix[r + 1] * suffix[r + 1];
        out.push(below + path_msg[r] * s_at);
        below += (s_at - s_above).max(0.0) * path_msg[r];
    }
    out
}

fn exp_normalize(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Replaces `slot` with `fresh` (optionally damped) and returns the largest
/// elementwise change.
fn update_message(slot: &mut Vec<f64>, mut fresh: Vec<f64>, damping: f64) -> f64 {
    if damping > 0.0 {
        let mut sum = 0.0;
        for (f, &old) in fresh.iter_mut().zip(slot.iter()) {
            *f = (1.0 - damping) * *f + damping * old;
            sum += *f;
        }
        for f in fresh.iter_mut() {
            *f /= sum;
        }
    }
    let mut delta = 0.0f64;
    for (&new, &old) in fresh.iter().zip(slot.iter()) {
        delta = delta.max((new - old).abs());
    }
    *slot = fresh;
    delta
}
