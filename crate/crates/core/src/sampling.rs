//! Active sampling: which path to probe next, and at what rate.
//!
//! Four path-selection strategies are provided. Round-robin cycles through
//! paths (either skipping already-satisfied paths, or strictly visiting all
//! of them, which is the classical baseline). SEQ finishes one path before
//! moving to the next. The two data-driven strategies draw a path at random
//! with probability proportional to the entropy of its marginal (WE) or to
//! the width of its credible interval (WCI); satisfied paths have weight
//! exactly zero. The probing rate is always the posterior median, which
//! splits the current belief in half and so maximizes the expected
//! information from a binary outcome.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{CredibleInterval, Pmf};

/// Path-selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Round robin over unsatisfied paths.
    Rr,
    /// Round robin over all paths, satisfied or not.
    RrStrict,
    /// Probe the lowest-indexed unsatisfied path to completion; paths are
    /// estimated independently (no cross-path message flow).
    Seq,
    /// Weighted by marginal entropy.
    We,
    /// Weighted by credible-interval width.
    Wci,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StrategyKind::Rr => "rr",
            StrategyKind::RrStrict => "rr-strict",
            StrategyKind::Seq => "seq",
            StrategyKind::We => "we",
            StrategyKind::Wci => "wci",
        };
        f.write_str(name)
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" => Ok(StrategyKind::Rr),
            "rr-strict" => Ok(StrategyKind::RrStrict),
            "seq" => Ok(StrategyKind::Seq),
            "we" => Ok(StrategyKind::We),
            "wci" => Ok(StrategyKind::Wci),
            other => Err(format!(
                "unknown strategy '{other}' (expected rr, rr-strict, seq, we or wci)"
            )),
        }
    }
}

/// Strategy plus the stopping thresholds it needs to judge satisfaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub seed: u64,
    /// Target credible-interval width (Mbps).
    pub beta: f64,
    /// Credible level for the intervals.
    pub eta: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, seed: u64, beta: f64, eta: f64) -> Result<Self, String> {
        if !(beta > 0.0) {
            return Err(format!("beta must be > 0, got {beta}"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(format!("eta must lie in (0, 1), got {eta}"));
        }
        Ok(Self {
            kind,
            seed,
            beta,
            eta,
        })
    }
}

/// Snapshot of one path's belief, as the selector sees it.
#[derive(Debug, Clone)]
pub struct PathState {
    pub path: String,
    pub marginal: Pmf,
    pub interval: CredibleInterval,
    pub satisfied: bool,
    pub measurements: u64,
}

impl PathState {
    pub fn from_marginal(
        path: impl Into<String>,
        marginal: Pmf,
        cfg: &StrategyConfig,
        measurements: u64,
    ) -> Self {
        let interval = marginal
            .credible_interval(cfg.eta)
            .expect("eta validated by StrategyConfig");
        Self {
            path: path.into(),
            marginal,
            interval,
            satisfied: interval.size <= cfg.beta,
            measurements,
        }
    }
}

/// Stateful path selector; owns the random stream and the round-robin cursor.
#[derive(Debug, Clone)]
pub struct PathSelector {
    cfg: StrategyConfig,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl PathSelector {
    pub fn new(cfg: StrategyConfig) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cursor: 0,
        }
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    /// Picks the next path to probe, or `None` once every path is satisfied.
    pub fn select_path(&mut self, states: &[PathState]) -> Option<usize> {
        if states.is_empty() || states.iter().all(|s| s.satisfied) {
            return None;
        }
        match self.cfg.kind {
            StrategyKind::Rr => {
                let n = states.len();
                for _ in 0..n {
                    let i = self.cursor % n;
                    self.cursor += 1;
                    if !states[i].satisfied {
                        return Some(i);
                    }
                }
                None
            }
            StrategyKind::RrStrict => {
                let i = self.cursor % states.len();
                self.cursor += 1;
                Some(i)
            }
            StrategyKind::Seq => states.iter().position(|s| !s.satisfied),
            StrategyKind::We => {
                let weights: Vec<f64> = states
                    .iter()
                    .map(|s| if s.satisfied { 0.0 } else { s.marginal.entropy() })
                    .collect();
                self.weighted_draw(states, weights)
            }
            StrategyKind::Wci => {
                let weights: Vec<f64> = states
                    .iter()
                    .map(|s| if s.satisfied { 0.0 } else { s.interval.size })
                    .collect();
                self.weighted_draw(states, weights)
            }
        }
    }

    fn weighted_draw(&mut self, states: &[PathState], weights: Vec<f64>) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            // Degenerate weights (e.g. near-point-mass marginals): fall back
            // to a uniform draw over the unsatisfied paths.
            let open: Vec<usize> = states
                .iter()
                .enumerate()
                .filter_map(|(i, s)| (!s.satisfied).then_some(i))
                .collect();
            return open
                .is_empty()
                .then_some(None)
                .unwrap_or_else(|| Some(open[self.rng.random_range(0..open.len())]));
        }
        let mut u = self.rng.random::<f64>() * total;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if u < w {
                return Some(i);
            }
            u -= w;
        }
        // Rounding pushed u past the last positive weight.
        weights.iter().rposition(|&w| w > 0.0)
    }
}

/// Probing rate for a path: the rate that bisects its marginal posterior.
pub fn select_rate(marginal: &Pmf) -> f64 {
    marginal.median()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::RateGrid;

    fn grid() -> RateGrid {
        RateGrid::new(1.0, 100.0, 1.0).unwrap()
    }

    fn cfg(kind: StrategyKind) -> StrategyConfig {
        StrategyConfig::new(kind, 7, 10.0, 0.95).unwrap()
    }

    fn wide_state(cfg: &StrategyConfig, id: &str) -> PathState {
        PathState::from_marginal(id, Pmf::uniform(grid()), cfg, 0)
    }

    fn narrow_state(cfg: &StrategyConfig, id: &str) -> PathState {
        PathState::from_marginal(id, Pmf::point_mass(grid(), 40), cfg, 3)
    }

    #[test]
    fn all_satisfied_returns_sentinel() {
        for kind in [
            StrategyKind::Rr,
            StrategyKind::RrStrict,
            StrategyKind::Seq,
            StrategyKind::We,
            StrategyKind::Wci,
        ] {
            let c = cfg(kind);
            let mut sel = PathSelector::new(c);
            let states = vec![narrow_state(&c, "a"), narrow_state(&c, "b")];
            assert_eq!(sel.select_path(&states), None, "{kind}");
            assert_eq!(sel.select_path(&[]), None, "{kind} empty");
        }
    }

    #[test]
    fn rr_skips_satisfied_and_visits_each_unsatisfied_once_per_cycle() {
        let c = cfg(StrategyKind::Rr);
        let mut sel = PathSelector::new(c);
        let states = vec![
            wide_state(&c, "a"),
            narrow_state(&c, "b"),
            wide_state(&c, "c"),
            wide_state(&c, "d"),
        ];
        let picks: Vec<usize> = (0..6).map(|_| sel.select_path(&states).unwrap()).collect();
        assert_eq!(picks, vec![0, 2, 3, 0, 2, 3]);
    }

    #[test]
    fn rr_strict_visits_satisfied_paths_too() {
        let c = cfg(StrategyKind::RrStrict);
        let mut sel = PathSelector::new(c);
        let states = vec![wide_state(&c, "a"), narrow_state(&c, "b")];
        let picks: Vec<usize> = (0..4).map(|_| sel.select_path(&states).unwrap()).collect();
        assert_eq!(picks, vec![0, 1, 0, 1]);
    }

    #[test]
    fn seq_sticks_to_lowest_unsatisfied() {
        let c = cfg(StrategyKind::Seq);
        let mut sel = PathSelector::new(c);
        let states = vec![narrow_state(&c, "a"), wide_state(&c, "b"), wide_state(&c, "c")];
        assert_eq!(sel.select_path(&states), Some(1));
        assert_eq!(sel.select_path(&states), Some(1));
    }

    #[test]
    fn wci_draw_frequencies_match_weights() {
        let c = cfg(StrategyKind::Wci);
        let mut sel = PathSelector::new(c);
        // two equal-width unsatisfied paths and one satisfied path
        let states = vec![wide_state(&c, "a"), wide_state(&c, "b"), narrow_state(&c, "c")];
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sel.select_path(&states).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let f0 = counts[0] as f64 / draws as f64;
        assert!((f0 - 0.5).abs() < 0.02, "frequency {f0}");
        // chi-squared goodness of fit against the 50/50 target, df = 1
        let expected = draws as f64 / 2.0;
        let chi2: f64 = counts[..2]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 6.635, "chi2 {chi2}"); // 0.01 significance, df 1
    }

    #[test]
    fn we_draw_frequencies_match_entropy_ratio() {
        let c = cfg(StrategyKind::We);
        let mut sel = PathSelector::new(c);
        // one uniform marginal and one lower-entropy (but unsatisfied) marginal
        let uniform = Pmf::uniform(grid());
        let mut weights = vec![1.0; 100];
        for w in weights.iter_mut().take(30) {
            *w = 20.0;
        }
        let peaked = Pmf::from_weights(grid(), weights).unwrap();
        let states = vec![
            PathState::from_marginal("u", uniform.clone(), &c, 0),
            PathState::from_marginal("p", peaked.clone(), &c, 0),
        ];
        assert!(!states[1].satisfied);
        let (h0, h1) = (uniform.entropy(), peaked.entropy());
        let want = h0 / (h0 + h1);
        let draws = 10_000;
        let mut count0 = 0usize;
        for _ in 0..draws {
            if sel.select_path(&states).unwrap() == 0 {
                count0 += 1;
            }
        }
        let f0 = count0 as f64 / draws as f64;
        assert!((f0 - want).abs() < 0.02, "frequency {f0} want {want}");
        let expected = [want * draws as f64, (1.0 - want) * draws as f64];
        let observed = [count0 as f64, (draws - count0) as f64];
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e).powi(2) / e)
            .sum();
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let c = cfg(StrategyKind::Wci);
        let states = vec![wide_state(&c, "a"), wide_state(&c, "b")];
        let run = || {
            let mut sel = PathSelector::new(c);
            (0..32)
                .map(|_| sel.select_path(&states).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn select_rate_is_posterior_median() {
        assert_eq!(select_rate(&Pmf::uniform(grid())), 50.0);
        assert_eq!(select_rate(&Pmf::point_mass(grid(), 41)), 42.0);
    }
}
