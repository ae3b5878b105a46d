//! Discrete beliefs over a rate grid.
//!
//! Every quantity the estimator reasons about — link PABs, path PABs,
//! messages between factor-graph nodes — is a probability mass function on a
//! shared grid of transmission rates. This module owns the grid, the pmf type
//! and the statistical queries the rest of the pipeline needs: entropy,
//! median, minimal credible interval and pointwise products.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pmf masses must sum to one within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Floor applied to message entries before multiplying beliefs together.
///
/// The clamped likelihood makes true zeros impossible, so a zero entry in a
/// message indicates numeric underflow rather than evidence; flooring keeps
/// products well defined.
pub const MASS_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("invalid rate grid: {0}")]
    InvalidGrid(String),
    #[error("mass vector of length {got} does not match grid with {want} bins")]
    LengthMismatch { got: usize, want: usize },
    #[error("mass vector sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("negative mass {value} at bin {bin}")]
    NegativeMass { bin: usize, value: f64 },
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("pointwise product is identically zero (contradictory beliefs)")]
    ContradictoryBeliefs,
    #[error("credible level must lie strictly inside (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// Uniform discretization of the rate axis, `b_min..=b_max` in steps of `step` (Mbps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct RateGrid {
    b_min: f64,
    b_max: f64,
    step: f64,
    #[serde(skip_serializing)]
    #[serde(default)]
    bins: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    b_min: f64,
    b_max: f64,
    step: f64,
}

impl TryFrom<RawGrid> for RateGrid {
    type Error = BeliefError;
    fn try_from(raw: RawGrid) -> Result<Self, BeliefError> {
        RateGrid::new(raw.b_min, raw.b_max, raw.step)
    }
}

impl RateGrid {
    /// Builds a grid, rejecting empty ranges and steps that do not evenly
    /// divide the span.
    pub fn new(b_min: f64, b_max: f64, step: f64) -> Result<Self, BeliefError> {
        if !b_min.is_finite() || !b_max.is_finite() || !step.is_finite() {
            return Err(BeliefError::InvalidGrid("non-finite bound or step".into()));
        }
        if b_min >= b_max {
            return Err(BeliefError::InvalidGrid(format!(
                "b_min {b_min} must be < b_max {b_max}"
            )));
        }
        if step <= 0.0 {
            return Err(BeliefError::InvalidGrid(format!("step {step} must be > 0")));
        }
        let span = b_max - b_min;
        let steps = span / step;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(BeliefError::InvalidGrid(format!(
                "span {span} is not an integer multiple of step {step}"
            )));
        }
        let bins = steps.round() as usize + 1;
        Ok(Self {
            b_min,
            b_max,
            step,
            bins,
        })
    }

    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid points, `(b_max - b_min)/step + 1`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Rate of grid point `bin`.
    pub fn rate(&self, bin: usize) -> f64 {
        self.b_min + self.step * bin as f64
    }

    /// Grid point nearest to `rate`, clamped to the grid range.
    pub fn bin_of(&self, rate: f64) -> usize {
        let idx = ((rate - self.b_min) / self.step).round();
        idx.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.bins).map(|i| self.rate(i))
    }
}

/// Smallest contiguous grid interval holding at least the requested posterior
/// mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    /// Lower bound of the interval (Mbps).
    pub lower: f64,
    /// Upper bound of the interval (Mbps).
    pub upper: f64,
    /// Interval width `upper - lower` (Mbps).
    pub size: f64,
    /// Probability mass actually contained in the interval.
    pub level: f64,
}

/// A probability mass function on a [`RateGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    grid: RateGrid,
    mass: Vec<f64>,
}

impl Pmf {
    /// The non-informative prior: equal mass on every grid point.
    pub fn uniform(grid: RateGrid) -> Self {
        let m = 1.0 / grid.bins() as f64;
        Self {
            grid,
            mass: vec![m; grid.bins()],
        }
    }

    /// All mass on a single grid point.
    pub fn point_mass(grid: RateGrid, bin: usize) -> Self {
        let mut mass = vec![0.0; grid.bins()];
        mass[bin.min(grid.bins() - 1)] = 1.0;
        Self { grid, mass }
    }

    /// Validates and wraps an explicit mass vector.
    pub fn from_mass(grid: RateGrid, mass: Vec<f64>) -> Result<Self, BeliefError> {
        if mass.len() != grid.bins() {
            return Err(BeliefError::LengthMismatch {
                got: mass.len(),
                want: grid.bins(),
            });
        }
        for (bin, &value) in mass.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(BeliefError::NegativeMass { bin, value });
            }
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(BeliefError::NotNormalized { sum });
        }
        Ok(Self { grid, mass })
    }

    /// Normalizes an arbitrary non-negative weight vector into a pmf.
    pub fn from_weights(grid: RateGrid, weights: Vec<f64>) -> Result<Self, BeliefError> {
        if weights.len() != grid.bins() {
            return Err(BeliefError::LengthMismatch {
                got: weights.len(),
                want: grid.bins(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(BeliefError::ContradictoryBeliefs);
        }
        let mass = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { grid, mass })
    }

    pub fn grid(&self) -> RateGrid {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .mass
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| m * m.ln())
            .sum::<f64>()
    }

    /// Smallest grid rate whose cumulative mass reaches one half.
    pub fn median(&self) -> f64 {
        let mut cum = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            cum += m;
            if cum >= 0.5 {
                return self.grid.rate(i);
            }
        }
        // Mass sums to 1 within tolerance, so this is only reachable through
        // rounding on the last bin.
        self.grid.b_max()
    }

    /// Minimal-width contiguous interval with mass at least `eta`; ties are
    /// broken towards the lowest lower bound.
    pub fn credible_interval(&self, eta: f64) -> Result<CredibleInterval, BeliefError> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(BeliefError::InvalidLevel(eta));
        }
        let n = self.mass.len();
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for &m in &self.mass {
            prefix.push(prefix.last().unwrap() + m);
        }
        // Two-pointer sweep: the minimal right endpoint for a given left
        // endpoint never moves backwards as the left endpoint advances.
        let mut best: Option<(usize, usize, f64)> = None;
        let mut hi = 0usize;
        for lo in 0..n {
            if hi < lo {
                hi = lo;
            }
            while hi < n && prefix[hi + 1] - prefix[lo] < eta {
                hi += 1;
            }
            if hi == n {
                break;
            }
            let width = hi - lo;
            let mass = prefix[hi + 1] - prefix[lo];
            match best {
                Some((w, _, _)) if width >= w => {}
                _ => best = Some((width, lo, mass)),
            }
        }
        // eta < 1 and the pmf is normalized, so the full range always
        // qualifies; fall back to it if rounding starved the sweep.
        let (width, lo, level) = best.unwrap_or((n - 1, 0, prefix[n]));
        Ok(CredibleInterval {
            lower: self.grid.rate(lo),
            upper: self.grid.rate(lo + width),
            size: self.grid.step() * width as f64,
            level,
        })
    }

    /// Pointwise product of two beliefs on the same grid, renormalized.
    pub fn product_normalize(a: &Pmf, b: &Pmf) -> Result<Pmf, BeliefError> {
        if a.grid != b.grid {
            return Err(BeliefError::GridMismatch);
        }
        let weights: Vec<f64> = a
            .mass
            .iter()
            .zip(&b.mass)
            .map(|(&x, &y)| x * y)
            .collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(BeliefError::ContradictoryBeliefs);
        }
        Ok(Pmf {
            grid: a.grid,
            mass: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Total variation distance to another pmf on the same grid.
    pub fn tv_distance(&self, other: &Pmf) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid_1_100() -> RateGrid {
        RateGrid::new(1.0, 100.0, 1.0).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_ranges() {
        assert!(RateGrid::new(0.0, 0.0, 1.0).is_err());
        assert!(RateGrid::new(5.0, 1.0, 1.0).is_err());
        assert!(RateGrid::new(1.0, 100.0, 0.0).is_err());
        assert!(RateGrid::new(1.0, 100.0, 0.7).is_err());
    }

    #[test]
    fn uniform_on_default_grid_has_100_bins_of_equal_mass() {
        let p = Pmf::uniform(grid_1_100());
        assert_eq!(p.mass().len(), 100);
        for &m in p.mass() {
            assert_abs_diff_eq!(m, 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_two_bins() {
        let g = RateGrid::new(1.0, 2.0, 1.0).unwrap();
        assert_eq!(Pmf::uniform(g).mass(), &[0.5, 0.5]);
    }

    #[test]
    fn entropy_of_point_mass_is_zero() {
        let p = Pmf::point_mass(grid_1_100(), 39);
        assert_eq!(p.entropy(), 0.0);
    }

    #[test]
    fn entropy_of_uniform_is_ln_k() {
        let p = Pmf::uniform(grid_1_100());
        assert_abs_diff_eq!(p.entropy(), (100f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_matches_direct_evaluation() {
        let g = RateGrid::new(1.0, 2.0, 1.0).unwrap();
        let p = Pmf::from_mass(g, vec![0.75, 0.25]).unwrap();
        // -0.75 ln 0.75 - 0.25 ln 0.25, evaluated independently
        assert_abs_diff_eq!(p.entropy(), 0.5623351446188083, epsilon = 1e-14);
    }

    #[test]
    fn median_of_point_mass() {
        let p = Pmf::point_mass(grid_1_100(), 39);
        assert_eq!(p.median(), 40.0);
    }

    #[test]
    fn median_of_uniform_is_50() {
        // Cumulative-sum oracle: the 50th bin is the first with mass >= 0.5.
        let p = Pmf::uniform(grid_1_100());
        assert_eq!(p.median(), 50.0);
    }

    #[test]
    fn median_hand_cumulative() {
        let g = RateGrid::new(10.0, 30.0, 10.0).unwrap();
        let p = Pmf::from_mass(g, vec![0.2, 0.2, 0.6]).unwrap();
        assert_eq!(p.median(), 30.0);
    }

    #[test]
    fn credible_interval_of_point_mass_has_zero_width() {
        let p = Pmf::point_mass(grid_1_100(), 39);
        let ci = p.credible_interval(0.95).unwrap();
        assert_eq!((ci.lower, ci.upper, ci.size), (40.0, 40.0, 0.0));
        assert!(ci.level >= 0.95);
    }

    #[test]
    fn credible_interval_of_uniform_covers_95_bins() {
        let p = Pmf::uniform(grid_1_100());
        let ci = p.credible_interval(0.95).unwrap();
        assert_eq!(ci.size, 94.0); // 95 grid points
        assert_eq!(ci.lower, 1.0); // tie-break to the lowest window
        assert!(ci.level >= 0.95);
    }

    #[test]
    fn credible_interval_bimodal_tie_breaks_low() {
        let g = grid_1_100();
        let mut mass = vec![0.0; 100];
        mass[9] = 0.5; // rate 10
        mass[89] = 0.5; // rate 90
        let p = Pmf::from_mass(g, mass).unwrap();
        let ci = p.credible_interval(0.4).unwrap();
        assert_eq!((ci.lower, ci.upper), (10.0, 10.0));
    }

    #[test]
    fn product_with_uniform_returns_normalized_other() {
        let g = RateGrid::new(1.0, 4.0, 1.0).unwrap();
        let u = Pmf::uniform(g);
        let q = Pmf::from_mass(g, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let prod = Pmf::product_normalize(&u, &q).unwrap();
        assert!(prod.tv_distance(&q) < 1e-12);
    }

    #[test]
    fn product_of_same_point_mass_is_that_point_mass() {
        let g = RateGrid::new(1.0, 4.0, 1.0).unwrap();
        let p = Pmf::point_mass(g, 2);
        let prod = Pmf::product_normalize(&p, &p).unwrap();
        assert_eq!(prod, p);
    }

    #[test]
    fn product_of_disjoint_point_masses_signals_contradiction() {
        let g = RateGrid::new(1.0, 4.0, 1.0).unwrap();
        let a = Pmf::point_mass(g, 0);
        let b = Pmf::point_mass(g, 3);
        assert!(matches!(
            Pmf::product_normalize(&a, &b),
            Err(BeliefError::ContradictoryBeliefs)
        ));
    }

    #[test]
    fn from_mass_validates() {
        let g = RateGrid::new(1.0, 4.0, 1.0).unwrap();
        assert!(Pmf::from_mass(g, vec![0.5, 0.5]).is_err());
        assert!(Pmf::from_mass(g, vec![0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(Pmf::from_mass(g, vec![0.5, -0.1, 0.6, 0.0]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let p = Pmf::uniform(grid_1_100());
        let text = serde_json::to_string(&p).unwrap();
        let back: Pmf = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.grid().bins(), 100);
    }
}
