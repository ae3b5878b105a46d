//! The measurement outcome model.
//!
//! A probe at rate `r` on a path with PAB `y` succeeds (outcome 1) with
//! probability `logsig(-alpha (r - y))`, clamped into `[kappa, 1 - kappa]` so
//! that no outcome is ever impossible. The curve is fitted once from training
//! traces by jointly regressing `alpha` and the per-path PAB estimates, and a
//! horizontal shift aligns the curve value at `r = y` with the configured
//! success probability `gamma`.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::RateGrid;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("invalid likelihood parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid training sample: {0}")]
    InvalidSample(String),
    #[error("training data is not identifiable: {0}")]
    NonIdentifiable(String),
    #[error("training csv at record {record}: {message}")]
    Csv { record: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Clamped-sigmoid outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct LikelihoodModel {
    alpha: f64,
    kappa: f64,
    gamma: f64,
    #[serde(skip_serializing)]
    #[serde(default)]
    gamma_shift: f64,
}

#[derive(Deserialize)]
struct RawModel {
    alpha: f64,
    kappa: f64,
    gamma: f64,
}

impl TryFrom<RawModel> for LikelihoodModel {
    type Error = LikelihoodError;
    fn try_from(raw: RawModel) -> Result<Self, LikelihoodError> {
        LikelihoodModel::new(raw.alpha, raw.kappa, raw.gamma)
    }
}

fn logsig(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LikelihoodModel {
    /// Builds a model; `gamma_shift` is the unique horizontal translation
    /// that makes the curve pass through `gamma` at `r = y`.
    pub fn new(alpha: f64, kappa: f64, gamma: f64) -> Result<Self, LikelihoodError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(LikelihoodError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(kappa > 0.0 && kappa < 0.5) {
            return Err(LikelihoodError::InvalidParameter(format!(
                "kappa must lie in (0, 0.5), got {kappa}"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(LikelihoodError::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let gamma_shift = if gamma == 0.5 { 0.0 } else { logit(gamma) / alpha };
        Ok(Self {
            alpha,
            kappa,
            gamma,
            gamma_shift,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gamma_shift(&self) -> f64 {
        self.gamma_shift
    }

    /// Probability of outcome 1 when probing at `rate` a path whose PAB is
    /// `pab`. Decreasing in `rate`, equal to `gamma` at `rate = pab`, and
    /// clamped into `[kappa, 1 - kappa]`.
    pub fn success_probability(&self, rate: f64, pab: f64) -> f64 {
        let raw = logsig(-self.alpha * (rate - pab - self.gamma_shift));
        raw.clamp(self.kappa, 1.0 - self.kappa)
    }

    /// Likelihood of outcome `z` at probe rate `rate`, evaluated at every
    /// grid PAB value. Not normalized.
    pub fn likelihood_vector(&self, rate: f64, z: bool, grid: &RateGrid) -> Vec<f64> {
        grid.rates()
            .map(|y| {
                let p = self.success_probability(rate, y);
                if z {
                    p
                } else {
                    1.0 - p
                }
            })
            .collect()
    }
}

/// One empirical point of the outcome curve: how often probes at `rate`
/// succeeded on `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub path: String,
    pub rate: f64,
    pub frequency: f64,
    pub count: u64,
}

impl TrainingSample {
    pub fn new(
        path: impl Into<String>,
        rate: f64,
        frequency: f64,
        count: u64,
    ) -> Result<Self, LikelihoodError> {
        if !(0.0..=1.0).contains(&frequency) {
            return Err(LikelihoodError::InvalidSample(format!(
                "frequency {frequency} outside [0, 1]"
            )));
        }
        if count == 0 {
            return Err(LikelihoodError::InvalidSample("count must be >= 1".into()));
        }
        Ok(Self {
            path: path.into(),
            rate,
            frequency,
            count,
        })
    }
}

/// Reads training samples from CSV records
/// `path_id,rate_mbps,success_count,total_count` (a header row is accepted).
pub fn read_training_csv(reader: impl Read) -> Result<Vec<TrainingSample>, LikelihoodError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in csv.records().enumerate() {
        let record = record.map_err(|e| LikelihoodError::Csv {
            record: idx + 1,
            message: e.to_string(),
        })?;
        if idx == 0 && record.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue; // header row
        }
        let field = |i: usize| -> Result<&str, LikelihoodError> {
            record.get(i).ok_or_else(|| LikelihoodError::Csv {
                record: idx + 1,
                message: format!("missing field {i}"),
            })
        };
        let parse = |i: usize| -> Result<f64, LikelihoodError> {
            field(i)?.trim().parse().map_err(|_| LikelihoodError::Csv {
                record: idx + 1,
                message: format!("field {i} is not numeric"),
            })
        };
        let successes = parse(2)?;
        let total = parse(3)?;
        if total < 1.0 || successes < 0.0 || successes > total {
            return Err(LikelihoodError::Csv {
                record: idx + 1,
                message: format!("bad counts {successes}/{total}"),
            });
        }
        out.push(TrainingSample::new(
            field(0)?.trim().to_owned(),
            parse(1)?,
            successes / total,
            total as u64,
        )?);
    }
    Ok(out)
}

/// Result of the joint regression.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub alpha: f64,
    pub path_pab: BTreeMap<String, f64>,
    pub mse: f64,
}

const ALPHA_RANGE: (f64, f64) = (1e-3, 20.0);
const COARSE_POINTS: usize = 48;
const GOLDEN_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 200;

/// Jointly fits `alpha` and one PAB estimate per path by minimizing the
/// count-weighted mean squared error between the clamped curve (at
/// `gamma = 0.5`) and the empirical frequencies.
///
/// Coordinate descent with a coarse scan plus golden-section refinement per
/// coordinate; any optimizer reaching the same MSE is equivalent.
pub fn fit(samples: &[TrainingSample], kappa: f64) -> Result<FitResult, LikelihoodError> {
    if samples.is_empty() {
        return Err(LikelihoodError::InvalidSample("no samples".into()));
    }
    let mut paths: Vec<String> = Vec::new();
    for s in samples {
        if !paths.contains(&s.path) {
            paths.push(s.path.clone());
        }
    }
    for p in &paths {
        let mut rates: Vec<f64> = samples
            .iter()
            .filter(|s| &s.path == p)
            .map(|s| s.rate)
            .collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        if rates.len() < 2 {
            return Err(LikelihoodError::InvalidSample(format!(
                "path '{p}' needs samples at >= 2 distinct rates"
            )));
        }
    }
    let first = samples[0].frequency;
    if samples.iter().all(|s| s.frequency == first) {
        return Err(LikelihoodError::NonIdentifiable(
            "all empirical frequencies are identical".into(),
        ));
    }

    let total_weight: f64 = samples.iter().map(|s| s.count as f64).sum();
    let rate_lo = samples.iter().map(|s| s.rate).fold(f64::INFINITY, f64::min);
    let rate_hi = samples
        .iter()
        .map(|s| s.rate)
        .fold(f64::NEG_INFINITY, f64::max);
    let pab_range = (rate_lo - 20.0, rate_hi + 20.0);

    let objective = |alpha: f64, pabs: &BTreeMap<String, f64>| -> f64 {
        let mut acc = 0.0;
        for s in samples {
            let y = pabs[&s.path];
            let p = logsig(-alpha * (s.rate - y)).clamp(kappa, 1.0 - kappa);
            acc += s.count as f64 * (p - s.frequency) * (p - s.frequency);
        }
        acc / total_weight
    };

    // Initial PAB guess per path: rate whose frequency is closest to 0.5.
    let mut pabs: BTreeMap<String, f64> = paths
        .iter()
        .map(|p| {
            let best = samples
                .iter()
                .filter(|s| &s.path == p)
                .min_by(|a, b| {
                    (a.frequency - 0.5)
                        .abs()
                        .total_cmp(&(b.frequency - 0.5).abs())
                })
                .unwrap();
            (p.clone(), best.rate)
        })
        .collect();
    let mut alpha = 0.3;

    let mut best = objective(alpha, &pabs);
    for _ in 0..MAX_SWEEPS {
        let previous = best;
        alpha = minimize_scalar(ALPHA_RANGE, |a| objective(a, &pabs));
        for p in &paths {
            let value = minimize_scalar(pab_range, |y| {
                let mut trial = pabs.clone();
                trial.insert(p.clone(), y);
                objective(alpha, &trial)
            });
            pabs.insert(p.clone(), value);
        }
        best = objective(alpha, &pabs);
        if previous - best < 1e-14 {
            break;
        }
    }

    Ok(FitResult {
        alpha,
        path_pab: pabs,
        mse: best,
    })
}

/// Coarse grid scan followed by golden-section refinement around the best
/// scanned bracket.
fn minimize_scalar((lo, hi): (f64, f64), f: impl Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..COARSE_POINTS {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = (lo + step * (best_i + 1) as f64).min(hi);
    golden_section((a, b), f)
}

fn golden_section((mut a, mut b): (f64, f64), f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model() -> LikelihoodModel {
        LikelihoodModel::new(0.28, 0.02, 0.5).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(LikelihoodModel::new(0.0, 0.02, 0.5).is_err());
        assert!(LikelihoodModel::new(0.28, 0.5, 0.5).is_err());
        assert!(LikelihoodModel::new(0.28, 0.02, 1.0).is_err());
    }

    #[test]
    fn success_probability_at_boundary_equals_gamma() {
        let m = model();
        assert_abs_diff_eq!(m.success_probability(50.0, 50.0), 0.5, epsilon = 1e-15);
        for gamma in [0.1, 0.3, 0.9] {
            let m = LikelihoodModel::new(0.28, 0.02, gamma).unwrap();
            assert_abs_diff_eq!(m.success_probability(42.0, 42.0), gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn success_probability_clamps_far_from_boundary() {
        let m = model();
        assert_eq!(m.success_probability(1.0, 101.0), 0.98);
        assert_eq!(m.success_probability(101.0, 1.0), 0.02);
    }

    #[test]
    fn success_probability_scalar_oracle() {
        // logsig(-0.28 * 5) = logsig(-1.4), evaluated independently
        let m = model();
        assert_abs_diff_eq!(
            m.success_probability(55.0, 50.0),
            0.19781611144141825,
            epsilon = 1e-14
        );
    }

    #[test]
    fn success_probability_is_monotone_in_rate() {
        let m = model();
        let mut last = f64::INFINITY;
        for r in 0..200 {
            let p = m.success_probability(r as f64, 77.0);
            assert!(p <= last + 1e-15);
            assert!((0.02..=0.98).contains(&p));
            last = p;
        }
    }

    #[test]
    fn likelihood_vector_orientation_and_complement() {
        let grid = RateGrid::new(1.0, 100.0, 1.0).unwrap();
        let m = model();
        let up = m.likelihood_vector(60.0, true, &grid);
        for pair in up.windows(2) {
            assert!(pair[1] >= pair[0]); // success more likely for larger PAB
        }
        let down = m.likelihood_vector(60.0, false, &grid);
        for (a, b) in up.iter().zip(&down) {
            assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_opposed_measurements_peak_between_rates() {
        let grid = RateGrid::new(1.0, 100.0, 1.0).unwrap();
        let m = model();
        let lo = m.likelihood_vector(40.0, true, &grid);
        let hi = m.likelihood_vector(60.0, false, &grid);
        let product: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a * b).collect();
        let argmax = product
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let peak_rate = grid.rate(argmax);
        assert!(peak_rate > 40.0 && peak_rate < 60.0, "peak at {peak_rate}");
    }

    fn synthesize(alpha: f64, pab: f64, path: &str) -> Vec<TrainingSample> {
        let m = LikelihoodModel::new(alpha, 0.02, 0.5).unwrap();
        (1..=100)
            .map(|r| {
                TrainingSample::new(path, r as f64, m.success_probability(r as f64, pab), 500)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_curve() {
        let samples = synthesize(0.28, 50.0, "p1");
        let fit = fit(&samples, 0.02).unwrap();
        assert!((fit.alpha - 0.28).abs() < 1e-3, "alpha {}", fit.alpha);
        assert!((fit.path_pab["p1"] - 50.0).abs() < 1e-3);
        assert!(fit.mse < 1e-10);
    }

    #[test]
    fn fit_brackets_pab_between_straddling_rates() {
        let samples = vec![
            TrainingSample::new("p", 40.0, 0.98, 100).unwrap(),
            TrainingSample::new("p", 60.0, 0.02, 100).unwrap(),
        ];
        let fit = fit(&samples, 0.02).unwrap();
        let y = fit.path_pab["p"];
        assert!(y > 40.0 && y < 60.0, "pab {y}");
    }

    #[test]
    fn fit_is_shift_invariant_in_alpha() {
        let base = synthesize(0.28, 50.0, "p1");
        let shifted: Vec<TrainingSample> = base
            .iter()
            .map(|s| TrainingSample::new("p1", s.rate + 17.0, s.frequency, s.count).unwrap())
            .collect();
        let a = fit(&base, 0.02).unwrap().alpha;
        let b = fit(&shifted, 0.02).unwrap().alpha;
        assert!((a - b).abs() < 1e-6, "alpha {a} vs {b}");
    }

    #[test]
    fn fit_flags_degenerate_data() {
        let samples = vec![
            TrainingSample::new("p", 10.0, 0.5, 10).unwrap(),
            TrainingSample::new("p", 20.0, 0.5, 10).unwrap(),
        ];
        assert!(matches!(
            fit(&samples, 0.02),
            Err(LikelihoodError::NonIdentifiable(_))
        ));
    }

    #[test]
    fn fit_requires_two_rates_per_path() {
        let samples = vec![TrainingSample::new("p", 10.0, 0.4, 10).unwrap()];
        assert!(fit(&samples, 0.02).is_err());
    }

    #[test]
    fn training_csv_round_trip() {
        let text = "path_id,rate_mbps,success_count,total_count\np1,40,490,500\np1,60,10,500\n";
        let samples = read_training_csv(text.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].path, "p1");
        assert_abs_diff_eq!(samples[0].frequency, 0.98, epsilon = 1e-15);
        assert_eq!(samples[1].count, 500);
    }

    #[test]
    fn training_csv_rejects_bad_counts() {
        assert!(read_training_csv("p1,40,600,500\n".as_bytes()).is_err());
    }

    #[test]
    fn model_serde_round_trip() {
        let m = LikelihoodModel::new(0.28, 0.02, 0.9).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: LikelihoodModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(back.gamma_shift() > 0.0);
    }
}
