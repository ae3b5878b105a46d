//! Probing: turning (path, rate) requests into binary outcomes.
//!
//! A measurement sends a few equally spaced UDP packet trains at the target
//! rate and checks whether the observed output rate keeps up with the input
//! rate to within `epsilon`. Packets whose departures slipped behind the
//! pacing schedule are excluded before the output rate is computed, as are
//! gaps that span lost packets. The simulated prober short-circuits the
//! network and draws outcomes directly from the likelihood model and a
//! ground-truth PAB assignment.

mod receiver;
mod udp;
mod wire;

pub use receiver::{run_receiver, ReceiverHandle};
pub use udp::{send_train, train_measure, SenderLog, UdpProber};
pub use wire::{decode_packet, encode_packet, ProbeHeader, HEADER_LEN};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::LikelihoodModel;
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
    #[error("probe rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("unknown path '{0}'")]
    UnknownPath(String),
    #[error("train void: {0}")]
    VoidTrain(String),
    #[error("measurement failed: {0}")]
    MeasurementFailed(String),
    #[error("malformed probe packet: {0}")]
    BadPacket(String),
    #[error("control protocol error: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Packet-train parameters for one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Trains per measurement.
    pub n_trains: u32,
    /// Packets per train.
    pub train_length: u32,
    /// Bytes per packet, including the probe header.
    pub packet_size: u32,
    /// Success margin: outcome is 1 when the output rate is within this many
    /// Mbps of the input rate.
    pub epsilon: f64,
    /// Fraction of the nominal gap a departure may slip before the packet is
    /// declared invalid.
    pub invalid_slack: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_trains: 3,
            train_length: 25,
            packet_size: 1000,
            epsilon: 5.0,
            invalid_slack: 0.1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.n_trains < 1 {
            return Err(ProbeError::InvalidConfig("n_trains must be >= 1".into()));
        }
        if self.train_length < 2 {
            return Err(ProbeError::InvalidConfig("train_length must be >= 2".into()));
        }
        if (self.packet_size as usize) < HEADER_LEN {
            return Err(ProbeError::InvalidConfig(format!(
                "packet_size {} is smaller than the {HEADER_LEN}-byte header",
                self.packet_size
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(ProbeError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.invalid_slack < 0.0 {
            return Err(ProbeError::InvalidConfig("invalid_slack must be >= 0".into()));
        }
        Ok(())
    }

    /// Nominal inter-departure gap achieving `rate_mbps`, in nanoseconds.
    pub fn tau_ns(&self, rate_mbps: f64) -> Result<u64, ProbeError> {
        if !(rate_mbps > 0.0) {
            return Err(ProbeError::InvalidRate(rate_mbps));
        }
        Ok((self.packet_size as f64 * 8.0 * 1000.0 / rate_mbps).round() as u64)
    }

    /// Bytes on the wire for one full measurement.
    pub fn bytes_per_measurement(&self) -> u64 {
        self.n_trains as u64 * self.train_length as u64 * self.packet_size as u64
    }
}

/// One completed measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub path: String,
    /// Probe rate (Mbps).
    pub rate: f64,
    /// Binary outcome: median train output rate within epsilon of the input.
    pub z: bool,
    /// Output rate of each train (Mbps). Empty for simulated probes.
    pub train_rates: Vec<f64>,
    /// Valid-packet count of each train.
    pub valid_counts: Vec<usize>,
    /// Payload bytes actually sent.
    pub bytes_sent: u64,
    /// Wall-clock nanoseconds for real probes; a deterministic sequence
    /// number for simulated ones.
    pub timestamp_ns: u64,
}

/// True link PABs, with derived per-path values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    link_pab: BTreeMap<String, f64>,
    path_pab: BTreeMap<String, f64>,
}

impl GroundTruth {
    /// Binds per-link PABs to a topology; every link must be covered. Each
    /// path PAB is the minimum over its links.
    pub fn from_link_pabs(
        topology: &Topology,
        link_pab: BTreeMap<String, f64>,
    ) -> Result<Self, ProbeError> {
        let mut path_pab = BTreeMap::new();
        for (i, meta) in topology.paths().iter().enumerate() {
            let mut min = f64::INFINITY;
            for j in topology.path_links(i) {
                let id = &topology.links()[j];
                let v = link_pab.get(id).ok_or_else(|| {
                    ProbeError::InvalidConfig(format!("ground truth missing link '{id}'"))
                })?;
                min = min.min(*v);
            }
            path_pab.insert(meta.id.clone(), min);
        }
        Ok(Self { link_pab, path_pab })
    }

    /// Draws each link PAB uniformly from the grid points spaced `step`
    /// apart in `[lo, hi]`.
    pub fn generate_uniform(
        topology: &Topology,
        lo: f64,
        hi: f64,
        step: f64,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        if !(hi > lo) || !(step > 0.0) {
            return Err(ProbeError::InvalidConfig(format!(
                "bad ground-truth range [{lo}, {hi}] step {step}"
            )));
        }
        let levels = ((hi - lo) / step).floor() as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let link_pab = topology
            .links()
            .iter()
            .map(|id| (id.clone(), lo + step * rng.random_range(0..levels) as f64))
            .collect();
        Self::from_link_pabs(topology, link_pab)
    }

    pub fn link_pabs(&self) -> &BTreeMap<String, f64> {
        &self.link_pab
    }

    pub fn path_pab(&self, path: &str) -> Option<f64> {
        self.path_pab.get(path).copied()
    }
}

/// A source of measurements.
pub trait Prober {
    fn measure(&mut self, path: &str, rate: f64) -> Result<Measurement, ProbeError>;
}

/// Prober that draws outcomes from the likelihood model and a ground truth,
/// charging the configured train cost for overhead accounting.
#[derive(Debug, Clone)]
pub struct SimulatedProber {
    ground_truth: GroundTruth,
    model: LikelihoodModel,
    probe: ProbeConfig,
    rng: ChaCha8Rng,
    sequence: u64,
}

impl SimulatedProber {
    pub fn new(
        ground_truth: GroundTruth,
        model: LikelihoodModel,
        probe: ProbeConfig,
        seed: u64,
    ) -> Self {
        Self {
            ground_truth,
            model,
            probe,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sequence: 0,
        }
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.ground_truth
    }
}

impl Prober for SimulatedProber {
    fn measure(&mut self, path: &str, rate: f64) -> Result<Measurement, ProbeError> {
        let pab = self
            .ground_truth
            .path_pab(path)
            .ok_or_else(|| ProbeError::UnknownPath(path.to_owned()))?;
        let p = self.model.success_probability(rate, pab);
        let z = self.rng.random::<f64>() < p;
        let timestamp = self.sequence;
        self.sequence += 1;
        Ok(Measurement {
            path: path.to_owned(),
            rate,
            z,
            train_rates: Vec::new(),
            valid_counts: Vec::new(),
            bytes_sent: self.probe.bytes_per_measurement(),
            timestamp_ns: timestamp,
        })
    }
}

/// Receiver-side record of one probe packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub seq: u32,
    /// Sender departure stamp carried in the packet (sender clock).
    pub departure_ns: u64,
    /// Arrival stamp (receiver clock).
    pub arrival_ns: u64,
}

/// All packets the receiver captured for one train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train: u32,
    pub tau_ns: u64,
    pub packet_size: u32,
    pub packets: Vec<PacketRecord>,
}

/// Output rate of one train plus the size of its valid set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRate {
    pub rate_mbps: f64,
    pub valid: usize,
}

/// Computes the train output rate over the valid set.
///
/// Packet `i > 0` is valid when packet `i - 1` was received and the sender
/// departure gap stayed within `tau * (1 + slack)`; gaps spanning missing
/// sequence numbers drop out with their neighbours. The rate is
/// `|V| * packet_size` over the summed arrival gaps of the valid set.
pub fn compute_output_rate(log: &TrainLog, slack: f64) -> Result<TrainRate, ProbeError> {
    let mut by_seq: BTreeMap<u32, PacketRecord> = BTreeMap::new();
    for p in &log.packets {
        by_seq.entry(p.seq).or_insert(*p);
    }
    if by_seq.len() < 2 {
        return Err(ProbeError::VoidTrain(format!(
            "{} packets received",
            by_seq.len()
        )));
    }
    let limit = log.tau_ns as f64 * (1.0 + slack);
    let mut valid = 0usize;
    let mut gap_sum_ns = 0i128;
    for (&seq, record) in by_seq.iter() {
        if seq == 0 {
            continue;
        }
        let Some(prev) = by_seq.get(&(seq - 1)) else {
            continue;
        };
        let departure_gap = record.departure_ns.saturating_sub(prev.departure_ns) as f64;
        if departure_gap > limit {
            continue;
        }
        valid += 1;
        gap_sum_ns += record.arrival_ns as i128 - prev.arrival_ns as i128;
    }
    if valid == 0 {
        return Err(ProbeError::VoidTrain("all packets invalid".into()));
    }
    if gap_sum_ns <= 0 {
        return Err(ProbeError::VoidTrain("non-positive arrival span".into()));
    }
    let bits = valid as f64 * log.packet_size as f64 * 8.0;
    Ok(TrainRate {
        rate_mbps: bits * 1000.0 / gap_sum_ns as f64,
        valid,
    })
}

/// Median of a set of train rates; the outcome test uses this.
pub fn median_rate(rates: &[f64]) -> f64 {
    let mut sorted = rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
