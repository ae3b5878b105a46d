//! Sender side: paced packet trains and the full train measurement.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use super::receiver::{read_json, send_json, Request, Response};
use super::wire::{encode_packet, ProbeHeader};
use super::{
    compute_output_rate, median_rate, Measurement, ProbeConfig, ProbeError, Prober, TrainRate,
};

/// Departure log of one sent train.
#[derive(Debug, Clone)]
pub struct SenderLog {
    pub train: u32,
    pub departures_ns: Vec<u64>,
    pub packets_sent: u32,
}

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const CONTROL_TIMEOUT: Duration = Duration::from_secs(30);

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Sends one train of equally spaced packets at `rate_mbps` over a connected
/// UDP socket. Departures later than the schedule are stamped truthfully;
/// validity is judged on the receiver side from the stamps.
pub fn send_train(
    socket: &UdpSocket,
    rate_mbps: f64,
    train: u32,
    cfg: &ProbeConfig,
    epoch: Instant,
) -> Result<SenderLog, ProbeError> {
    cfg.validate()?;
    let tau_ns = cfg.tau_ns(rate_mbps)?;
    let mut buf = vec![0u8; cfg.packet_size as usize];
    let mut departures = Vec::with_capacity(cfg.train_length as usize);
    let start = Instant::now();

    for seq in 0..cfg.train_length {
        let target = start + Duration::from_nanos(seq as u64 * tau_ns);
        pace_until(target);
        let departure_ns = epoch.elapsed().as_nanos() as u64;
        encode_packet(
            &ProbeHeader {
                train,
                seq,
                total: cfg.train_length,
                departure_ns,
                tau_ns,
            },
            &mut buf,
        )?;
        socket.send(&buf)?;
        departures.push(departure_ns);
    }
    Ok(SenderLog {
        train,
        packets_sent: cfg.train_length,
        departures_ns: departures,
    })
}

/// Sleeps coarsely, then spins for the final stretch; plain sleeping
/// overshoots by more than a typical inter-packet gap.
fn pace_until(target: Instant) {
    loop {
        let now = Instant::now();
        if now >= target {
            return;
        }
        let remaining = target - now;
        if remaining > Duration::from_micros(500) {
            std::thread::sleep(remaining - Duration::from_micros(300));
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Runs a full measurement against a receiver agent: `n_trains` trains, one
/// output rate each, median thresholded at `rate - epsilon`. A void train
/// (too few packets, or every packet invalid) is retried once; if the retry
/// is void too the measurement proceeds with the remaining trains.
pub fn train_measure(
    control: impl ToSocketAddrs,
    path: &str,
    rate_mbps: f64,
    cfg: &ProbeConfig,
) -> Result<Measurement, ProbeError> {
    cfg.validate()?;
    if !(rate_mbps > 0.0) {
        return Err(ProbeError::InvalidRate(rate_mbps));
    }
    let control_addr = control
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| ProbeError::Protocol("control address did not resolve".into()))?;
    let stream = TcpStream::connect_timeout(&control_addr, CONNECT_TIMEOUT)?;
    stream.set_read_timeout(Some(CONTROL_TIMEOUT))?;
    stream.set_write_timeout(Some(CONTROL_TIMEOUT))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);

    let session = SESSION_COUNTER.fetch_add(1, Ordering::Relaxed);
    send_json(
        &mut writer,
        &Request::Start {
            session,
            packet_size: cfg.packet_size,
            train_length: cfg.train_length,
            n_trains: cfg.n_trains,
        },
    )?;
    let udp_port = match read_json::<Response>(&mut reader)? {
        Response::Started { udp_port } => udp_port,
        other => {
            return Err(ProbeError::Protocol(format!(
                "expected started reply, got {other:?}"
            )))
        }
    };
    let data_addr = SocketAddr::new(control_addr.ip(), udp_port);
    let udp = UdpSocket::bind(match data_addr {
        SocketAddr::V4(_) => "0.0.0.0:0",
        SocketAddr::V6(_) => "[::]:0",
    })?;
    udp.connect(data_addr)?;

    let epoch = Instant::now();
    let tau_ns = cfg.tau_ns(rate_mbps)?;
    let train_duration_ms = (cfg.train_length as u64 * tau_ns) / 1_000_000;
    let wait_ms = train_duration_ms + 1_000;

    let mut packets_sent = 0u64;
    let mut train_rates = Vec::new();
    let mut valid_counts = Vec::new();
    let mut next_train_id = 0u32;

    for _ in 0..cfg.n_trains {
        let mut outcome: Option<TrainRate> = None;
        for _attempt in 0..2 {
            let id = next_train_id;
            next_train_id += 1;
            let log = send_train(&udp, rate_mbps, id, cfg, epoch)?;
            packets_sent += log.packets_sent as u64;
            send_json(
                &mut writer,
                &Request::Fetch {
                    session,
                    train: id,
                    wait_ms,
                },
            )?;
            let received = match read_json::<Response>(&mut reader)? {
                Response::Log { log } => log,
                other => {
                    return Err(ProbeError::Protocol(format!(
                        "expected log reply, got {other:?}"
                    )))
                }
            };
            match compute_output_rate(&received, cfg.invalid_slack) {
                Ok(r) => {
                    outcome = Some(r);
                    break;
                }
                Err(ProbeError::VoidTrain(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if let Some(r) = outcome {
            train_rates.push(r.rate_mbps);
            valid_counts.push(r.valid);
        }
    }

    send_json(&mut writer, &Request::End { session })?;
    let _ = read_json::<Response>(&mut reader);

    if train_rates.is_empty() {
        return Err(ProbeError::MeasurementFailed(format!(
            "all {} trains void on path {path}",
            cfg.n_trains
        )));
    }
    let median = median_rate(&train_rates);
    Ok(Measurement {
        path: path.to_owned(),
        rate: rate_mbps,
        z: median >= rate_mbps - cfg.epsilon,
        train_rates,
        valid_counts,
        bytes_sent: packets_sent * cfg.packet_size as u64,
        timestamp_ns: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_nanos() as u64,
    })
}

/// Prober backed by real packet trains; maps each path id to the control
/// address of the receiver agent at the path's destination.
#[derive(Debug, Clone)]
pub struct UdpProber {
    endpoints: BTreeMap<String, String>,
    cfg: ProbeConfig,
}

impl UdpProber {
    pub fn new(endpoints: BTreeMap<String, String>, cfg: ProbeConfig) -> Result<Self, ProbeError> {
        cfg.validate()?;
        Ok(Self { endpoints, cfg })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: ProbeConfig) -> Result<(), ProbeError> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }
}

impl Prober for UdpProber {
    fn measure(&mut self, path: &str, rate: f64) -> Result<Measurement, ProbeError> {
        let control = self
            .endpoints
            .get(path)
            .ok_or_else(|| ProbeError::UnknownPath(path.to_owned()))?;
        train_measure(control.as_str(), path, rate, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn send_train_rejects_zero_rate() {
        let udp = UdpSocket::bind("127.0.0.1:0").unwrap();
        udp.connect(udp.local_addr().unwrap()).unwrap();
        let err = send_train(&udp, 0.0, 0, &ProbeConfig::default(), Instant::now());
        assert!(matches!(err, Err(ProbeError::InvalidRate(_))));
    }

    #[test]
    fn send_train_counts_packets_and_paces() {
        // 75 packets at a high rate finish quickly; departures are monotone.
        let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
        let udp = UdpSocket::bind("127.0.0.1:0").unwrap();
        udp.connect(sink.local_addr().unwrap()).unwrap();
        let cfg = ProbeConfig {
            train_length: 75,
            ..Default::default()
        };
        let log = send_train(&udp, 400.0, 3, &cfg, Instant::now()).unwrap();
        assert_eq!(log.packets_sent, 75);
        assert!(log.departures_ns.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn prober_rejects_unknown_path() {
        let mut prober = UdpProber::new(BTreeMap::new(), ProbeConfig::default()).unwrap();
        assert!(matches!(
            prober.measure("p1", 10.0),
            Err(ProbeError::UnknownPath(_))
        ));
    }
}
