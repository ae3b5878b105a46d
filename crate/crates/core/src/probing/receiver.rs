//! Receiver agent: captures probe trains over UDP and reports per-train
//! logs over a TCP control channel.
//!
//! One control connection drives one probing session. The sender issues
//! `start` (the receiver binds a fresh UDP socket and begins capturing),
//! any number of `fetch` requests to collect completed train logs, and
//! `end`. Arrival timestamps come from the receiver's monotonic clock;
//! departure timestamps are the sender stamps carried in the packets, so no
//! clock synchronization is needed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire;
use super::{PacketRecord, ProbeError, TrainLog};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub(crate) enum Request {
    Start {
        session: u64,
        packet_size: u32,
        train_length: u32,
        n_trains: u32,
    },
    Fetch {
        session: u64,
        train: u32,
        wait_ms: u64,
    },
    End {
        session: u64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub(crate) enum Response {
    Started { udp_port: u16 },
    Log { log: TrainLog },
    Ended,
    Error { message: String },
}

pub(crate) fn send_json<T: Serialize>(stream: &mut TcpStream, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_string(value).expect("control message serializes");
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    stream.flush()
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(
    reader: &mut impl BufRead,
) -> Result<T, ProbeError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(ProbeError::Protocol("connection closed".into()));
    }
    serde_json::from_str(line.trim_end()).map_err(|e| ProbeError::Protocol(e.to_string()))
}

/// Running receiver bound to a control address; shuts down on drop.
pub struct ReceiverHandle {
    control_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ReceiverHandle {
    /// Starts a receiver in background threads and returns once the control
    /// socket is bound. Use port 0 to let the OS pick.
    pub fn spawn(listen: SocketAddr) -> Result<Self, ProbeError> {
        let listener = TcpListener::bind(listen)?;
        let control_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = shutdown.clone();
        let thread = std::thread::spawn(move || accept_loop(listener, flag));
        Ok(Self {
            control_addr,
            shutdown,
            thread: Some(thread),
        })
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    /// Stops the accept loop and joins it.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ReceiverHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Runs the receiver in the foreground until the process is killed.
pub fn run_receiver(listen: SocketAddr) -> Result<(), ProbeError> {
    let handle = ReceiverHandle::spawn(listen)?;
    eprintln!("receiver listening on {}", handle.control_addr());
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn accept_loop(listener: TcpListener, shutdown: Arc<AtomicBool>) {
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                workers.push(std::thread::spawn(move || {
                    let _ = handle_session(stream);
                }));
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => break,
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

struct Capture {
    stop: Arc<AtomicBool>,
    trains: Arc<Mutex<BTreeMap<u32, TrainLog>>>,
    thread: JoinHandle<()>,
}

fn handle_session(stream: TcpStream) -> Result<(), ProbeError> {
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut capture: Option<Capture> = None;
    let mut train_length = 0u32;

    loop {
        let request: Request = match read_json(&mut reader) {
            Ok(r) => r,
            Err(_) => break, // sender went away; clean up
        };
        match request {
            Request::Start {
                packet_size,
                train_length: len,
                ..
            } => {
                let local_ip = writer.local_addr()?.ip();
                let udp = UdpSocket::bind(SocketAddr::new(local_ip, 0))?;
                let udp_port = udp.local_addr()?.port();
                udp.set_read_timeout(Some(Duration::from_millis(50)))?;
                let stop = Arc::new(AtomicBool::new(false));
                let trains = Arc::new(Mutex::new(BTreeMap::new()));
                let thread = {
                    let stop = stop.clone();
                    let trains = trains.clone();
                    std::thread::spawn(move || capture_loop(udp, packet_size, stop, trains))
                };
                train_length = len;
                capture = Some(Capture {
                    stop,
                    trains,
                    thread,
                });
                send_json(&mut writer, &Response::Started { udp_port })?;
            }
            Request::Fetch {
                train, wait_ms, ..
            } => {
                let Some(cap) = capture.as_ref() else {
                    send_json(
                        &mut writer,
                        &Response::Error {
                            message: "fetch before start".into(),
                        },
                    )?;
                    continue;
                };
                let deadline = Instant::now() + Duration::from_millis(wait_ms);
                let log = loop {
                    {
                        let trains = cap.trains.lock().unwrap();
                        if let Some(log) = trains.get(&train) {
                            if log.packets.len() as u32 >= train_length {
                                break Some(log.clone());
                            }
                        }
                    }
                    if Instant::now() >= deadline {
                        break cap.trains.lock().unwrap().get(&train).cloned();
                    }
                    std::thread::sleep(Duration::from_millis(5));
                };
                match log {
                    Some(log) => send_json(&mut writer, &Response::Log { log })?,
                    None => send_json(
                        &mut writer,
                        &Response::Log {
                            log: TrainLog {
                                train,
                                tau_ns: 0,
                                packet_size: 0,
                                packets: Vec::new(),
                            },
                        },
                    )?,
                }
            }
            Request::End { .. } => {
                send_json(&mut writer, &Response::Ended)?;
                break;
            }
        }
    }

    if let Some(cap) = capture {
        cap.stop.store(true, Ordering::SeqCst);
        let _ = cap.thread.join();
    }
    Ok(())
}

fn capture_loop(
    udp: UdpSocket,
    packet_size: u32,
    stop: Arc<AtomicBool>,
    trains: Arc<Mutex<BTreeMap<u32, TrainLog>>>,
) {
    let epoch = Instant::now();
    let mut buf = vec![0u8; packet_size.max(wire::HEADER_LEN as u32) as usize + 64];
    while !stop.load(Ordering::SeqCst) {
        let n = match udp.recv(&mut buf) {
            Ok(n) => n,
            Err(ref e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(_) => break,
        };
        let arrival_ns = epoch.elapsed().as_nanos() as u64;
        let Ok(header) = wire::decode_packet(&buf[..n]) else {
            continue;
        };
        let mut trains = trains.lock().unwrap();
        let log = trains.entry(header.train).or_insert_with(|| TrainLog {
            train: header.train,
            tau_ns: header.tau_ns,
            packet_size,
            packets: Vec::new(),
        });
        log.packets.push(PacketRecord {
            seq: header.seq,
            departure_ns: header.departure_ns,
            arrival_ns,
        });
    }
}
