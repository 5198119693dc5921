//! Harness side of the simulator sockets.
//!
//! A [`SimLink`] owns one data and one management connection. After sending
//! frames, [`SimLink::settle`] polls `STAT` until the ECU has consumed every
//! frame this link sent, then reads exactly the response lines that were
//! produced. Silence is therefore observed exactly instead of being guessed
//! from a timeout; the timeout only bounds how long the ECU may take.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::ecu::{FUNCTIONAL_ID, SVC_TESTER_PRESENT};
use super::frame::{Frame, FrameError};
use super::server::SimEndpoint;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("SUT unreachable at {endpoint}: {source}")]
    Unreachable {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("transport fault: {0}")]
    Io(#[from] io::Error),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("management channel refused `{command}`: {reply}")]
    Management { command: String, reply: String },
    #[error("SUT sent an undecodable frame: {0}")]
    Frame(#[from] FrameError),
}

pub struct SimLink {
    endpoint: SimEndpoint,
    data_rx: BufReader<TcpStream>,
    data_tx: TcpStream,
    mgmt_rx: BufReader<TcpStream>,
    mgmt_tx: TcpStream,
    base_frames: u64,
    base_responses: u64,
    sent: u64,
    received: u64,
    timeout: Duration,
}

impl SimLink {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

    pub fn connect(endpoint: SimEndpoint) -> Result<Self, LinkError> {
        Self::connect_with_timeout(endpoint, Self::DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: SimEndpoint, timeout: Duration) -> Result<Self, LinkError> {
        let open = |addr| {
            TcpStream::connect_timeout(&addr, timeout).map_err(|source| LinkError::Unreachable {
                endpoint: endpoint.to_string(),
                source,
            })
        };
        let data = open(endpoint.data)?;
        let mgmt = open(endpoint.mgmt)?;
        for s in [&data, &mgmt] {
            s.set_nodelay(true)?;
            s.set_read_timeout(Some(timeout))?;
        }
        let mut link = Self {
            endpoint,
            data_rx: BufReader::new(data.try_clone()?),
            data_tx: data,
            mgmt_rx: BufReader::new(mgmt.try_clone()?),
            mgmt_tx: mgmt,
            base_frames: 0,
            base_responses: 0,
            sent: 0,
            received: 0,
            timeout,
        };
        let (frames, responses) = link.stat()?;
        link.base_frames = frames;
        link.base_responses = responses;
        Ok(link)
    }

    pub fn endpoint(&self) -> SimEndpoint {
        self.endpoint
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn set_timeout(&mut self, timeout: Duration) -> Result<(), LinkError> {
        self.timeout = timeout;
        self.data_tx.set_read_timeout(Some(timeout))?;
        self.mgmt_tx.set_read_timeout(Some(timeout))?;
        Ok(())
    }

    /// Frames written through this link since it was opened.
    pub fn frames_sent(&self) -> u64 {
        self.sent
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), LinkError> {
        let mut line = frame.to_wire();
        line.push('\n');
        self.data_tx.write_all(line.as_bytes())?;
        self.sent += 1;
        Ok(())
    }

    /// Waits until every sent frame is processed and returns the responses
    /// produced since the previous settle.
    pub fn settle(&mut self) -> Result<Vec<Frame>, LinkError> {
        let start = Instant::now();
        let mut spins = 0u32;
        let responses = loop {
            let (frames, responses) = self.stat()?;
            if frames >= self.base_frames + self.sent {
                break responses;
            }
            if start.elapsed() > self.timeout {
                return Err(LinkError::Timeout("the SUT to consume sent frames"));
            }
            spins += 1;
            if spins > 8 {
                std::thread::sleep(Duration::from_micros(50));
            } else {
                std::thread::yield_now();
            }
        };
        let pending = responses.saturating_sub(self.base_responses + self.received);
        let mut out = Vec::with_capacity(pending as usize);
        let mut line = String::new();
        for _ in 0..pending {
            line.clear();
            read_line(&mut self.data_rx, &mut line, "a response frame")?;
            out.push(Frame::parse_wire(&line)?);
            self.received += 1;
        }
        Ok(out)
    }

    /// Sends one frame and returns its responses plus the settle latency.
    pub fn exchange(&mut self, frame: &Frame) -> Result<(Vec<Frame>, Duration), LinkError> {
        let start = Instant::now();
        self.send(frame)?;
        let rx = self.settle()?;
        Ok((rx, start.elapsed()))
    }

    /// Tester-present liveness probe.
    pub fn probe_alive(&mut self) -> Result<bool, LinkError> {
        let probe = Frame::new(FUNCTIONAL_ID, vec![0x01, SVC_TESTER_PRESENT]).expect("valid probe");
        let (rx, _) = self.exchange(&probe)?;
        Ok(rx.iter().any(|r| r.data() == [0x01, 0x7E]))
    }

    /// One management round trip. Pending data traffic is settled first so
    /// that the command is ordered after it; unread responses are discarded.
    pub fn command(&mut self, command: &str) -> Result<String, LinkError> {
        self.settle()?;
        self.raw_command(command)
    }

    fn raw_command(&mut self, command: &str) -> Result<String, LinkError> {
        self.mgmt_tx.write_all(format!("{command}\n").as_bytes())?;
        let mut line = String::new();
        read_line(&mut self.mgmt_rx, &mut line, "a management reply")?;
        let reply = line.trim().to_string();
        if let Some(reason) = reply.strip_prefix("ERR") {
            return Err(LinkError::Management {
                command: command.split(' ').next().unwrap_or_default().to_string(),
                reply: reason.trim().to_string(),
            });
        }
        Ok(reply)
    }

    fn stat(&mut self) -> Result<(u64, u64), LinkError> {
        let reply = self.raw_command("STAT")?;
        let mut parts = reply.split_whitespace().skip(1).map(str::parse::<u64>);
        match (parts.next(), parts.next()) {
            (Some(Ok(f)), Some(Ok(r))) => Ok((f, r)),
            _ => Err(LinkError::Management {
                command: "STAT".into(),
                reply,
            }),
        }
    }

    pub fn dump(&mut self) -> Result<String, LinkError> {
        self.command("DUMP")
    }

    pub fn load(&mut self, blob: &str) -> Result<(), LinkError> {
        self.command(&format!("LOAD {blob}")).map(drop)
    }

    pub fn reset(&mut self) -> Result<(), LinkError> {
        self.command("RESET").map(drop)
    }

    pub fn configure(&mut self, key: &str, value: &str) -> Result<(), LinkError> {
        self.command(&format!("CONFIG {key}={value}")).map(drop)
    }
}

fn read_line(rx: &mut BufReader<TcpStream>, buf: &mut String, what: &'static str) -> Result<(), LinkError> {
    match rx.read_line(buf) {
        Ok(0) => Err(LinkError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))),
        Ok(_) => Ok(()),
        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            Err(LinkError::Timeout(what))
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sut_sim::{SimConfig, SimServer};

    fn f(s: &str) -> Frame {
        Frame::parse_wire(s).unwrap()
    }

    #[test]
    fn exchange_collects_exact_responses() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        let mut link = SimLink::connect(sim.endpoint()).unwrap();
        let (rx, _) = link.exchange(&f("7df#02010d")).unwrap();
        assert_eq!(rx, vec![f("7e8#03410d32")]);
        let (rx, _) = link.exchange(&f("123#02010d")).unwrap();
        assert!(rx.is_empty());
        assert!(link.probe_alive().unwrap());
    }

    #[test]
    fn batched_sends_settle_together() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        let mut link = SimLink::connect(sim.endpoint()).unwrap();
        for _ in 0..20 {
            link.send(&f("7df#013e")).unwrap();
            link.send(&f("7ff#013e")).unwrap();
        }
        assert_eq!(link.settle().unwrap().len(), 20);
        assert!(link.settle().unwrap().is_empty());
    }

    #[test]
    fn crash_is_seen_as_silence() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        let mut link = SimLink::connect(sim.endpoint()).unwrap();
        let snapshot = link.dump().unwrap();
        link.exchange(&f("7df#0901")).unwrap();
        assert!(!link.probe_alive().unwrap());
        link.load(&snapshot).unwrap();
        assert!(link.probe_alive().unwrap());
        assert_eq!(link.dump().unwrap(), snapshot);
    }

    #[test]
    fn second_link_sees_fresh_counters() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        {
            let mut a = SimLink::connect(sim.endpoint()).unwrap();
            a.send(&f("7df#013e")).unwrap();
            a.settle().unwrap();
        }
        let mut b = SimLink::connect(sim.endpoint()).unwrap();
        assert!(b.probe_alive().unwrap());
    }

    #[test]
    fn dead_endpoint_is_unreachable() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        let ep = sim.endpoint();
        sim.shutdown();
        match SimLink::connect_with_timeout(ep, Duration::from_millis(200)) {
            Err(LinkError::Unreachable { .. }) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("connected to a stopped simulator"),
        }
    }

    #[test]
    fn management_errors_surface() {
        let sim = SimServer::spawn(SimConfig::default()).unwrap();
        let mut link = SimLink::connect(sim.endpoint()).unwrap();
        assert!(matches!(link.load("not-base64!"), Err(LinkError::Management { .. })));
        link.configure("speed", "0x20").unwrap();
        let (rx, _) = link.exchange(&f("7df#02010d")).unwrap();
        assert_eq!(rx, vec![f("7e8#03410d20")]);
    }
}
