//! Socket front-end for [`EcuState`].
//!
//! Two TCP listeners: the data endpoint takes newline delimited wire frames and
//! answers with wire frames, the management endpoint takes line commands:
//!
//! | command        | reply                          |
//! |----------------|--------------------------------|
//! | `DUMP`         | base64 state blob              |
//! | `LOAD <blob>`  | `OK`                           |
//! | `RESET`        | `OK`                           |
//! | `CONFIG k=v`   | `OK`                           |
//! | `STAT`         | `STAT <frames> <responses>`    |
//!
//! `STAT` reports how many data lines have been processed and how many
//! response lines written. Harnesses use it to know when the ECU has settled.
//! Errors come back as `ERR <reason>`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::ecu::{EcuState, SimConfig};
use super::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEndpoint {
    pub data: SocketAddr,
    pub mgmt: SocketAddr,
}

impl SimEndpoint {
    /// Parses `host:port,host:port` (data first).
    pub fn parse(s: &str) -> Option<Self> {
        let (d, m) = s.split_once(',')?;
        Some(Self {
            data: d.trim().to_socket_addrs().ok()?.next()?,
            mgmt: m.trim().to_socket_addrs().ok()?.next()?,
        })
    }
}

impl std::fmt::Display for SimEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.data, self.mgmt)
    }
}

struct Core {
    ecu: EcuState,
    frames: u64,
    responses: u64,
}

struct Shared {
    core: Mutex<Core>,
    stop: AtomicBool,
    streams: Mutex<Vec<TcpStream>>,
}

/// A running simulator instance. Dropping it stops all threads.
pub struct SimServer {
    endpoint: SimEndpoint,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl SimServer {
    /// Binds both endpoints on an ephemeral localhost port.
    pub fn spawn(config: SimConfig) -> io::Result<Self> {
        serve(config, "127.0.0.1:0", "127.0.0.1:0")
    }

    pub fn endpoint(&self) -> SimEndpoint {
        self.endpoint
    }

    /// Snapshot of the ECU state, bypassing the sockets. Test helper.
    pub fn state(&self) -> EcuState {
        self.shared.core.lock().unwrap().ecu.clone()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for s in self.shared.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        // wake the accept loops
        let _ = TcpStream::connect(self.endpoint.data);
        let _ = TcpStream::connect(self.endpoint.mgmt);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Starts a simulator on the given endpoints.
pub fn serve(
    config: SimConfig,
    data_endpoint: impl ToSocketAddrs,
    mgmt_endpoint: impl ToSocketAddrs,
) -> io::Result<SimServer> {
    let data = TcpListener::bind(data_endpoint)?;
    let mgmt = TcpListener::bind(mgmt_endpoint)?;
    let endpoint = SimEndpoint {
        data: data.local_addr()?,
        mgmt: mgmt.local_addr()?,
    };
    let shared = Arc::new(Shared {
        core: Mutex::new(Core {
            ecu: EcuState::new(config),
            frames: 0,
            responses: 0,
        }),
        stop: AtomicBool::new(false),
        streams: Mutex::new(Vec::new()),
    });
    let threads = vec![
        accept_loop(data, shared.clone(), serve_data),
        accept_loop(mgmt, shared.clone(), serve_mgmt),
    ];
    Ok(SimServer {
        endpoint,
        shared,
        threads,
    })
}

fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    handler: fn(TcpStream, &Shared) -> io::Result<()>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut workers = Vec::new();
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            {
                // the stop check and the registration share the lock so that
                // shutdown never misses a live connection
                let mut streams = shared.streams.lock().unwrap();
                if shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream.try_clone() {
                    Ok(clone) => streams.push(clone),
                    Err(_) => continue,
                }
            }
            let shared = shared.clone();
            workers.push(std::thread::spawn(move || {
                let _ = handler(stream, &shared);
            }));
        }
        for w in workers {
            let _ = w.join();
        }
    })
}

fn serve_data(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let mut core = shared.core.lock().unwrap();
        let responses = match Frame::parse_wire(&line) {
            Ok(frame) => core.ecu.handle(&frame),
            Err(_) => Vec::new(),
        };
        let mut out = String::new();
        for r in &responses {
            out.push_str(&r.to_wire());
            out.push('\n');
        }
        if !out.is_empty() {
            writer.write_all(out.as_bytes())?;
        }
        core.frames += 1;
        core.responses += responses.len() as u64;
    }
    Ok(())
}

fn serve_mgmt(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let reply = management_command(&mut shared.core.lock().unwrap(), line.trim());
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn management_command(core: &mut Core, line: &str) -> String {
    let (cmd, arg) = line.split_once(' ').unwrap_or((line, ""));
    match cmd {
        "DUMP" => core.ecu.dump(),
        "LOAD" => match EcuState::load(arg) {
            Ok(state) => {
                core.ecu = state;
                "OK".into()
            }
            Err(e) => format!("ERR {e}"),
        },
        "RESET" => {
            core.ecu.reset();
            "OK".into()
        }
        "CONFIG" => {
            let Some((k, v)) = arg.split_once('=') else {
                return "ERR expected CONFIG key=value".into();
            };
            match core.ecu.config.apply(k.trim(), v.trim()) {
                Ok(()) => "OK".into(),
                Err(e) => format!("ERR {e}"),
            }
        }
        "STAT" => format!("STAT {} {}", core.frames, core.responses),
        _ => format!("ERR unknown command `{cmd}`"),
    }
}
