//! A metered oracle behind a TCP socket.
//!
//! # Protocol `ZOG/1`
//!
//! On connect the server sends the greeting line `ZOG/1`. After that the
//! client sends one JSON object per line and receives exactly one JSON object
//! per line, in order:
//!
//! ```text
//! -> {"id":1,"op":"meta"}
//! <- {"id":1,"input_dim":64,"num_classes":10,"used":0,"budget":1000000}
//! -> {"id":2,"op":"logits","x":[5.0000000000000000e-1, ...]}
//! <- {"id":2,"logits":[...],"used":1}
//! <- {"id":3,"error":"budget_exhausted"}
//! ```
//!
//! Error codes: `bad_request` (unparseable line, unknown op, missing `x`),
//! `bad_dim` (wrong input length), `budget_exhausted`, `busy` (connection
//! limit reached; the server then closes the socket) and `internal`.
//!
//! Reals are written with 17 significant digits, which round-trips every
//! `f64` exactly. The server keeps one ledger for all connections; refused
//! requests never reach the model.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::mlp::MlpModel;
use crate::oracle::{Classifier, Oracle, OracleError, QueryLedger};

pub const GREETING: &str = "ZOG/1";
/// Longest accepted request line in bytes.
pub const MAX_LINE_BYTES: usize = 16 << 20;

const POLL_INTERVAL: Duration = Duration::from_millis(25);
const CLIENT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub id: u64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub used: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    fn error(id: Option<u64>, code: &str) -> Self {
        Self {
            id,
            error: Some(code.to_string()),
            ..Self::default()
        }
    }
}

/// JSON formatter writing reals as `{:.16e}` (17 significant digits).
struct PreciseFloats;

impl serde_json::ser::Formatter for PreciseFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Encodes `value` as one protocol line, newline included.
pub fn encode_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PreciseFloats);
    value.serialize(&mut ser).expect("wire types serialize");
    out.push(b'\n');
    out
}

/// A bound oracle server; call [`OracleServer::serve`] or [`OracleServer::spawn`].
pub struct OracleServer {
    listener: TcpListener,
    model: Arc<MlpModel>,
    ledger: Arc<QueryLedger>,
    max_connections: usize,
    shutdown: Arc<AtomicBool>,
}

impl OracleServer {
    pub fn bind(
        model: MlpModel,
        addr: impl ToSocketAddrs,
        budget: u64,
        max_connections: usize,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            model: Arc::new(model),
            ledger: Arc::new(QueryLedger::new(budget)),
            max_connections: max_connections.max(1),
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn ledger(&self) -> Arc<QueryLedger> {
        Arc::clone(&self.ledger)
    }

    /// Setting the flag stops accepting; open connections finish the request
    /// in flight and close.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    /// Serves until the shutdown flag is set, then waits for connections to drain.
    pub fn serve(self) -> io::Result<()> {
        info!(addr = ?self.listener.local_addr()?, budget = self.ledger.budget(), "serving");
        let active = Arc::new(AtomicUsize::new(0));
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !self.shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    workers.retain(|h| !h.is_finished());
                    if active.load(Ordering::SeqCst) >= self.max_connections {
                        warn!(%peer, "connection limit reached");
                        let _ = refuse_busy(stream);
                        continue;
                    }
                    active.fetch_add(1, Ordering::SeqCst);
                    let conn = Connection {
                        model: Arc::clone(&self.model),
                        ledger: Arc::clone(&self.ledger),
                        shutdown: Arc::clone(&self.shutdown),
                    };
                    let active = Arc::clone(&active);
                    workers.push(thread::spawn(move || {
                        if let Err(e) = conn.run(stream) {
                            debug!(%peer, error = %e, "connection closed with error");
                        }
                        active.fetch_sub(1, Ordering::SeqCst);
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
                Err(e) => warn!(error = %e, "accept failed"),
            }
        }
        for handle in workers {
            let _ = handle.join();
        }
        info!(used = self.ledger.used(), "server stopped");
        Ok(())
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> io::Result<RunningServer> {
        let addr = self.local_addr()?;
        let shutdown = self.shutdown_flag();
        let ledger = self.ledger();
        let handle = thread::spawn(move || self.serve());
        Ok(RunningServer {
            addr,
            shutdown,
            ledger,
            handle: Some(handle),
        })
    }
}

fn refuse_busy(mut stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.write_all(format!("{GREETING}\n").as_bytes())?;
    stream.write_all(&encode_line(&WireResponse::error(None, "busy")))
}

/// Handle to a server started with [`OracleServer::spawn`]; stops it on drop.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    ledger: Arc<QueryLedger>,
    handle: Option<JoinHandle<io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> io::Result<()> {
        self.shutdown.store(true, Ordering::SeqCst);
        match self.handle.take() {
            Some(h) => h
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

struct Connection {
    model: Arc<MlpModel>,
    ledger: Arc<QueryLedger>,
    shutdown: Arc<AtomicBool>,
}

impl Connection {
    fn run(&self, stream: TcpStream) -> io::Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(POLL_INTERVAL))?;
        let mut writer = stream.try_clone()?;
        writer.write_all(format!("{GREETING}\n").as_bytes())?;
        let mut reader = BufReader::new(stream);
        let mut line = Vec::new();
        loop {
            match reader.read_until(b'\n', &mut line) {
                Ok(0) => return Ok(()),
                Ok(_) if line.ends_with(b"\n") => {
                    let response = self.handle(&line);
                    writer.write_all(&encode_line(&response))?;
                    line.clear();
                }
                // EOF after a partial line.
                Ok(_) => return Ok(()),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if self.shutdown.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                }
                Err(e) => return Err(e),
            }
            if line.len() > MAX_LINE_BYTES {
                writer.write_all(&encode_line(&WireResponse::error(None, "bad_request")))?;
                return Ok(());
            }
        }
    }

    fn handle(&self, line: &[u8]) -> WireResponse {
        let request: WireRequest = match serde_json::from_slice(line) {
            Ok(r) => r,
            Err(_) => {
                let id = serde_json::from_slice::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()));
                return WireResponse::error(id, "bad_request");
            }
        };
        let id = Some(request.id);
        match (request.op.as_str(), request.x) {
            ("meta", None) => WireResponse {
                id,
                input_dim: Some(self.model.input_dim()),
                num_classes: Some(self.model.num_classes()),
                used: Some(self.ledger.used()),
                budget: Some(self.ledger.budget()),
                ..WireResponse::default()
            },
            ("logits", Some(x)) => {
                if x.len() != self.model.input_dim() {
                    return WireResponse::error(id, "bad_dim");
                }
                if self.ledger.try_charge().is_err() {
                    return WireResponse::error(id, "budget_exhausted");
                }
                let logits = self.model.forward(&x);
                if logits.iter().any(|v| !v.is_finite()) {
                    return WireResponse::error(id, "internal");
                }
                WireResponse {
                    id,
                    logits: Some(logits),
                    used: Some(self.ledger.used()),
                    ..WireResponse::default()
                }
            }
            _ => WireResponse::error(id, "bad_request"),
        }
    }
}

/// An [`Oracle`] backed by a remote server.
///
/// The ledger mirrors the server's global count, refreshed from every
/// response. The connection is serialized, so the client reports itself as
/// not concurrency-safe.
pub struct RemoteOracle {
    conn: Mutex<ClientConn>,
    input_dim: usize,
    num_classes: usize,
    ledger: QueryLedger,
}

struct ClientConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

fn transport(e: impl std::fmt::Display) -> OracleError {
    OracleError::Transport(e.to_string())
}

impl ClientConn {
    fn call(&mut self, op: &str, x: Option<&[f64]>) -> Result<WireResponse, OracleError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = WireRequest {
            id,
            op: op.to_string(),
            x: x.map(<[f64]>::to_vec),
        };
        self.writer.write_all(&encode_line(&request)).map_err(transport)?;
        let mut line = String::new();
        if self.reader.read_line(&mut line).map_err(transport)? == 0 {
            return Err(transport("server closed the connection"));
        }
        let response: WireResponse = serde_json::from_str(&line).map_err(transport)?;
        if response.id != Some(id) {
            if let Some(code) = response.error {
                return Err(OracleError::Remote(code));
            }
            return Err(transport(format!("response id {:?} for request {id}", response.id)));
        }
        Ok(response)
    }
}

impl RemoteOracle {
    /// Connects, checks the greeting and reads the model shape and ledger.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, OracleError> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(transport)?.collect();
        let mut last_err = transport("address resolved to nothing");
        let stream = addrs
            .iter()
            .find_map(|a| match TcpStream::connect_timeout(a, Duration::from_secs(5)) {
                Ok(s) => Some(s),
                Err(e) => {
                    last_err = transport(e);
                    None
                }
            })
            .ok_or(last_err)?;
        stream.set_read_timeout(Some(CLIENT_TIMEOUT)).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let writer = stream.try_clone().map_err(transport)?;
        let mut conn = ClientConn {
            reader: BufReader::new(stream),
            writer,
            next_id: 1,
        };
        let mut greeting = String::new();
        conn.reader.read_line(&mut greeting).map_err(transport)?;
        if greeting.trim_end() != GREETING {
            return Err(transport(format!("unexpected greeting {greeting:?}")));
        }
        let meta = conn.call("meta", None)?;
        if let Some(code) = meta.error {
            return Err(OracleError::Remote(code));
        }
        let missing = || transport("incomplete meta response");
        Ok(Self {
            input_dim: meta.input_dim.ok_or_else(missing)?,
            num_classes: meta.num_classes.ok_or_else(missing)?,
            ledger: QueryLedger::with_used(
                meta.used.ok_or_else(missing)?,
                meta.budget.ok_or_else(missing)?,
            ),
            conn: Mutex::new(conn),
        })
    }

    /// Re-reads the server ledger.
    pub fn refresh(&self) -> Result<u64, OracleError> {
        let meta = self.lock().call("meta", None)?;
        let used = meta.used.ok_or_else(|| transport("incomplete meta response"))?;
        self.ledger.sync_to(used);
        Ok(used)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ClientConn> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Oracle for RemoteOracle {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn concurrent_safe(&self) -> bool {
        false
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        if x.len() != self.input_dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::Remote("non-finite input cannot be encoded".into()));
        }
        let response = self.lock().call("logits", Some(x))?;
        match response.error.as_deref() {
            None => {}
            Some("budget_exhausted") => {
                return Err(OracleError::BudgetExhausted {
                    used: self.ledger.used(),
                    budget: self.ledger.budget(),
                })
            }
            Some("bad_dim") => {
                return Err(OracleError::DimensionMismatch {
                    expected: self.input_dim,
                    got: x.len(),
                })
            }
            Some(code) => return Err(OracleError::Remote(code.to_string())),
        }
        match (response.logits, response.used) {
            (Some(logits), Some(used)) if logits.len() == self.num_classes => {
                self.ledger.sync_to(used);
                Ok(logits)
            }
            _ => Err(transport("malformed logits response")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_are_written_with_17_digits() {
        let line = encode_line(&WireResponse {
            id: Some(1),
            logits: Some(vec![0.1, -2.5, 0.0, 1e-300]),
            ..WireResponse::default()
        });
        let text = String::from_utf8(line).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("-2.5000000000000000e0"), "{text}");
        assert!(text.ends_with('\n') && text.matches('\n').count() == 1);
        let back: WireResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.logits.unwrap(), vec![0.1, -2.5, 0.0, 1e-300]);
    }

    #[test]
    fn request_shape() {
        let line = encode_line(&WireRequest { id: 7, op: "meta".into(), x: None });
        assert_eq!(line, b"{\"id\":7,\"op\":\"meta\"}\n");
    }
}
