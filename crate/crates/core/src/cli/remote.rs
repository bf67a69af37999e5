//! Remote vector fields over newline-delimited JSON.
//!
//! Request: `{"t": 0.25, "state": [..], "prompt": null}`. Response: `{"field": [..]}`.
//! The transport is either a child process speaking on stdin/stdout or a TCP
//! connection. Floats travel as shortest round-trip decimals, so a remote field
//! that computes the same arithmetic as an in-process one returns identical bits.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, RemoteError, Result};
use crate::fields::{analytic_marginal_field, InterpolationMarginal, VectorField, VectorFieldHandle};
use crate::state::{GaussianDist, StateVec};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

/// Where the field lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// A command whose stdin/stdout carry the protocol.
    Stdio(Vec<String>),
    /// `host:port`.
    Tcp(String),
}

impl FromStr for Transport {
    type Err = Error;

    /// `tcp:HOST:PORT` or `cmd:PROGRAM ARG ...` (whitespace separated).
    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                return Err(Error::invalid("remote.endpoint", format!("expected tcp:HOST:PORT, got `{s}`")));
            }
            return Ok(Transport::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::invalid("remote.endpoint", "empty command"));
            }
            return Ok(Transport::Stdio(argv));
        }
        Err(Error::invalid(
            "remote.endpoint",
            format!("expected `tcp:HOST:PORT` or `cmd:PROGRAM ...`, got `{s}`"),
        ))
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::Stdio(argv) => write!(f, "cmd:{}", argv.join(" ")),
            Transport::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

/// Connection settings of a remote field, as they appear in run configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// `tcp:HOST:PORT` or `cmd:PROGRAM ARG ...`.
    pub endpoint: String,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Whether concurrent particles may share one connection.
    #[serde(default)]
    pub reentrant: bool,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            prompt: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            reentrant: false,
        }
    }

    pub fn validate(&self) -> Result<Transport> {
        if self.timeout_ms == 0 {
            return Err(Error::invalid("remote.timeout_ms", "must be positive"));
        }
        self.endpoint.parse()
    }
}

#[derive(Serialize)]
struct Request<'a> {
    t: f64,
    state: &'a [f64],
    prompt: Option<&'a str>,
}

/// One open channel to the endpoint. Responses are read on a helper thread so
/// that a silent peer can be abandoned after the timeout.
struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl Connection {
    fn open(transport: &Transport) -> Result<Self> {
        let transport_err = |e: std::io::Error| RemoteError::Transport(format!("{transport}: {e}"));
        match transport {
            Transport::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(transport_err)?;
                let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                })
            }
            Transport::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport_err)?;
                stream.set_nodelay(true).map_err(transport_err)?;
                let read = stream.try_clone().map_err(transport_err)?;
                Ok(Connection {
                    writer: Box::new(stream),
                    lines: spawn_reader(read),
                    child: None,
                })
            }
        }
    }

    fn call(&mut self, request: &str, timeout: Duration) -> std::result::Result<String, RemoteError> {
        let io = |e: std::io::Error| RemoteError::Transport(e.to_string());
        self.writer.write_all(request.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(io(e)),
            Err(RecvTimeoutError::Timeout) => Err(RemoteError::Timeout {
                timeout_ms: timeout.as_millis() as u64,
                request: request.to_string(),
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(RemoteError::Transport("endpoint closed the connection".into()))
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader(read: impl std::io::Read + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(read).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

/// Parses a response line into a field of dimension `expected`.
pub fn decode_response(payload: &str, expected: usize) -> std::result::Result<StateVec, RemoteError> {
    let malformed = |reason: &str| RemoteError::Malformed {
        reason: reason.to_string(),
        payload: payload.to_string(),
    };
    let value: Value = serde_json::from_str(payload).map_err(|e| malformed(&format!("invalid JSON: {e}")))?;
    let field = value
        .get("field")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing array `field`"))?;
    let coords = field
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| malformed("non-numeric entry in `field`")))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    if coords.len() != expected {
        return Err(RemoteError::DimensionMismatch {
            expected,
            found: coords.len(),
            payload: payload.to_string(),
        });
    }
    StateVec::new(coords).map_err(|_| malformed("empty `field`"))
}

/// Encodes one request line (without the trailing newline).
pub fn encode_request(x: &StateVec, t: f64, prompt: Option<&str>) -> Result<String> {
    Ok(serde_json::to_string(&Request {
        t,
        state: x.as_slice(),
        prompt,
    })?)
}

/// A vector field evaluated by an external process or server.
///
/// Without `reentrant`, every concurrently evaluating worker checks out its own
/// connection from a pool, opening a new one when none is idle.
pub struct RemoteFieldEndpoint {
    transport: Transport,
    prompt: Option<String>,
    timeout: Duration,
    reentrant: bool,
    idle: Mutex<Vec<Connection>>,
    label: String,
}

impl RemoteFieldEndpoint {
    pub fn connect(cfg: &RemoteConfig) -> Result<Self> {
        let transport = cfg.validate()?;
        let first = Connection::open(&transport)?;
        Ok(RemoteFieldEndpoint {
            label: format!("remote({transport})"),
            transport,
            prompt: cfg.prompt.clone(),
            timeout: Duration::from_millis(cfg.timeout_ms),
            reentrant: cfg.reentrant,
            idle: Mutex::new(vec![first]),
        })
    }

    pub fn handle(cfg: &RemoteConfig) -> Result<VectorFieldHandle> {
        Ok(Arc::new(Self::connect(cfg)?))
    }

    /// One request/response round trip.
    pub fn eval_remote(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let request = encode_request(x, t, self.prompt.as_deref())?;
        let reply = if self.reentrant {
            let mut pool = self.idle.lock().expect("remote pool poisoned");
            if pool.is_empty() {
                pool.push(Connection::open(&self.transport)?);
            }
            let out = pool[0].call(&request, self.timeout);
            if out.is_err() {
                pool.clear();
            }
            out?
        } else {
            let taken = self.idle.lock().expect("remote pool poisoned").pop();
            let mut conn = match taken {
                Some(c) => c,
                None => Connection::open(&self.transport)?,
            };
            let out = conn.call(&request, self.timeout)?;
            // a connection that failed is dropped rather than returned
            self.idle.lock().expect("remote pool poisoned").push(conn);
            out
        };
        Ok(decode_response(&reply, x.dim())?)
    }
}

impl VectorField for RemoteFieldEndpoint {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.eval_remote(x, t)
    }
    fn label(&self) -> &str {
        &self.label
    }
}

/// Behaviour of a test-double field server.
#[derive(Debug, Clone, PartialEq)]
pub enum Double {
    /// Returns the state itself.
    Echo,
    /// Returns one coordinate too many.
    WrongDim,
    /// Answers with text that is not a field.
    Garbage,
    /// Never answers.
    Silent,
    /// The exact marginal field for data `N(mu 1, I)` and standard noise.
    Analytic { mu: f64, dim: usize },
}

impl FromStr for Double {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "echo" => Ok(Double::Echo),
            "wrong_dim" | "wrong-dim" => Ok(Double::WrongDim),
            "garbage" => Ok(Double::Garbage),
            "silent" => Ok(Double::Silent),
            "analytic" => Ok(Double::Analytic { mu: 10.0, dim: 1 }),
            other => Err(Error::invalid(
                "double",
                format!("unknown `{other}` (echo, wrong_dim, garbage, silent, analytic)"),
            )),
        }
    }
}

#[derive(Deserialize)]
struct IncomingRequest {
    t: f64,
    state: Vec<f64>,
    #[allow(dead_code)]
    prompt: Option<String>,
}

/// The reply a double gives to one request line, or `None` to stay silent.
pub fn double_reply(double: &Double, field: Option<&dyn VectorField>, line: &str) -> Option<String> {
    let req: IncomingRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return Some(serde_json::json!({ "error": e.to_string() }).to_string()),
    };
    let body = |v: &[f64]| Some(serde_json::json!({ "field": v }).to_string());
    match double {
        Double::Echo => body(&req.state),
        Double::WrongDim => {
            let mut v = req.state.clone();
            v.push(0.0);
            body(&v)
        }
        Double::Garbage => Some("not json".to_string()),
        Double::Silent => None,
        Double::Analytic { .. } => {
            let field = field.expect("analytic double has a field");
            match StateVec::new(req.state).and_then(|x| field.eval(&x, req.t)) {
                Ok(v) => body(v.as_slice()),
                Err(e) => Some(serde_json::json!({ "error": e.to_string() }).to_string()),
            }
        }
    }
}

fn double_field(double: &Double) -> Result<Option<VectorFieldHandle>> {
    match *double {
        Double::Analytic { mu, dim } => {
            let p0 = GaussianDist::isotropic(StateVec::splat(dim, mu), 1.0)?;
            Ok(Some(analytic_marginal_field(&InterpolationMarginal::to_standard_noise(p0))?))
        }
        _ => Ok(None),
    }
}

fn serve_lines(double: &Double, field: Option<&dyn VectorField>, read: impl BufRead, mut out: impl Write) -> Result<()> {
    for line in read.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = double_reply(double, field, &line) {
            writeln!(out, "{reply}")?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Serves a double on stdin/stdout until stdin closes.
pub fn serve_stdio(double: &Double) -> Result<()> {
    let field = double_field(double)?;
    let stdin = std::io::stdin();
    serve_lines(double, field.as_deref(), stdin.lock(), std::io::stdout().lock())
}

/// Binds `addr` and serves every connection on its own thread. Returns the
/// bound address once listening; the server runs until the process exits.
pub fn serve_tcp(double: Double, addr: &str) -> Result<std::net::SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let field = double_field(&double)?;
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (double, field) = (double.clone(), field.clone());
            thread::spawn(move || {
                let Ok(read) = stream.try_clone() else { return };
                let _ = serve_lines(&double, field.as_deref(), BufReader::new(read), stream);
            });
        }
    });
    Ok(local)
}
