//! Newline-delimited telemetry → limit protocol.
//!
//! Each request is one JSON object on one line:
//!
//! ```json
//! {"seq":1,"d_h":0.20,"v_nom":1.0,"m_u":2.0,"body_part":"chest","curvature":"flat"}
//! ```
//!
//! `condition` is optional (policy default otherwise). `m_u` may be omitted
//! when the bundle has an arm model and the message carries the joint
//! configuration as `q`. Each request gets exactly one reply line, in order:
//!
//! ```json
//! {"seq":1,"v_safe":0.33,"active_limit":"emu","latency_us":3}
//! ```
//!
//! Malformed or rejected requests get `{"error":...,"line":...}` and the
//! stream continues. `{"cmd":"reload"}` re-reads the configuration file and
//! swaps it in before the next message.

use std::borrow::Cow;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigBundle, SharedConfig};
use crate::governor::{self, ActiveLimit, GovernorInput};
use crate::manipulator_dynamics::{reflected_mass, ReflectedMass};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryMsg<'a> {
    pub seq: u64,
    pub d_h: f64,
    pub v_nom: f64,
    #[serde(default)]
    pub m_u: Option<f64>,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(borrow)]
    pub body_part: Cow<'a, str>,
    #[serde(borrow)]
    pub curvature: Cow<'a, str>,
    #[serde(default, borrow)]
    pub condition: Option<Cow<'a, str>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitMsg {
    pub seq: u64,
    pub v_safe: f64,
    pub active_limit: ActiveLimit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Not a well-formed message.
    Parse,
    /// Well-formed but rejected by the governor or the dynamics.
    Domain,
    /// `seq` did not increase.
    Sequence,
    Reload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: ErrorKind,
    pub line: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub detail: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlMsg<'a> {
    #[serde(borrow)]
    cmd: Cow<'a, str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Include the measured processing time in each reply. Off makes replies
    /// a pure function of the input.
    pub report_latency: bool,
}

/// Per-connection protocol state.
#[derive(Debug)]
pub struct Session {
    options: SessionOptions,
    line: u64,
    last_seq: Option<u64>,
}

impl Session {
    pub fn new(options: SessionOptions) -> Self {
        Session {
            options,
            line: 0,
            last_seq: None,
        }
    }

    /// Handle one input line. Blank lines produce no reply.
    pub fn handle_line(&mut self, raw: &str, shared: &SharedConfig) -> Option<String> {
        self.line += 1;
        let text = raw.trim();
        if text.is_empty() {
            return None;
        }
        let reply = match serde_json::from_str::<TelemetryMsg<'_>>(text) {
            Ok(msg) => self.handle_telemetry(&msg, &shared.load()),
            Err(parse_err) => match serde_json::from_str::<ControlMsg<'_>>(text) {
                Ok(ctl) => self.handle_control(&ctl.cmd, shared),
                Err(_) => Err(self.error(ErrorKind::Parse, None, parse_err.to_string())),
            },
        };
        Some(match reply {
            Ok(s) => s,
            Err(e) => serde_json::to_string(&e).expect("error reply serializes"),
        })
    }

    fn error(&self, error: ErrorKind, seq: Option<u64>, detail: String) -> ErrorReply {
        ErrorReply {
            error,
            line: self.line,
            seq,
            detail,
        }
    }

    fn handle_control(&mut self, cmd: &str, shared: &SharedConfig) -> Result<String, ErrorReply> {
        match cmd {
            "reload" => shared
                .reload()
                .map(|()| r#"{"ok":"reload"}"#.to_string())
                .map_err(|e| self.error(ErrorKind::Reload, None, e.to_string())),
            other => Err(self.error(ErrorKind::Parse, None, format!("unknown command {other:?}"))),
        }
    }

    fn handle_telemetry(
        &mut self,
        msg: &TelemetryMsg<'_>,
        bundle: &ConfigBundle,
    ) -> Result<String, ErrorReply> {
        let started = Instant::now();
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(self.error(
                    ErrorKind::Sequence,
                    Some(msg.seq),
                    format!("seq {} does not follow {last}", msg.seq),
                ));
            }
        }
        self.last_seq = Some(msg.seq);
        let domain =
            |this: &Self, detail: String| this.error(ErrorKind::Domain, Some(msg.seq), detail);

        let mass = match (msg.m_u, &msg.q, &bundle.arm) {
            (Some(m), _, _) => ReflectedMass::Finite(m),
            (None, Some(q), Some(arm)) => reflected_mass(arm, q, &bundle.contact_direction)
                .map_err(|e| domain(self, e.to_string()))?,
            (None, Some(_), None) => {
                return Err(domain(
                    self,
                    "joint configuration given but no arm model is loaded".into(),
                ))
            }
            (None, None, _) => return Err(domain(self, "m_u is required".into())),
        };
        let input = GovernorInput {
            v_d: msg.v_nom,
            mass,
            d_h: msg.d_h,
            body_part: &msg.body_part,
            curvature: &msg.curvature,
            condition: msg.condition.as_deref(),
        };
        let decision = governor::v_safe(&input, &bundle.curves, &bundle.policy)
            .map_err(|e| domain(self, e.to_string()))?;
        let reply = LimitMsg {
            seq: msg.seq,
            v_safe: decision.v_safe,
            active_limit: decision.active,
            latency_us: self
                .options
                .report_latency
                .then(|| started.elapsed().as_micros() as u64),
        };
        Ok(serde_json::to_string(&reply).expect("limit reply serializes"))
    }
}

/// Answer every line of `input` on `output`, flushing after each reply.
pub fn govern<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    shared: &SharedConfig,
    options: SessionOptions,
) -> io::Result<()> {
    let mut session = Session::new(options);
    for line in input.lines() {
        let line = line?;
        if let Some(reply) = session.handle_line(&line, shared) {
            output.write_all(reply.as_bytes())?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    Ok(())
}

/// TCP front end: one thread and one [`Session`] per connection, all
/// reading the same [`SharedConfig`].
pub struct Server {
    listener: TcpListener,
    options: SessionOptions,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, options: SessionOptions) -> io::Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            options,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn run(self, shared: Arc<SharedConfig>) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("accept failed: {e}");
                    continue;
                }
            };
            let shared = Arc::clone(&shared);
            let options = self.options;
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, &shared, options) {
                    eprintln!("connection closed: {e}");
                }
            });
        }
        Ok(())
    }
}

fn handle_connection(
    stream: TcpStream,
    shared: &SharedConfig,
    options: SessionOptions,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    govern(reader, stream, shared, options)
}
