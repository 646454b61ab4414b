//! Clients for out-of-process models speaking the adapter protocol.
//!
//! Each request is `{"id": .., "tokens": [..]}` and each answer
//! `{"id": .., "probs": {label: p, ..}}` or `{"id": .., "error": ".."}`.
//! Several requests can travel together as `{"batch": [..]}`, answered by
//! `{"batch": [..]}`. The exec transport writes one JSON document per line
//! to the child's stdin and reads one line back; the HTTP transport POSTs
//! the same documents to `/predict`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{Predictor, PredictorKind};
use crate::types::{LabelSpace, PredictionDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub tokens: Vec<String>,
}

/// A response line. Exactly one of `probs` and `error` is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    batch: &'a [WireRequest],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireReply {
    Batch { batch: Vec<WireResponse> },
    Single(WireResponse),
}

/// Turns the reply to `sent` into distributions in request order, pairing
/// by id.
fn decode_reply(
    space: &LabelSpace,
    sent: &[WireRequest],
    line: &str,
    batched: bool,
) -> Result<Vec<PredictionDistribution>> {
    let reply: WireReply = serde_json::from_str(line)
        .map_err(|e| Error::ProtocolViolation(format!("unparseable response {line:?}: {e}")))?;
    let responses = match (reply, batched) {
        (WireReply::Batch { batch }, true) => batch,
        (WireReply::Single(r), false) => vec![r],
        (WireReply::Single(r), true) if r.error.is_some() => vec![r],
        _ => {
            return Err(Error::ProtocolViolation(
                "response shape does not match request (batch vs single)".into(),
            ))
        }
    };
    if let Some(r) = responses.iter().find(|r| r.error.is_some()) {
        return Err(Error::AdapterError {
            id: r.id.clone(),
            message: r.error.clone().unwrap_or_default(),
        });
    }
    if responses.len() != sent.len() {
        return Err(Error::ProtocolViolation(format!(
            "sent {} requests, got {} responses",
            sent.len(),
            responses.len()
        )));
    }
    let mut by_id: HashMap<String, BTreeMap<String, f64>> = HashMap::with_capacity(sent.len());
    for r in responses {
        let id = r
            .id
            .ok_or_else(|| Error::ProtocolViolation("response without id".into()))?;
        let probs = r
            .probs
            .ok_or_else(|| Error::ProtocolViolation(format!("response {id:?} without probs")))?;
        if by_id.insert(id.clone(), probs).is_some() {
            return Err(Error::ProtocolViolation(format!("duplicate response id {id:?}")));
        }
    }
    sent.iter()
        .map(|req| {
            let probs = by_id.get(&req.id).ok_or_else(|| {
                Error::ProtocolViolation(format!("no response for request {:?}", req.id))
            })?;
            PredictionDistribution::from_map(space, probs).map_err(|e| {
                Error::ProtocolViolation(format!("response {:?}: {e}", req.id))
            })
        })
        .collect()
}

fn next_ids(counter: &AtomicU64, inputs: &[Vec<String>]) -> Vec<WireRequest> {
    inputs
        .iter()
        .map(|t| WireRequest {
            id: format!("q{}", counter.fetch_add(1, Ordering::Relaxed)),
            tokens: t.clone(),
        })
        .collect()
}

fn encode(chunk: &[WireRequest]) -> Result<String> {
    Ok(if chunk.len() == 1 {
        serde_json::to_string(&chunk[0])?
    } else {
        serde_json::to_string(&BatchRequest { batch: chunk })?
    })
}

struct ExecSession {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter running as a child process, spoken to over stdio.
///
/// Requests on one adapter are serialized; open several adapters for
/// parallel throughput.
pub struct ExecAdapter {
    command: String,
    space: LabelSpace,
    batch_size: usize,
    session: Mutex<ExecSession>,
    counter: AtomicU64,
}

impl ExecAdapter {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str, space: LabelSpace, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::AdapterUnavailable(format!("{command}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_string(),
            space,
            batch_size,
            session: Mutex::new(ExecSession { child, stdin, stdout }),
            counter: AtomicU64::new(0),
        })
    }

    fn round_trip(&self, chunk: &[WireRequest]) -> Result<Vec<PredictionDistribution>> {
        let mut line = encode(chunk)?;
        line.push('\n');
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let unavailable = |e: std::io::Error| Error::AdapterUnavailable(format!("{}: {e}", self.command));
        session.stdin.write_all(line.as_bytes()).map_err(unavailable)?;
        session.stdin.flush().map_err(unavailable)?;
        let mut reply = String::new();
        let n = session.stdout.read_line(&mut reply).map_err(unavailable)?;
        if n == 0 {
            return Err(Error::AdapterUnavailable(format!(
                "{}: adapter closed its output",
                self.command
            )));
        }
        decode_reply(&self.space, chunk, reply.trim_end(), chunk.len() > 1)
    }
}

impl Drop for ExecAdapter {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            let _ = session.child.kill();
            let _ = session.child.wait();
        }
    }
}

impl Predictor for ExecAdapter {
    fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::ExternalExec
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        let requests = next_ids(&self.counter, inputs);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in requests.chunks(self.batch_size) {
            out.extend(self.round_trip(chunk)?);
        }
        Ok(out)
    }
}

/// Adapter served over HTTP at `<base>/predict`.
pub struct HttpAdapter {
    url: String,
    space: LabelSpace,
    batch_size: usize,
    agent: ureq::Agent,
    counter: AtomicU64,
}

impl HttpAdapter {
    pub fn new(base: &str, space: LabelSpace, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/predict") {
            base.to_string()
        } else {
            format!("{base}/predict")
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout_read(Duration::from_secs(600))
            .build();
        Ok(Self {
            url,
            space,
            batch_size,
            agent,
            counter: AtomicU64::new(0),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn round_trip(&self, chunk: &[WireRequest]) -> Result<Vec<PredictionDistribution>> {
        let body = encode(chunk)?;
        let resp = match self
            .agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body)
        {
            Ok(r) => r,
            // error statuses may still carry a protocol error record
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return match decode_reply(&self.space, chunk, &text, chunk.len() > 1) {
                    Err(e @ Error::AdapterError { .. }) => Err(e),
                    _ => Err(Error::ProtocolViolation(format!("{}: HTTP {code}", self.url))),
                };
            }
            Err(e) => return Err(Error::AdapterUnavailable(format!("{}: {e}", self.url))),
        };
        let text = resp
            .into_string()
            .map_err(|e| Error::AdapterUnavailable(format!("{}: {e}", self.url)))?;
        decode_reply(&self.space, chunk, text.trim(), chunk.len() > 1)
    }
}

impl Predictor for HttpAdapter {
    fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::ExternalHttp
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        let requests = next_ids(&self.counter, inputs);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in requests.chunks(self.batch_size) {
            out.extend(self.round_trip(chunk)?);
        }
        Ok(out)
    }
}
