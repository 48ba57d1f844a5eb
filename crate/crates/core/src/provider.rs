//! Client for external checkpoint servers.
//!
//! A provider is a child process speaking UTF-8 JSON Lines on stdin/stdout:
//! one request per line, exactly one response per request carrying the
//! request id. Responses may be matched out of order, so requests can be
//! pipelined.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::sync::Mutex;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{CandidateScore, Scorer, ScorerId, ScoringError};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("failed to start provider {cmd:?}: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("provider closed its output")]
    Closed,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("provider error: {0}")]
    Remote(String),
    #[error("protocol version mismatch: expected {PROTOCOL_VERSION}, got {0:?}")]
    Version(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    pub size: String,
    pub seed: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Handshake,
    Score,
    ListCheckpoints,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub id: String,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ref: Option<ModelRef>,
}

impl ProviderRequest {
    pub fn new(id: impl Into<String>, kind: RequestKind) -> Self {
        ProviderRequest {
            id: id.into(),
            kind,
            context: None,
            candidates: None,
            model_ref: None,
        }
    }

    /// Score requests need a context and at least one candidate field
    /// (an empty list is allowed and yields an empty result list).
    pub fn is_well_formed(&self) -> bool {
        !self.id.is_empty()
            && match self.kind {
                RequestKind::Score => self.context.is_some() && self.candidates.is_some(),
                RequestKind::ListCheckpoints => self.model_ref.is_some(),
                RequestKind::Handshake | RequestKind::Shutdown => true,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScore {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub tokenizer_id: String,
    pub model_id: String,
    pub max_context: u64,
    pub protocol_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<WireScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Capabilities>,
    /// Checkpoint steps for `list_checkpoints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProviderResponse {
    pub fn success(id: &str) -> Self {
        ProviderResponse {
            id: id.to_string(),
            ok: true,
            results: None,
            capabilities: None,
            steps: None,
            error: None,
        }
    }

    pub fn failure(id: &str, error: impl Into<String>) -> Self {
        ProviderResponse {
            error: Some(error.into()),
            ok: false,
            ..ProviderResponse::success(id)
        }
    }

    /// `ok` xor `error`.
    pub fn is_consistent(&self) -> bool {
        self.ok != self.error.is_some()
    }

    fn into_result(self) -> Result<ProviderResponse, ProviderError> {
        if !self.is_consistent() {
            return Err(ProviderError::Malformed(format!("response {} has ok={} and error={:?}", self.id, self.ok, self.error)));
        }
        match self.error {
            Some(e) => Err(ProviderError::Remote(e)),
            None => Ok(self),
        }
    }
}

type Incoming = Result<ProviderResponse, String>;

pub struct ProviderClient {
    child: Child,
    stdin: Option<ChildStdin>,
    incoming: Receiver<Incoming>,
    reader: Option<JoinHandle<()>>,
    parked: HashMap<String, ProviderResponse>,
    next_id: u64,
}

impl ProviderClient {
    pub fn spawn(cmd: &str, args: &[String]) -> Result<Self, ProviderError> {
        let mut child = Command::new(cmd)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProviderError::Spawn {
                cmd: cmd.to_string(),
                source,
            })?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<ProviderResponse>(&line).map_err(|e| format!("{e}: {line}"));
                if tx.send(parsed).is_err() {
                    break;
                }
            }
        });
        Ok(ProviderClient {
            child,
            stdin,
            incoming: rx,
            reader: Some(reader),
            parked: HashMap::new(),
            next_id: 0,
        })
    }

    pub fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("r{}", self.next_id)
    }

    pub fn send(&mut self, req: &ProviderRequest) -> Result<(), ProviderError> {
        let stdin = self.stdin.as_mut().ok_or(ProviderError::Closed)?;
        let mut line = serde_json::to_string(req).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        line.push('\n');
        stdin.write_all(line.as_bytes())?;
        stdin.flush()?;
        Ok(())
    }

    /// Wait for the response carrying `id`, parking any others.
    pub fn recv(&mut self, id: &str) -> Result<ProviderResponse, ProviderError> {
        if let Some(r) = self.parked.remove(id) {
            return Ok(r);
        }
        loop {
            let msg = self.incoming.recv().map_err(|_| ProviderError::Closed)?;
            let resp = msg.map_err(ProviderError::Malformed)?;
            if resp.id == id {
                return Ok(resp);
            }
            self.parked.insert(resp.id.clone(), resp);
        }
    }

    pub fn request(&mut self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        self.send(req)?;
        self.recv(&req.id)
    }

    /// Write every request before reading any response.
    pub fn pipeline(&mut self, reqs: &[ProviderRequest]) -> Result<Vec<ProviderResponse>, ProviderError> {
        for r in reqs {
            self.send(r)?;
        }
        reqs.iter().map(|r| self.recv(&r.id)).collect()
    }

    pub fn handshake(&mut self, model: &ModelRef) -> Result<Capabilities, ProviderError> {
        let mut req = ProviderRequest::new(self.fresh_id(), RequestKind::Handshake);
        req.model_ref = Some(model.clone());
        let resp = self.request(&req)?.into_result()?;
        let caps = resp
            .capabilities
            .ok_or_else(|| ProviderError::Malformed("handshake without capabilities".into()))?;
        if caps.protocol_version != PROTOCOL_VERSION {
            return Err(ProviderError::Version(caps.protocol_version));
        }
        Ok(caps)
    }

    pub fn score(&mut self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ProviderError> {
        let mut req = ProviderRequest::new(self.fresh_id(), RequestKind::Score);
        req.context = Some(context.to_string());
        req.candidates = Some(candidates.to_vec());
        let resp = self.request(&req)?.into_result()?;
        let results = resp.results.unwrap_or_default();
        if results.len() != candidates.len() {
            return Err(ProviderError::Malformed(format!(
                "{} results for {} candidates",
                results.len(),
                candidates.len()
            )));
        }
        candidates
            .iter()
            .zip(results)
            .map(|(c, r)| CandidateScore::new(c, r.tokens, r.logprobs).map_err(|e| ProviderError::Malformed(e.to_string())))
            .collect()
    }

    pub fn list_checkpoints(&mut self, model: &ModelRef) -> Result<Vec<u64>, ProviderError> {
        let mut req = ProviderRequest::new(self.fresh_id(), RequestKind::ListCheckpoints);
        req.model_ref = Some(model.clone());
        let steps = self.request(&req)?.into_result()?.steps.unwrap_or_default();
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProviderError::Malformed("checkpoint steps not strictly increasing".into()));
        }
        Ok(steps)
    }

    /// Send `shutdown` and wait for the process to exit.
    pub fn shutdown(mut self) -> Result<ExitStatus, ProviderError> {
        let req = ProviderRequest::new(self.fresh_id(), RequestKind::Shutdown);
        let sent = self.request(&req);
        self.stdin.take();
        let status = self.child.wait()?;
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        sent?.into_result()?;
        Ok(status)
    }
}

impl Drop for ProviderClient {
    fn drop(&mut self) {
        self.stdin.take();
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// A checkpoint served by a provider process. Requests are serialized.
pub struct ProviderScorer {
    id: ScorerId,
    client: Mutex<ProviderClient>,
    capabilities: Capabilities,
}

impl ProviderScorer {
    pub fn start(cmd: &str, args: &[String], model: &ModelRef) -> Result<Self, ProviderError> {
        let step = model.step.ok_or_else(|| ProviderError::Malformed("model ref without step".into()))?;
        let mut client = ProviderClient::spawn(cmd, args)?;
        let capabilities = client.handshake(model)?;
        Ok(ProviderScorer {
            id: ScorerId::checkpoint(&model.name, &model.size, model.seed, step),
            client: Mutex::new(client),
            capabilities,
        })
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    pub fn shutdown(self) -> Result<ExitStatus, ProviderError> {
        self.client.into_inner().unwrap_or_else(|p| p.into_inner()).shutdown()
    }
}

impl Scorer for ProviderScorer {
    fn id(&self) -> &ScorerId {
        &self.id
    }

    fn concurrent(&self) -> bool {
        false
    }

    fn score(&self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ScoringError> {
        let mut client = self.client.lock().map_err(|_| ScoringError::Scorer("provider lock poisoned".into()))?;
        client.score(context, candidates).map_err(|e| ScoringError::Scorer(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let mut req = ProviderRequest::new("7", RequestKind::Score);
        req.context = Some("The athlete".into());
        req.candidates = Some(vec![" knows".into()]);
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["kind"], "score");
        assert_eq!(v["id"], "7");
        assert!(v.get("model_ref").is_none());
        assert!(req.is_well_formed());
        req.context = None;
        assert!(!req.is_well_formed());

        let mut lc = ProviderRequest::new("8", RequestKind::ListCheckpoints);
        lc.model_ref = Some(ModelRef { name: "pythia".into(), size: "14m".into(), seed: 1, step: None });
        let v = serde_json::to_value(&lc).unwrap();
        assert_eq!(v["kind"], "list_checkpoints");
        assert_eq!(v["model_ref"]["size"], "14m");
    }

    #[test]
    fn response_consistency() {
        assert!(ProviderResponse::success("a").is_consistent());
        assert!(ProviderResponse::failure("a", "boom").is_consistent());
        let mut bad = ProviderResponse::success("a");
        bad.error = Some("x".into());
        assert!(!bad.is_consistent());
        assert!(matches!(bad.into_result(), Err(ProviderError::Malformed(_))));
    }

    #[test]
    fn spawn_failure_is_reported() {
        let r = ProviderClient::spawn("/nonexistent/provider-binary", &[]);
        assert!(matches!(r, Err(ProviderError::Spawn { .. })));
    }
}
