//! Deterministic stand-in for a checkpoint server.
//!
//! Words of up to six characters are one token; longer words split into two.
//! The log-prob of a token is a hash of (model, full preceding text, token),
//! so scores obey the chain rule exactly and repeat across runs.

use std::io::{BufRead, Write};

use anyhow::Result;
use clap::Parser;
use sha2::{Digest, Sha256};
use sva_core::provider::{
    Capabilities, ModelRef, ProviderRequest, ProviderResponse, RequestKind, WireScore, PROTOCOL_VERSION,
};

#[derive(Parser, Debug)]
#[command(name = "sva-fake-provider", about = "Deterministic fake checkpoint provider")]
struct Args {
    /// Steps the fake claims to have.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1000])]
    steps: Vec<u64>,
    /// Seeds the fake knows about.
    #[arg(long, value_delimiter = ',', default_values_t = [0i64, 1, 2, 3, 4, 5, 6, 7, 8, 9])]
    seeds: Vec<i64>,
    /// Maximum context length in characters.
    #[arg(long, default_value_t = 2048)]
    max_context: u64,
    /// Fail score requests whose context contains this text.
    #[arg(long)]
    fail_on: Option<String>,
}

struct State {
    args: Args,
    model: Option<ModelRef>,
}

fn tokenize(candidate: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut rest = candidate;
    while !rest.is_empty() {
        let lead = rest.len() - rest.trim_start().len();
        let word_end = rest[lead..].find(char::is_whitespace).map_or(rest.len(), |i| lead + i);
        let piece = &rest[..word_end];
        let word = &rest[lead..word_end];
        if word.is_empty() {
            // trailing whitespace only
            break;
        }
        if word.chars().count() > 6 {
            let cut = lead + word.char_indices().nth(3).map(|(i, _)| i).expect("long word");
            tokens.push(piece[..cut].to_string());
            tokens.push(piece[cut..].to_string());
        } else {
            tokens.push(piece.to_string());
        }
        rest = &rest[word_end..];
    }
    tokens
}

fn logprob(model: &str, prefix: &str, token: &str) -> f64 {
    let mut h = Sha256::new();
    for part in [model, prefix, token] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let u = (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64;
    -(0.01 + 9.0 * u)
}

fn model_key(m: &ModelRef) -> String {
    format!("{}/{}/{}/{}", m.name, m.size, m.seed, m.step.unwrap_or(0))
}

fn handle(state: &mut State, req: &ProviderRequest) -> ProviderResponse {
    if !req.is_well_formed() {
        return ProviderResponse::failure(&req.id, "malformed request");
    }
    match req.kind {
        RequestKind::Handshake => {
            if let Some(m) = &req.model_ref {
                if !state.args.seeds.contains(&m.seed) {
                    return ProviderResponse::failure(&req.id, format!("unknown seed {}", m.seed));
                }
                if let Some(step) = m.step {
                    if !state.args.steps.contains(&step) {
                        return ProviderResponse::failure(&req.id, format!("no checkpoint at step {step}"));
                    }
                }
                state.model = Some(m.clone());
            } else if state.model.is_none() {
                state.model = Some(ModelRef { name: "fake".into(), size: "0m".into(), seed: 0, step: Some(0) });
            }
            let model = state.model.as_ref().expect("set above");
            ProviderResponse {
                capabilities: Some(Capabilities {
                    tokenizer_id: "fake-split6".into(),
                    model_id: model_key(model),
                    max_context: state.args.max_context,
                    protocol_version: PROTOCOL_VERSION.into(),
                }),
                ..ProviderResponse::success(&req.id)
            }
        }
        RequestKind::Score => {
            let Some(model) = &state.model else {
                return ProviderResponse::failure(&req.id, "handshake required before score");
            };
            let context = req.context.as_deref().expect("well formed");
            if context.chars().count() as u64 > state.args.max_context {
                return ProviderResponse::failure(&req.id, "context exceeds max_context");
            }
            if let Some(f) = &state.args.fail_on {
                if context.contains(f.as_str()) {
                    return ProviderResponse::failure(&req.id, "injected failure");
                }
            }
            let key = model_key(model);
            let mut results = Vec::new();
            for cand in req.candidates.as_deref().expect("well formed") {
                let tokens = tokenize(cand);
                if tokens.is_empty() {
                    return ProviderResponse::failure(&req.id, format!("candidate {cand:?} has no tokens"));
                }
                let mut prefix = context.to_string();
                let mut logprobs = Vec::new();
                for t in &tokens {
                    logprobs.push(logprob(&key, &prefix, t));
                    prefix.push_str(t);
                }
                results.push(WireScore { tokens, logprobs });
            }
            ProviderResponse { results: Some(results), ..ProviderResponse::success(&req.id) }
        }
        RequestKind::ListCheckpoints => {
            let m = req.model_ref.as_ref().expect("well formed");
            if !state.args.seeds.contains(&m.seed) {
                return ProviderResponse::failure(&req.id, format!("unknown seed {}", m.seed));
            }
            let mut steps = state.args.steps.clone();
            steps.sort_unstable();
            steps.dedup();
            ProviderResponse { steps: Some(steps), ..ProviderResponse::success(&req.id) }
        }
        RequestKind::Shutdown => ProviderResponse::success(&req.id),
    }
}

fn main() -> Result<()> {
    let mut state = State { args: Args::parse(), model: None };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<ProviderRequest>(&line) {
            Ok(req) => (handle(&mut state, &req), req.kind == RequestKind::Shutdown),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
                    .unwrap_or_default();
                (ProviderResponse::failure(&id, format!("cannot parse request: {e}")), false)
            }
        };
        serde_json::to_writer(&mut stdout, &resp)?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}
