//! Line-delimited JSON protocol for external utility scorers.
//!
//! The endpoint first prints a handshake record
//! `{"hello": {"name", "version", "needs_src", "needs_ref", "max_batch", "out_of_order"}}`,
//! then answers each request line `{"id", "src"?, "mt", "ref"?}` with
//! `{"id", "score"}`. Closing the endpoint's input asks it to exit.

pub mod conformance;
mod process;
mod stub;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use process::{BridgeConfig, ProcessScorer};
pub use stub::{serve, StubMode, StubScorer};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("endpoint startup failed: {0}")]
    Startup(String),
    #[error("batch {batch} timed out after {seconds:.1}s")]
    Timeout { batch: usize, seconds: f64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid score: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
    pub mt: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub score: f64,
}

/// What an endpoint announces in its handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub name: String,
    pub version: String,
    pub needs_src: bool,
    pub needs_ref: bool,
    pub max_batch: usize,
    #[serde(default)]
    pub out_of_order: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Hello {
    pub hello: Capabilities,
}

/// An endpoint that scores request batches.
///
/// `exchange` sends one batch of at most `max_batch` requests and returns the
/// raw responses in arrival order; [`score_batch`] does splitting, id matching
/// and validation on top of it.
pub trait Scorer: Send + Sync {
    fn capabilities(&self) -> &Capabilities;

    fn exchange(&self, batch_index: usize, batch: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError>;
}

/// Scores `requests`, returning one response per request in request order.
pub fn score_batch(scorer: &dyn Scorer, requests: Vec<ScoreRequest>) -> Result<Vec<ScoreResponse>, ScorerError> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let caps = scorer.capabilities();
    let max_batch = caps.max_batch.max(1);
    let requests: Vec<ScoreRequest> = requests
        .into_iter()
        .map(|mut r| {
            if !caps.needs_src {
                r.src = None;
            } else if r.src.is_none() {
                return Err(ScorerError::Validation(format!("request {} has no src but {} needs it", r.id, caps.name)));
            }
            if !caps.needs_ref {
                r.reference = None;
            } else if r.reference.is_none() {
                return Err(ScorerError::Validation(format!("request {} has no ref but {} needs it", r.id, caps.name)));
            }
            Ok(r)
        })
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(requests.len());
    for (batch_index, chunk) in requests.chunks(max_batch).enumerate() {
        let responses = scorer.exchange(batch_index, chunk)?;
        out.extend(match_responses(chunk, responses, caps.out_of_order, batch_index)?);
    }
    Ok(out)
}

fn match_responses(
    batch: &[ScoreRequest],
    responses: Vec<ScoreResponse>,
    out_of_order: bool,
    batch_index: usize,
) -> Result<Vec<ScoreResponse>, ScorerError> {
    if responses.len() != batch.len() {
        return Err(ScorerError::Transport(format!(
            "batch {batch_index}: {} responses for {} requests",
            responses.len(),
            batch.len()
        )));
    }
    let mut position: HashMap<u64, usize> = HashMap::with_capacity(batch.len());
    for (i, r) in batch.iter().enumerate() {
        if position.insert(r.id, i).is_some() {
            return Err(ScorerError::Validation(format!("duplicate request id {} in batch {batch_index}", r.id)));
        }
    }
    let mut slots: Vec<Option<f64>> = vec![None; batch.len()];
    for (k, resp) in responses.into_iter().enumerate() {
        let Some(&i) = position.get(&resp.id) else {
            return Err(ScorerError::Protocol(format!("batch {batch_index}: response for unknown id {}", resp.id)));
        };
        if !out_of_order && i != k {
            return Err(ScorerError::Protocol(format!(
                "batch {batch_index}: response {k} has id {} but the endpoint did not declare out_of_order",
                resp.id
            )));
        }
        if !resp.score.is_finite() {
            return Err(ScorerError::Validation(format!("non-finite score for request {}", resp.id)));
        }
        if slots[i].replace(resp.score).is_some() {
            return Err(ScorerError::Protocol(format!("batch {batch_index}: duplicate response for id {}", resp.id)));
        }
    }
    Ok(batch
        .iter()
        .zip(slots)
        .map(|(r, s)| ScoreResponse {
            id: r.id,
            score: s.expect("every id answered exactly once"),
        })
        .collect())
}

pub(crate) fn parse_response(line: &str) -> Result<ScoreResponse, ScorerError> {
    #[derive(Deserialize)]
    struct Raw {
        id: u64,
        score: Option<f64>,
    }
    let raw: Raw = serde_json::from_str(line)
        .map_err(|e| ScorerError::Protocol(format!("malformed response line {line:?}: {e}")))?;
    // JSON has no NaN; a null score is how non-finite values usually arrive.
    let score = raw
        .score
        .ok_or_else(|| ScorerError::Validation(format!("non-finite score for request {}", raw.id)))?;
    Ok(ScoreResponse { id: raw.id, score })
}
