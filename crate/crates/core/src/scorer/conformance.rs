use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{score_batch, BridgeConfig, ProcessScorer, ScoreRequest, Scorer, ScorerError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Drives an endpoint command through the protocol: handshake, empty and
/// over-sized batches, determinism, shuffled-request invariance, in-order
/// delivery when `out_of_order` is false, and clean shutdown.
///
/// Returns the handshake error if the endpoint never starts; every later
/// problem is recorded as a failed check.
pub fn check_endpoint(command: &str, config: BridgeConfig) -> Result<Vec<ConformanceCheck>, ScorerError> {
    let scorer = ProcessScorer::spawn(command, config)?;
    let caps = scorer.capabilities().clone();
    let mut checks = Vec::new();
    let mut record = |name, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(ConformanceCheck { name, passed, detail });
    };

    record(
        "handshake",
        if caps.name.is_empty() || caps.max_batch == 0 {
            Err(format!("incomplete capabilities: {caps:?}"))
        } else {
            Ok(format!("{} {} max_batch={} out_of_order={}", caps.name, caps.version, caps.max_batch, caps.out_of_order))
        },
    );

    record(
        "empty-batch",
        match score_batch(&scorer, Vec::new()) {
            Ok(r) if r.is_empty() => Ok("no responses".into()),
            Ok(r) => Err(format!("{} responses to an empty batch", r.len())),
            Err(e) => Err(e.to_string()),
        },
    );

    let count = (2 * caps.max_batch + 1).min(257);
    let requests: Vec<ScoreRequest> = (0..count)
        .map(|i| ScoreRequest {
            id: 1000 + i as u64,
            src: Some(format!("source sentence {i}")),
            mt: format!("candidate {} number {i}", ["alpha", "beta", "gamma"][i % 3]),
            reference: Some(format!("candidate {} number {}", ["alpha", "beta"][i % 2], i / 2)),
        })
        .collect();
    let by_id = |r: &[super::ScoreResponse]| r.iter().map(|r| (r.id, r.score.to_bits())).collect::<BTreeMap<_, _>>();

    // score_batch rejects reordered responses unless out_of_order was announced,
    // so a pass here also covers in-order delivery.
    let first = score_batch(&scorer, requests.clone());
    record(
        "batching",
        match &first {
            Ok(r) => Ok(format!("{} requests answered in {} batches", r.len(), count.div_ceil(caps.max_batch))),
            Err(e) => Err(e.to_string()),
        },
    );

    if let Ok(first) = first {
        let first = by_id(&first);
        record(
            "determinism",
            match score_batch(&scorer, requests.clone()) {
                Ok(again) if by_id(&again) == first => Ok("identical scores on repeat".into()),
                Ok(_) => Err("scores changed on repeat".into()),
                Err(e) => Err(e.to_string()),
            },
        );
        let mut shuffled = requests;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        record(
            "order-invariance",
            match score_batch(&scorer, shuffled) {
                Ok(r) if by_id(&r) == first => Ok("same id to score mapping after shuffling".into()),
                Ok(_) => Err("scores depend on request order".into()),
                Err(e) => Err(e.to_string()),
            },
        );
    }

    record(
        "shutdown",
        match scorer.shutdown() {
            Ok(status) if status.success() => Ok("exit 0 after input closed".into()),
            Ok(status) => Err(format!("endpoint exited with {status}")),
            Err(e) => Err(e.to_string()),
        },
    );
    Ok(checks)
}
