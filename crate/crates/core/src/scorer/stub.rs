use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Capabilities, Hello, ScoreRequest, ScoreResponse, Scorer, ScorerError};
use crate::metrics::{chrf_sentence, ChrfParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StubMode {
    Constant(f64),
    /// Sentence chrF of `mt` against `ref`, scaled to [0, 1].
    Overlap,
    /// `exp(-|len(mt) - len(ref)| / len(ref))`, 0 for an empty reference.
    LengthPenalty,
}

impl std::str::FromStr for StubMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overlap" => Ok(StubMode::Overlap),
            "length-penalty" => Ok(StubMode::LengthPenalty),
            _ => match s.strip_prefix("constant:").or_else(|| s.strip_prefix("constant=")) {
                Some(c) => c
                    .parse::<f64>()
                    .ok()
                    .filter(|c| c.is_finite())
                    .map(StubMode::Constant)
                    .ok_or_else(|| format!("bad constant {c:?}")),
                None => Err(format!("unknown stub mode {s:?} (constant:<c>, overlap, length-penalty)")),
            },
        }
    }
}

/// Deterministic in-process scorer.
#[derive(Debug, Clone)]
pub struct StubScorer {
    mode: StubMode,
    caps: Capabilities,
    shuffle_seed: Option<u64>,
}

impl StubScorer {
    pub fn new(mode: StubMode) -> Self {
        let name = match mode {
            StubMode::Constant(_) => "stub-constant",
            StubMode::Overlap => "stub-overlap",
            StubMode::LengthPenalty => "stub-length-penalty",
        };
        StubScorer {
            mode,
            caps: Capabilities {
                name: name.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                needs_src: false,
                needs_ref: !matches!(mode, StubMode::Constant(_)),
                max_batch: 64,
                out_of_order: false,
            },
            shuffle_seed: None,
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.caps.max_batch = max_batch.max(1);
        self
    }

    /// Answer each batch in a seeded random order (declares `out_of_order`).
    pub fn shuffled(mut self, seed: u64) -> Self {
        self.shuffle_seed = Some(seed);
        self.caps.out_of_order = true;
        self
    }

    pub fn mode(&self) -> StubMode {
        self.mode
    }

    pub fn score_one(&self, mt: &str, reference: Option<&str>) -> f64 {
        match self.mode {
            StubMode::Constant(c) => c,
            StubMode::Overlap => {
                chrf_sentence(mt, reference.unwrap_or(""), &ChrfParams::default()).expect("default chrF params") / 100.0
            }
            StubMode::LengthPenalty => {
                let r = reference.unwrap_or("").chars().count();
                if r == 0 {
                    return 0.0;
                }
                let m = mt.chars().count();
                (-(m.abs_diff(r) as f64) / r as f64).exp()
            }
        }
    }
}

impl Scorer for StubScorer {
    fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn exchange(&self, batch_index: usize, batch: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut out: Vec<ScoreResponse> = batch
            .iter()
            .map(|r| ScoreResponse {
                id: r.id,
                score: self.score_one(&r.mt, r.reference.as_deref()),
            })
            .collect();
        if let Some(seed) = self.shuffle_seed {
            out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ batch_index as u64));
        }
        Ok(out)
    }
}

/// Runs `scorer` as a protocol endpoint: handshake, then one response line per
/// request line until `input` closes. With `fail_after`, exits with an error
/// after answering that many requests (for fault-injection tests).
pub fn serve(
    scorer: &StubScorer,
    input: impl BufRead,
    mut output: impl Write,
    fail_after: Option<usize>,
) -> std::io::Result<()> {
    let hello = Hello {
        hello: scorer.caps.clone(),
    };
    writeln!(output, "{}", serde_json::to_string(&hello).expect("handshake serializes"))?;
    output.flush()?;
    let mut answered = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if fail_after.is_some_and(|n| answered >= n) {
            return Err(std::io::Error::other(format!("injected failure after {answered} requests")));
        }
        match serde_json::from_str::<ScoreRequest>(&line) {
            Ok(req) if scorer.caps.needs_ref && req.reference.is_none() => {
                let err = serde_json::json!({"id": req.id, "error": "missing ref"});
                writeln!(output, "{err}")?;
            }
            Ok(req) => {
                let resp = ScoreResponse {
                    id: req.id,
                    score: scorer.score_one(&req.mt, req.reference.as_deref()),
                };
                writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
            }
            Err(e) => {
                let err = serde_json::json!({"error": format!("malformed request: {e}")});
                writeln!(output, "{err}")?;
            }
        }
        output.flush()?;
        answered += 1;
    }
    Ok(())
}
