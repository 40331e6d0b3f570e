//! Lexical MT metrics: chrF, BLEU and Levenshtein distance.

mod bleu;
mod chrf;
mod levenshtein;

use serde::{Deserialize, Serialize};

pub use bleu::{
    bleu_corpus, bleu_sentence, bleu_sentence_stats, tokenize_13a, BleuParams, BleuStats,
    TokenProfile,
};
pub use chrf::{chrf_corpus, chrf_sentence, chrf_sentence_stats, ChrfParams, ChrfStats, NGramProfile};
pub use levenshtein::{levenshtein, levenshtein_chars};

use crate::error::{Error, Result};

/// Corpus value, optional per-segment values and the parameter signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub corpus_value: f64,
    pub sentence_values: Option<Vec<f64>>,
    pub signature: String,
    /// Per-segment sufficient statistics, kept so corpus-level scores can be
    /// recomputed on resamples.
    #[serde(skip)]
    pub stats: Option<SentenceStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SentenceStats {
    Chrf { params: ChrfParams, stats: Vec<ChrfStats> },
    Bleu { params: BleuParams, stats: Vec<BleuStats> },
}

impl SentenceStats {
    pub fn len(&self) -> usize {
        match self {
            SentenceStats::Chrf { stats, .. } => stats.len(),
            SentenceStats::Bleu { stats, .. } => stats.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corpus score over the segments at `indices` (repeats allowed).
    pub fn corpus_score(&self, indices: &[usize]) -> f64 {
        match self {
            SentenceStats::Chrf { params, stats } => {
                let mut total = ChrfStats::zeros(params.char_order);
                for &i in indices {
                    total.add(&stats[i]);
                }
                total.score(params)
            }
            SentenceStats::Bleu { params, stats } => {
                let mut total = BleuStats::zeros(params.max_order);
                for &i in indices {
                    total.add(&stats[i]);
                }
                total.score(params.effective_order)
            }
        }
    }
}

/// Whitespace as understood by Python's `str.split()`: Unicode `White_Space`
/// plus the ASCII information separators.
pub(crate) fn is_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub(crate) fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::Alignment(format!(
            "{hyps} hypotheses but {refs} references"
        )));
    }
    Ok(())
}
