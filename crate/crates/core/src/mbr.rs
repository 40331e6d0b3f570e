//! Minimum Bayes Risk selection over N-best candidate sets.
//!
//! Every candidate is scored as a hypothesis against every candidate as a
//! pseudo-reference; the candidate with the highest mean utility wins, ties
//! going to the lowest rank.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CandidateSet, Corpus, SegmentPair};
use crate::error::{Error, Result};
use crate::metrics::{
    bleu_corpus, chrf_corpus, levenshtein_chars, BleuParams, BleuStats, ChrfParams, ChrfStats, NGramProfile,
    TokenProfile,
};
use crate::scorer::{score_batch, ScoreRequest, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    ChrfSentence,
    BleuSentence,
    NegEditDistance,
    ExternalScorer,
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtilityKind::ChrfSentence => "chrf-sentence",
            UtilityKind::BleuSentence => "bleu-sentence",
            UtilityKind::NegEditDistance => "neg-edit-distance",
            UtilityKind::ExternalScorer => "external-scorer",
        })
    }
}

/// Pairwise utility `u(hypothesis, pseudo_reference)`.
#[derive(Clone)]
pub enum Utility {
    Chrf(ChrfParams),
    Bleu(BleuParams),
    NegEditDistance,
    External {
        scorer: Arc<dyn Scorer>,
        /// Declared by the caller; only then is the upper triangle mirrored.
        symmetric: bool,
    },
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Utility::External { scorer, symmetric } => f
                .debug_struct("External")
                .field("scorer", &scorer.capabilities().name)
                .field("symmetric", symmetric)
                .finish(),
            Utility::Chrf(p) => f.debug_tuple("Chrf").field(p).finish(),
            Utility::Bleu(p) => f.debug_tuple("Bleu").field(p).finish(),
            Utility::NegEditDistance => f.write_str("NegEditDistance"),
        }
    }
}

impl Utility {
    pub fn chrf() -> Self {
        Utility::Chrf(ChrfParams::default())
    }

    pub fn bleu() -> Self {
        Utility::Bleu(BleuParams::sentence())
    }

    pub fn external(scorer: Arc<dyn Scorer>) -> Self {
        Utility::External {
            scorer,
            symmetric: false,
        }
    }

    pub fn kind(&self) -> UtilityKind {
        match self {
            Utility::Chrf(_) => UtilityKind::ChrfSentence,
            Utility::Bleu(_) => UtilityKind::BleuSentence,
            Utility::NegEditDistance => UtilityKind::NegEditDistance,
            Utility::External { .. } => UtilityKind::ExternalScorer,
        }
    }

    pub fn symmetric(&self) -> bool {
        match self {
            Utility::NegEditDistance => true,
            Utility::External { symmetric, .. } => *symmetric,
            Utility::Chrf(_) | Utility::Bleu(_) => false,
        }
    }

    pub fn needs_source(&self) -> bool {
        match self {
            Utility::External { scorer, .. } => scorer.capabilities().needs_src,
            _ => false,
        }
    }
}

/// `values[i][j] = u(candidate_i, candidate_j)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl UtilityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("utility matrix must be square".into()));
        }
        let m = UtilityMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self, tolerance: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tolerance))
    }

    fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::Validation(format!(
                "non-finite utility for pair ({}, {})",
                k / self.n,
                k % self.n
            ))),
            None => Ok(()),
        }
    }
}

pub fn utility_matrix<S: AsRef<str>>(candidates: &[S], source: Option<&str>, u: &Utility) -> Result<UtilityMatrix> {
    fill_matrix(candidates, source, u, u.symmetric())
}

/// Like [`utility_matrix`] but always computes all `n²` entries.
pub fn utility_matrix_full<S: AsRef<str>>(candidates: &[S], source: Option<&str>, u: &Utility) -> Result<UtilityMatrix> {
    fill_matrix(candidates, source, u, false)
}

fn fill_matrix<S: AsRef<str>>(candidates: &[S], source: Option<&str>, u: &Utility, mirror: bool) -> Result<UtilityMatrix> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::Validation("cannot build a utility matrix for zero candidates".into()));
    }
    if u.needs_source() && source.is_none() {
        return Err(Error::Config(format!("utility {} needs the source sentence", u.kind())));
    }
    let mut values = vec![0.0; n * n];
    let mut fill = |f: &mut dyn FnMut(usize, usize) -> f64| {
        for i in 0..n {
            let start = if mirror { i } else { 0 };
            for j in start..n {
                values[i * n + j] = f(i, j);
            }
        }
    };
    match u {
        Utility::Chrf(params) => {
            params.validate()?;
            let profiles: Vec<NGramProfile> = candidates
                .iter()
                .map(|c| NGramProfile::new(c.as_ref(), params.char_order))
                .collect();
            fill(&mut |i, j| ChrfStats::between(&profiles[i], &profiles[j]).score(params));
        }
        Utility::Bleu(params) => {
            params.validate()?;
            let profiles: Vec<TokenProfile> = candidates
                .iter()
                .map(|c| TokenProfile::new(c.as_ref(), params.max_order))
                .collect();
            fill(&mut |i, j| {
                BleuStats::between(&profiles[i], &profiles[j], params.max_order).score(params.effective_order)
            });
        }
        Utility::NegEditDistance => {
            let chars: Vec<Vec<char>> = candidates.iter().map(|c| c.as_ref().chars().collect()).collect();
            fill(&mut |i, j| -(levenshtein_chars(&chars[i], &chars[j]) as f64));
        }
        Utility::External { scorer, .. } => {
            let caps = scorer.capabilities();
            let text = |i: usize| candidates[i].as_ref().to_string();
            let mut pairs = Vec::new();
            if caps.needs_ref {
                for i in 0..n {
                    for j in (if mirror { i } else { 0 })..n {
                        pairs.push((i, j));
                    }
                }
            } else {
                // Reference-free scoring: one request per hypothesis fills its row.
                pairs.extend((0..n).map(|i| (i, i)));
            }
            let requests = pairs
                .iter()
                .enumerate()
                .map(|(k, &(i, j))| ScoreRequest {
                    id: k as u64,
                    src: source.map(str::to_string),
                    mt: text(i),
                    reference: caps.needs_ref.then(|| text(j)),
                })
                .collect();
            let responses = score_batch(scorer.as_ref(), requests)?;
            for (&(i, j), resp) in pairs.iter().zip(responses) {
                if !resp.score.is_finite() {
                    return Err(Error::Validation(format!("non-finite utility for pair ({i}, {j})")));
                }
                if caps.needs_ref {
                    values[i * n + j] = resp.score;
                } else {
                    values[i * n..(i + 1) * n].fill(resp.score);
                }
            }
        }
    }
    if mirror {
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
    }
    let m = UtilityMatrix { n, values };
    m.check_finite()?;
    Ok(m)
}

/// Mean utility of each candidate against all pseudo-references, summed in
/// index order. With `include_self = false` and a single candidate the score
/// is the diagonal entry.
pub fn expected_utilities(m: &UtilityMatrix, include_self: bool) -> Vec<f64> {
    let n = m.n();
    (0..n)
        .map(|i| {
            if !include_self && n == 1 {
                return m.get(0, 0);
            }
            let mut sum = 0.0;
            for (j, v) in m.row(i).iter().enumerate() {
                if include_self || j != i {
                    sum += v;
                }
            }
            sum / if include_self { n } else { n - 1 } as f64
        })
        .collect()
}

/// Relative margin below which two expected utilities count as tied.
/// Duplicate candidates have equal expectations that summation order can
/// perturb in the last bits.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Index of the maximum, earliest index on ties (within [`TIE_TOLERANCE`]).
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let b = scores[best];
        if s > b + TIE_TOLERANCE * b.abs().max(1.0) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MbrResult {
    pub segment_id: usize,
    pub selected_index: usize,
    pub expected_utilities: Vec<f64>,
    pub selected_text: String,
}

impl MbrResult {
    pub fn selected_utility(&self) -> f64 {
        self.expected_utilities[self.selected_index]
    }
}

pub fn mbr_select<S: AsRef<str>>(
    candidates: &[S],
    source: Option<&str>,
    u: &Utility,
    include_self: bool,
) -> Result<MbrResult> {
    let m = utility_matrix(candidates, source, u)?;
    let expected = expected_utilities(&m, include_self);
    let best = argmax_first(&expected);
    Ok(MbrResult {
        segment_id: 0,
        selected_index: best,
        selected_text: candidates[best].as_ref().to_string(),
        expected_utilities: expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub include_self: bool,
    /// Use only the first `top_k` candidates of each set.
    pub top_k: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            include_self: true,
            top_k: None,
        }
    }
}

/// Runs [`mbr_select`] on every set (in parallel on the current rayon pool);
/// output order follows `sets`.
pub fn mbr_decode_corpus(
    sets: &[CandidateSet],
    corpus: Option<&Corpus>,
    u: &Utility,
    options: DecodeOptions,
) -> Result<Vec<MbrResult>> {
    if options.top_k == Some(0) {
        return Err(Error::Parameter("top_k must be at least 1".into()));
    }
    let needs_source = u.needs_source();
    if needs_source && corpus.is_none() {
        return Err(Error::Config(format!("utility {} needs source sentences; supply a corpus", u.kind())));
    }
    let sources: Vec<Option<&str>> = sets
        .iter()
        .map(|set| match corpus {
            Some(c) => match c.get(set.segment_id()) {
                Some(pair) => Ok(Some(pair.source.as_str())),
                None if needs_source => Err(Error::Alignment(format!(
                    "segment {} has candidates but is missing from the corpus ({} segments)",
                    set.segment_id(),
                    c.len()
                ))),
                None => Ok(None),
            },
            None => Ok(None),
        })
        .collect::<Result<_>>()?;

    sets.par_iter()
        .zip(sources)
        .map(|(set, source)| {
            let candidates = set.top(options.top_k.unwrap_or(usize::MAX));
            let mut r = mbr_select(candidates, source, u, options.include_self).map_err(|e| match e {
                Error::Scorer { source, .. } => Error::Scorer {
                    context: Some(format!("segment {}", set.segment_id())),
                    source,
                },
                other => other,
            })?;
            r.segment_id = set.segment_id();
            Ok(r)
        })
        .collect()
}

/// Pairs each source sentence with its MBR selection. Every corpus segment
/// must have a result.
pub fn synthetic_corpus(corpus: &Corpus, results: &[MbrResult]) -> Result<Corpus> {
    let mut selected: Vec<Option<&str>> = vec![None; corpus.len()];
    for r in results {
        match selected.get_mut(r.segment_id) {
            Some(slot) => *slot = Some(&r.selected_text),
            None => {
                return Err(Error::Alignment(format!(
                    "result for segment {} but the corpus has {} segments",
                    r.segment_id,
                    corpus.len()
                )))
            }
        }
    }
    let missing: Vec<usize> = selected.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::Alignment(format!("no candidates for segments {missing:?}")));
    }
    Ok(Corpus::new(
        corpus
            .pairs()
            .iter()
            .zip(selected)
            .map(|(p, t)| SegmentPair {
                id: p.id,
                source: p.source.clone(),
                target: t.map(str::to_string),
                meta: p.meta.clone(),
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub effective_k: usize,
    pub chrf: f64,
    pub bleu: f64,
    pub mean_expected_utility: f64,
    pub wall_time_ms: f64,
}

/// Decodes with rank prefixes of each size in `counts` and scores the
/// selections against `references` (indexed by segment id). A `k = 0` row,
/// the rank-0 candidate without MBR, always comes first.
pub fn sweep_candidate_counts(
    sets: &[CandidateSet],
    corpus: Option<&Corpus>,
    u: &Utility,
    include_self: bool,
    counts: &[usize],
    references: Option<&[String]>,
) -> Result<Vec<SweepRow>> {
    let references = references.ok_or_else(|| Error::Config("the sweep needs reference translations".into()))?;
    if let Some(set) = sets.iter().find(|s| s.segment_id() >= references.len()) {
        return Err(Error::Config(format!(
            "no reference for segment {} ({} references)",
            set.segment_id(),
            references.len()
        )));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(format!("counts must be strictly increasing: {counts:?}")));
    }
    let refs: Vec<&str> = sets.iter().map(|s| references[s.segment_id()].as_str()).collect();
    let max_len = sets.iter().map(CandidateSet::len).max().unwrap_or(0);

    let mut ks = vec![0];
    ks.extend(counts.iter().copied().filter(|&k| k > 0));
    ks.into_iter()
        .map(|k| {
            let started = Instant::now();
            // The baseline row is MBR over a one-candidate prefix, i.e. rank 0.
            let prefix = k.max(1);
            let options = DecodeOptions {
                include_self,
                top_k: Some(prefix),
            };
            let results = mbr_decode_corpus(sets, corpus, u, options)?;
            let hyps: Vec<&str> = results.iter().map(|r| r.selected_text.as_str()).collect();
            let chrf = chrf_corpus(&hyps, &refs, &ChrfParams::default())?.corpus_value;
            let bleu = bleu_corpus(&hyps, &refs, &BleuParams::corpus())?.corpus_value;
            let mean_expected_utility = if results.is_empty() {
                0.0
            } else {
                results.iter().map(MbrResult::selected_utility).sum::<f64>() / results.len() as f64
            };
            Ok(SweepRow {
                k,
                effective_k: prefix.min(max_len),
                chrf,
                bleu,
                mean_expected_utility,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "k\teffective_k\tchrF\tBLEU\tmean_expected_utility\twall_time_ms";

pub fn render_sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.6}\t{:.1}\n",
            r.k, r.effective_k, r.chrf, r.bleu, r.mean_expected_utility, r.wall_time_ms
        ));
    }
    out
}
