//! Heuristic parallel-corpus filters and exact-pair deduplication.
//!
//! Length-type rules apply to source and target alike. Words are maximal runs
//! of non-whitespace characters; "characters" are Unicode scalar values. The
//! digit ratio is digits over non-whitespace characters (0 when there are
//! none). All thresholds are inclusive.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_sidecar, Corpus, SegmentPair, Sidecar};
use crate::error::{Error, Result};
use crate::metrics::levenshtein;

pub const ORIG_ID: &str = "orig_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MaxAvgWordLen,
    MaxChars,
    MaxDigitRatio,
    MaxLongestWord,
    MaxWords,
    MinEditDistance,
    MinChars,
    MinLangProb,
    MinBicleaner,
}

impl Rule {
    pub const ALL: [Rule; 9] = [
        Rule::MaxAvgWordLen,
        Rule::MaxChars,
        Rule::MaxDigitRatio,
        Rule::MaxLongestWord,
        Rule::MaxWords,
        Rule::MinEditDistance,
        Rule::MinChars,
        Rule::MinLangProb,
        Rule::MinBicleaner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::MaxAvgWordLen => "max_avg_word_len",
            Rule::MaxChars => "max_chars",
            Rule::MaxDigitRatio => "max_digit_ratio",
            Rule::MaxLongestWord => "max_longest_word",
            Rule::MaxWords => "max_words",
            Rule::MinEditDistance => "min_edit_distance",
            Rule::MinChars => "min_chars",
            Rule::MinLangProb => "min_lang_prob",
            Rule::MinBicleaner => "min_bicleaner",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub max_avg_word_len: f64,
    pub max_chars: usize,
    pub max_digit_ratio: f64,
    pub max_longest_word: usize,
    pub max_words: usize,
    pub min_edit_distance: usize,
    pub min_chars: usize,
    /// Checked against `lang_prob_src` / `lang_prob_tgt` whenever sidecar scores are supplied.
    pub min_lang_prob: f64,
    /// Checked against `bicleaner` when set.
    pub min_bicleaner: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_avg_word_len: 15.0,
            max_chars: 500,
            max_digit_ratio: 0.15,
            max_longest_word: 28,
            max_words: 100,
            min_edit_distance: 2,
            min_chars: 5,
            min_lang_prob: 0.10,
            min_bicleaner: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a non-negative number, got {v}")))
            }
        };
        let ratio = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        non_negative("max_avg_word_len", self.max_avg_word_len)?;
        ratio("max_digit_ratio", self.max_digit_ratio)?;
        ratio("min_lang_prob", self.min_lang_prob)?;
        if let Some(b) = self.min_bicleaner {
            ratio("min_bicleaner", b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterDecision {
    pub accepted: bool,
    pub rejected_by: Vec<Rule>,
    /// Rules that rejected because a required sidecar score was absent.
    pub missing_score: Vec<Rule>,
}

/// Length statistics of one side.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SideStats {
    chars: usize,
    words: usize,
    word_chars: usize,
    longest_word: usize,
    digits: usize,
    non_space: usize,
}

impl SideStats {
    fn of(text: &str) -> Self {
        let mut s = SideStats {
            chars: 0,
            words: 0,
            word_chars: 0,
            longest_word: 0,
            digits: 0,
            non_space: 0,
        };
        let mut current = 0usize;
        for c in text.chars() {
            s.chars += 1;
            if c.is_whitespace() {
                if current > 0 {
                    s.words += 1;
                    s.longest_word = s.longest_word.max(current);
                    current = 0;
                }
            } else {
                s.non_space += 1;
                s.word_chars += 1;
                current += 1;
                if c.is_numeric() {
                    s.digits += 1;
                }
            }
        }
        if current > 0 {
            s.words += 1;
            s.longest_word = s.longest_word.max(current);
        }
        s
    }

    fn avg_word_len(&self) -> f64 {
        if self.words == 0 {
            0.0
        } else {
            self.word_chars as f64 / self.words as f64
        }
    }

    fn digit_ratio(&self) -> f64 {
        if self.non_space == 0 {
            0.0
        } else {
            self.digits as f64 / self.non_space as f64
        }
    }

    fn failures(&self, cfg: &FilterConfig, out: &mut Vec<Rule>) {
        let checks = [
            (Rule::MaxAvgWordLen, self.avg_word_len() <= cfg.max_avg_word_len),
            (Rule::MaxChars, self.chars <= cfg.max_chars),
            (Rule::MaxDigitRatio, self.digit_ratio() <= cfg.max_digit_ratio),
            (Rule::MaxLongestWord, self.longest_word <= cfg.max_longest_word),
            (Rule::MaxWords, self.words <= cfg.max_words),
            (Rule::MinChars, self.chars >= cfg.min_chars),
        ];
        out.extend(checks.into_iter().filter(|(_, ok)| !ok).map(|(r, _)| r));
    }
}

/// Evaluates every rule on one pair. `scores` are the pair's sidecar entries;
/// `None` means no sidecar was supplied, which disables the language rule.
/// A missing target is treated as empty.
pub fn filter_pair(pair: &SegmentPair, cfg: &FilterConfig, scores: Option<&BTreeMap<String, f64>>) -> FilterDecision {
    let target = pair.target.as_deref().unwrap_or("");
    let mut failed = Vec::new();
    SideStats::of(&pair.source).failures(cfg, &mut failed);
    SideStats::of(target).failures(cfg, &mut failed);
    if levenshtein(&pair.source, target) < cfg.min_edit_distance {
        failed.push(Rule::MinEditDistance);
    }

    let mut missing = Vec::new();
    let mut check_score = |rule: Rule, key: &str, threshold: f64| match scores.and_then(|s| s.get(key)) {
        Some(&v) if v >= threshold => {}
        Some(_) => failed.push(rule),
        None => {
            failed.push(rule);
            missing.push(rule);
        }
    };
    if scores.is_some() {
        check_score(Rule::MinLangProb, "lang_prob_src", cfg.min_lang_prob);
        check_score(Rule::MinLangProb, "lang_prob_tgt", cfg.min_lang_prob);
    }
    if let Some(threshold) = cfg.min_bicleaner {
        check_score(Rule::MinBicleaner, "bicleaner", threshold);
    }

    failed.sort();
    failed.dedup();
    missing.sort();
    missing.dedup();
    FilterDecision {
        accepted: failed.is_empty(),
        rejected_by: failed,
        missing_score: missing,
    }
}

/// Exact deduplication on the (source, target) pair; first occurrence wins.
pub fn dedupe(corpus: &Corpus) -> (Corpus, usize) {
    let mut seen: HashSet<(&str, Option<&str>)> = HashSet::with_capacity(corpus.len());
    let kept: Vec<SegmentPair> = corpus
        .pairs()
        .iter()
        .filter(|p| seen.insert((p.source.as_str(), p.target.as_deref())))
        .map(|p| {
            let mut p = p.clone();
            let orig = sidecar_key(&p);
            p.meta.entry(ORIG_ID.to_string()).or_insert_with(|| orig.to_string());
            p
        })
        .collect();
    let removed = corpus.len() - kept.len();
    (Corpus::new(kept), removed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub accepted: usize,
    /// Pairs failing at least one rule.
    pub rejected: usize,
    pub dedup_removed: usize,
    /// Rejections per rule; a pair failing several rules counts under each.
    pub per_rule_rejections: BTreeMap<Rule, usize>,
}

impl FilterReport {
    pub fn is_consistent(&self) -> bool {
        self.accepted + self.rejected + self.dedup_removed == self.total
    }

    pub fn render(&self) -> String {
        let pct = |n: usize| {
            if self.total == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.total as f64
            }
        };
        let mut out = format!(
            "total      {:>10}\ndeduped    {:>10}  ({:.2}%)\nrejected   {:>10}  ({:.2}%)\naccepted   {:>10}  ({:.2}%)\n",
            self.total,
            self.dedup_removed,
            pct(self.dedup_removed),
            self.rejected,
            pct(self.rejected),
            self.accepted,
            pct(self.accepted),
        );
        for (rule, n) in &self.per_rule_rejections {
            out.push_str(&format!("  {:<18} {:>10}\n", rule.name(), n));
        }
        out
    }
}

fn sidecar_key(pair: &SegmentPair) -> usize {
    pair.meta
        .get(ORIG_ID)
        .and_then(|v| v.parse().ok())
        .unwrap_or(pair.id)
}

/// Dedupes, then filters the survivors. Accepted pairs keep their relative
/// order; their original id is recorded under the `orig_id` meta key.
pub fn filter_corpus(corpus: &Corpus, cfg: &FilterConfig, sidecar: Option<&Sidecar>) -> Result<(Corpus, FilterReport)> {
    cfg.validate()?;
    corpus.targets()?;
    let (unique, dedup_removed) = dedupe(corpus);
    let empty = BTreeMap::new();
    let decisions: Vec<FilterDecision> = unique
        .pairs()
        .par_iter()
        .map(|p| {
            let scores = sidecar.map(|s| s.get(&sidecar_key(p)).unwrap_or(&empty));
            filter_pair(p, cfg, scores)
        })
        .collect();

    let mut report = FilterReport {
        total: corpus.len(),
        dedup_removed,
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (pair, decision) in unique.pairs().iter().zip(&decisions) {
        for &rule in &decision.rejected_by {
            *report.per_rule_rejections.entry(rule).or_default() += 1;
        }
        if decision.accepted {
            kept.push(pair.clone());
        } else {
            report.rejected += 1;
        }
    }
    report.accepted = kept.len();
    debug_assert!(report.is_consistent());
    Ok((Corpus::new(kept), report))
}

pub fn run_filter_pipeline(corpus: &Corpus, cfg: &FilterConfig, sidecar_path: Option<&Path>) -> Result<(Corpus, FilterReport)> {
    let sidecar = sidecar_path.map(load_sidecar).transpose()?;
    filter_corpus(corpus, cfg, sidecar.as_ref())
}
