//! Character n-gram F-score, sacreBLEU-compatible (`nw:0`, `space:no`).

use serde::{Deserialize, Serialize};

use super::{is_space, MetricScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfParams {
    pub char_order: usize,
    pub beta: f64,
    pub effective_order: bool,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams {
            char_order: 6,
            beta: 2.0,
            effective_order: true,
        }
    }
}

impl ChrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.char_order < 1 {
            return Err(Error::Parameter("chrF char_order must be >= 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Parameter(format!("chrF beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn signature(&self) -> String {
        format!(
            "chrF{}|nc:{}|nw:0|space:no|eff:{}",
            self.beta,
            self.char_order,
            if self.effective_order { "yes" } else { "no" }
        )
    }
}

/// Character n-grams of one whitespace-stripped string, orders `1..=max_order`.
///
/// Each order holds the distinct n-grams sorted lexically, as byte ranges into
/// the stripped text, with their multiplicities.
#[derive(Debug, Clone)]
pub struct NGramProfile {
    text: String,
    orders: Vec<Vec<(u32, u32, u32)>>,
}

impl NGramProfile {
    pub fn new(text: &str, max_order: usize) -> Self {
        let text: String = text.chars().filter(|c| !is_space(*c)).collect();
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let orders = (1..=max_order)
            .map(|n| {
                if n > n_chars {
                    return Vec::new();
                }
                let mut grams: Vec<(u32, u32)> = (0..=n_chars - n)
                    .map(|i| (bounds[i] as u32, bounds[i + n] as u32))
                    .collect();
                grams.sort_unstable_by(|a, b| {
                    text[a.0 as usize..a.1 as usize].cmp(&text[b.0 as usize..b.1 as usize])
                });
                let mut counted: Vec<(u32, u32, u32)> = Vec::with_capacity(grams.len());
                for (s, e) in grams {
                    match counted.last_mut() {
                        Some(last)
                            if text[last.0 as usize..last.1 as usize]
                                == text[s as usize..e as usize] =>
                        {
                            last.2 += 1
                        }
                        _ => counted.push((s, e, 1)),
                    }
                }
                counted
            })
            .collect();
        NGramProfile { text, orders }
    }

    pub fn max_order(&self) -> usize {
        self.orders.len()
    }

    /// Multiset of n-grams of order `n` with multiplicities.
    pub fn counts(&self, n: usize) -> impl Iterator<Item = (&str, u32)> {
        self.orders[n - 1]
            .iter()
            .map(|&(s, e, c)| (&self.text[s as usize..e as usize], c))
    }

    /// Total number of n-grams of order `n` (with multiplicity).
    pub fn total(&self, n: usize) -> u64 {
        self.orders[n - 1].iter().map(|g| g.2 as u64).sum()
    }

    fn matches(&self, other: &NGramProfile, n: usize) -> u64 {
        let (a, b) = (&self.orders[n - 1], &other.orders[n - 1]);
        let (mut i, mut j, mut matched) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let x = &self.text[a[i].0 as usize..a[i].1 as usize];
            let y = &other.text[b[j].0 as usize..b[j].1 as usize];
            match x.cmp(y) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    matched += a[i].2.min(b[j].2) as u64;
                    i += 1;
                    j += 1;
                }
            }
        }
        matched
    }
}

/// Per-order `[hyp, ref, match]` counts; summing these over segments gives
/// corpus statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChrfStats(pub Vec<[u64; 3]>);

impl ChrfStats {
    pub fn zeros(order: usize) -> Self {
        ChrfStats(vec![[0; 3]; order])
    }

    /// Hypothesis n-grams of an order the reference lacks entirely are not
    /// counted, so they cost nothing at corpus level either.
    pub fn between(hyp: &NGramProfile, reference: &NGramProfile) -> Self {
        let order = hyp.max_order().min(reference.max_order());
        ChrfStats(
            (1..=order)
                .map(|n| {
                    let ref_total = reference.total(n);
                    let hyp_total = if ref_total == 0 { 0 } else { hyp.total(n) };
                    [hyp_total, ref_total, hyp.matches(reference, n)]
                })
                .collect(),
        )
    }

    pub fn add(&mut self, other: &ChrfStats) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }

    pub fn score(&self, params: &ChrfParams) -> f64 {
        let factor = params.beta * params.beta;
        if params.effective_order {
            let (mut avg_prec, mut avg_rec, mut effective) = (0.0, 0.0, 0usize);
            for &[hyp, reference, matched] in &self.0 {
                if hyp > 0 && reference > 0 {
                    avg_prec += matched as f64 / hyp as f64;
                    avg_rec += matched as f64 / reference as f64;
                    effective += 1;
                }
            }
            if effective == 0 {
                return 0.0;
            }
            avg_prec /= effective as f64;
            avg_rec /= effective as f64;
            if avg_prec + avg_rec == 0.0 {
                return 0.0;
            }
            let score = (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
            100.0 * score
        } else {
            // Without effective order every order counts; empty orders get an epsilon.
            const EPS: f64 = 1e-16;
            let mut total = 0.0;
            for &[hyp, reference, matched] in &self.0 {
                let prec = if hyp > 0 { matched as f64 / hyp as f64 } else { EPS };
                let rec = if reference > 0 { matched as f64 / reference as f64 } else { EPS };
                let denom = factor * prec + rec;
                total += if denom > 0.0 { (1.0 + factor) * prec * rec / denom } else { EPS };
            }
            100.0 * total / self.0.len() as f64
        }
    }
}

pub fn chrf_sentence_stats(hypothesis: &str, reference: &str, params: &ChrfParams) -> ChrfStats {
    ChrfStats::between(
        &NGramProfile::new(hypothesis, params.char_order),
        &NGramProfile::new(reference, params.char_order),
    )
}

pub fn chrf_sentence(hypothesis: &str, reference: &str, params: &ChrfParams) -> Result<f64> {
    params.validate()?;
    Ok(chrf_sentence_stats(hypothesis, reference, params).score(params))
}

pub fn chrf_corpus<H, R>(hypotheses: &[H], references: &[R], params: &ChrfParams) -> Result<MetricScore>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    params.validate()?;
    super::check_lengths(hypotheses.len(), references.len())?;
    let mut total = ChrfStats::zeros(params.char_order);
    let mut sentence_values = Vec::with_capacity(hypotheses.len());
    let mut stats = Vec::with_capacity(hypotheses.len());
    for (h, r) in hypotheses.iter().zip(references) {
        let s = chrf_sentence_stats(h.as_ref(), r.as_ref(), params);
        sentence_values.push(s.score(params));
        total.add(&s);
        stats.push(s);
    }
    Ok(MetricScore {
        corpus_value: total.score(params),
        sentence_values: Some(sentence_values),
        signature: params.signature(),
        stats: Some(super::SentenceStats::Chrf {
            params: *params,
            stats,
        }),
    })
}
