//! BLEU with the mteval-13a tokenizer and exponential smoothing, following
//! sacreBLEU's arithmetic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{is_space, MetricScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuParams {
    pub max_order: usize,
    /// Truncate the geometric mean at the highest order with any hypothesis
    /// n-grams. Off for corpus scores, on for sentence scores.
    pub effective_order: bool,
}

impl BleuParams {
    pub fn corpus() -> Self {
        BleuParams {
            max_order: 4,
            effective_order: false,
        }
    }

    pub fn sentence() -> Self {
        BleuParams {
            max_order: 4,
            effective_order: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_order < 1 {
            return Err(Error::Parameter("BLEU max_order must be >= 1".into()));
        }
        Ok(())
    }

    pub fn signature(&self) -> String {
        let mut sig = String::from("BLEU|tok:13a|smooth:exp");
        if self.max_order != 4 {
            sig.push_str(&format!("|order:{}", self.max_order));
        }
        if self.effective_order {
            sig.push_str("|eff:yes");
        }
        sig
    }
}

impl Default for BleuParams {
    fn default() -> Self {
        BleuParams::corpus()
    }
}

fn is_13a_symbol(c: char) -> bool {
    matches!(c, '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

/// mteval-v13a tokenization as done by sacreBLEU.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let text = text.trim_end_matches(is_space);
    let mut line = text
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let chars: Vec<char> = format!(" {line} ").chars().collect();

    let mut padded = Vec::with_capacity(chars.len() * 2);
    for &c in &chars {
        if is_13a_symbol(c) {
            padded.extend([' ', c, ' ']);
        } else {
            padded.push(c);
        }
    }

    // Each rule is a left-to-right, non-overlapping two-character rewrite.
    let rewrite = |input: Vec<char>, rule: &dyn Fn(char, char) -> Option<Vec<char>>| {
        let mut out = Vec::with_capacity(input.len() + 8);
        let mut i = 0;
        while i < input.len() {
            if i + 1 < input.len() {
                if let Some(rep) = rule(input[i], input[i + 1]) {
                    out.extend(rep);
                    i += 2;
                    continue;
                }
            }
            out.push(input[i]);
            i += 1;
        }
        out
    };
    let digit = |c: char| c.is_ascii_digit();
    let punct = |c: char| c == '.' || c == ',';

    let s = rewrite(padded, &|a, b| (!digit(a) && punct(b)).then(|| vec![a, ' ', b, ' ']));
    let s = rewrite(s, &|a, b| (punct(a) && !digit(b)).then(|| vec![' ', a, ' ', b]));
    let s = rewrite(s, &|a, b| (digit(a) && b == '-').then(|| vec![a, ' ', b, ' ']));

    s.split(|c| is_space(*c))
        .filter(|t| !t.is_empty())
        .map(|t| t.iter().collect())
        .collect()
}

/// Token n-grams of orders `1..=max_order`, distinct n-grams sorted, with counts.
#[derive(Debug, Clone)]
pub struct TokenProfile {
    tokens: Vec<String>,
    orders: Vec<Vec<(u32, u32)>>,
}

impl TokenProfile {
    pub fn new(text: &str, max_order: usize) -> Self {
        TokenProfile::from_tokens(tokenize_13a(text), max_order)
    }

    pub fn from_tokens(tokens: Vec<String>, max_order: usize) -> Self {
        let orders = (1..=max_order)
            .map(|n| {
                if n > tokens.len() {
                    return Vec::new();
                }
                let mut starts: Vec<u32> = (0..=(tokens.len() - n) as u32).collect();
                starts.sort_unstable_by(|&a, &b| {
                    tokens[a as usize..a as usize + n].cmp(&tokens[b as usize..b as usize + n])
                });
                let mut counted: Vec<(u32, u32)> = Vec::with_capacity(starts.len());
                for s in starts {
                    match counted.last_mut() {
                        Some(last)
                            if tokens[last.0 as usize..last.0 as usize + n]
                                == tokens[s as usize..s as usize + n] =>
                        {
                            last.1 += 1
                        }
                        _ => counted.push((s, 1)),
                    }
                }
                counted
            })
            .collect();
        TokenProfile { tokens, orders }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn ngram(&self, n: usize, start: u32) -> &[String] {
        &self.tokens[start as usize..start as usize + n]
    }

    fn matches(&self, other: &TokenProfile, n: usize) -> u64 {
        let (a, b) = (&self.orders[n - 1], &other.orders[n - 1]);
        let (mut i, mut j, mut matched) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            match self.ngram(n, a[i].0).cmp(other.ngram(n, b[j].0)) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    matched += a[i].1.min(b[j].1) as u64;
                    i += 1;
                    j += 1;
                }
            }
        }
        matched
    }
}

/// Sufficient statistics: clipped matches and totals per order plus lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn zeros(max_order: usize) -> Self {
        BleuStats {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn between(hyp: &TokenProfile, reference: &TokenProfile, max_order: usize) -> Self {
        let hyp_len = hyp.len() as u64;
        BleuStats {
            matches: (1..=max_order).map(|n| hyp.matches(reference, n)).collect(),
            totals: (1..=max_order)
                .map(|n| (hyp_len + 1).saturating_sub(n as u64))
                .collect(),
            hyp_len,
            ref_len: reference.len() as u64,
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len < self.ref_len {
            if self.hyp_len > 0 {
                (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
            } else {
                0.0
            }
        } else {
            1.0
        }
    }

    pub fn score(&self, effective_order: bool) -> f64 {
        let max_order = self.matches.len();
        if self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let bp = self.brevity_penalty();
        let mut precisions = vec![0.0f64; max_order];
        let mut smooth = 1.0f64;
        let mut eff_order = max_order;
        for n in 0..max_order {
            if self.totals[n] == 0 {
                break;
            }
            if effective_order {
                eff_order = n + 1;
            }
            precisions[n] = if self.matches[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.totals[n] as f64)
            } else {
                100.0 * self.matches[n] as f64 / self.totals[n] as f64
            };
        }
        // A zero precision stands for log(0); sacreBLEU uses a large negative constant.
        let log_sum: f64 = precisions[..eff_order]
            .iter()
            .map(|&p| if p == 0.0 { -9_999_999_999.0 } else { p.ln() })
            .sum();
        bp * (log_sum / eff_order as f64).exp()
    }
}

pub fn bleu_sentence_stats(hypothesis: &str, reference: &str, max_order: usize) -> BleuStats {
    BleuStats::between(
        &TokenProfile::new(hypothesis, max_order),
        &TokenProfile::new(reference, max_order),
        max_order,
    )
}

pub fn bleu_sentence(hypothesis: &str, reference: &str, params: &BleuParams) -> Result<f64> {
    params.validate()?;
    Ok(bleu_sentence_stats(hypothesis, reference, params.max_order).score(params.effective_order))
}

/// Corpus BLEU over summed statistics. Per-sentence values use effective order.
pub fn bleu_corpus<H, R>(hypotheses: &[H], references: &[R], params: &BleuParams) -> Result<MetricScore>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    params.validate()?;
    super::check_lengths(hypotheses.len(), references.len())?;
    let mut total = BleuStats::zeros(params.max_order);
    let mut sentence_values = Vec::with_capacity(hypotheses.len());
    let mut stats = Vec::with_capacity(hypotheses.len());
    for (h, r) in hypotheses.iter().zip(references) {
        let s = bleu_sentence_stats(h.as_ref(), r.as_ref(), params.max_order);
        sentence_values.push(s.score(true));
        total.add(&s);
        stats.push(s);
    }
    Ok(MetricScore {
        corpus_value: total.score(params.effective_order),
        sentence_values: Some(sentence_values),
        signature: params.signature(),
        stats: Some(super::SentenceStats::Bleu {
            params: *params,
            stats,
        }),
    })
}
