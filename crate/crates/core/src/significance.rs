//! System evaluation and paired bootstrap resampling.
//!
//! The test is one-sided: `p = (1 + #{resamples with delta <= 0}) / (trials + 1)`
//! where delta is system B minus system A. Resample `t` draws its indices from
//! a ChaCha8 stream selected by `t`, so trials can run in any order or thread
//! layout and still give the same count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{bleu_corpus, chrf_corpus, BleuParams, ChrfParams, MetricScore};
use crate::scorer::{score_batch, ScoreRequest, Scorer};

pub const RNG_NAME: &str = "ChaCha8";
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone)]
pub enum Metric {
    Chrf(ChrfParams),
    Bleu(BleuParams),
    /// Sentence scores from an external endpoint; the corpus value is their mean.
    External { name: String, scorer: Arc<dyn Scorer> },
}

impl Metric {
    pub fn chrf() -> Self {
        Metric::Chrf(ChrfParams::default())
    }

    pub fn bleu() -> Self {
        Metric::Bleu(BleuParams::corpus())
    }

    pub fn name(&self) -> &str {
        match self {
            Metric::Chrf(_) => "chrF",
            Metric::Bleu(_) => "BLEU",
            Metric::External { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemEvaluation {
    pub system_name: String,
    pub segments: usize,
    pub per_metric: BTreeMap<String, MetricScore>,
}

pub fn evaluate_system<H, R>(
    system_name: &str,
    hypotheses: &[H],
    references: &[R],
    sources: Option<&[String]>,
    metrics: &[Metric],
) -> Result<SystemEvaluation>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment(format!(
            "{system_name}: {} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut per_metric = BTreeMap::new();
    for metric in metrics {
        let score = match metric {
            Metric::Chrf(p) => chrf_corpus(hypotheses, references, p)?,
            Metric::Bleu(p) => bleu_corpus(hypotheses, references, p)?,
            Metric::External { name, scorer } => external_score(name, scorer.as_ref(), hypotheses, references, sources)?,
        };
        if per_metric.insert(metric.name().to_string(), score).is_some() {
            return Err(Error::Config(format!("metric {} requested twice", metric.name())));
        }
    }
    Ok(SystemEvaluation {
        system_name: system_name.to_string(),
        segments: hypotheses.len(),
        per_metric,
    })
}

fn external_score<H: AsRef<str>, R: AsRef<str>>(
    name: &str,
    scorer: &dyn Scorer,
    hypotheses: &[H],
    references: &[R],
    sources: Option<&[String]>,
) -> Result<MetricScore> {
    if let Some(src) = sources {
        if src.len() != hypotheses.len() {
            return Err(Error::Alignment(format!("{} sources for {} hypotheses", src.len(), hypotheses.len())));
        }
    }
    let requests = hypotheses
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (h, r))| ScoreRequest {
            id: i as u64,
            src: sources.map(|s| s[i].clone()),
            mt: h.as_ref().to_string(),
            reference: Some(r.as_ref().to_string()),
        })
        .collect();
    let scores: Vec<f64> = score_batch(scorer, requests)
        .map_err(|source| Error::Scorer {
            context: Some(format!("metric {name}")),
            source,
        })?
        .into_iter()
        .map(|r| r.score)
        .collect();
    let corpus_value = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let caps = scorer.capabilities();
    Ok(MetricScore {
        corpus_value,
        sentence_values: Some(scores),
        signature: format!("{name}|scorer:{}|version:{}", caps.name, caps.version),
        stats: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceResult {
    pub metric_name: String,
    /// Corpus-level B minus A on the full test set.
    pub delta: f64,
    pub p_value: f64,
    pub trials: usize,
    pub alpha: f64,
    pub significant: bool,
    pub seed: u64,
    pub rng: &'static str,
}

/// Number of resamples whose statistic is `<= 0`.
fn count_non_positive(n: usize, trials: usize, seed: u64, statistic: &(dyn Fn(&[usize]) -> f64 + Sync)) -> usize {
    (0..trials)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |indices, t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                indices.clear();
                indices.extend((0..n).map(|_| rng.gen_range(0..n)));
                usize::from(statistic(indices) <= 0.0)
            },
        )
        .sum()
}

fn check_test_params(trials: usize, alpha: f64) -> Result<()> {
    if trials == 0 {
        return Err(Error::Parameter("bootstrap needs at least one trial".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn result(metric_name: &str, delta: f64, non_positive: usize, trials: usize, alpha: f64, seed: u64) -> SignificanceResult {
    let p_value = (1 + non_positive) as f64 / (trials + 1) as f64;
    SignificanceResult {
        metric_name: metric_name.to_string(),
        delta,
        p_value,
        trials,
        alpha,
        significant: p_value < alpha,
        seed,
        rng: RNG_NAME,
    }
}

fn mean_at(values: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&i| values[i]).sum::<f64>() / indices.len() as f64
}

/// Paired bootstrap on per-segment scores; the statistic is mean(B) - mean(A).
pub fn paired_bootstrap(scores_a: &[f64], scores_b: &[f64], trials: usize, alpha: f64, seed: u64) -> Result<SignificanceResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Alignment(format!(
            "paired scores differ in length: {} vs {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    if scores_a.is_empty() {
        return Err(Error::Parameter("bootstrap needs at least one segment".into()));
    }
    check_test_params(trials, alpha)?;
    let n = scores_a.len();
    let all: Vec<usize> = (0..n).collect();
    let delta = mean_at(scores_b, &all) - mean_at(scores_a, &all);
    let count = count_non_positive(n, trials, seed, &|idx| mean_at(scores_b, idx) - mean_at(scores_a, idx));
    Ok(result("scores", delta, count, trials, alpha, seed))
}

/// Bootstraps every metric shared by both evaluations. chrF and BLEU are
/// recomputed at corpus level on each resample from per-segment sufficient
/// statistics; other metrics use the mean of their segment scores.
pub fn compare_systems(
    eval_a: &SystemEvaluation,
    eval_b: &SystemEvaluation,
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<SignificanceResult>> {
    if eval_a.segments != eval_b.segments {
        return Err(Error::Config(format!(
            "{} has {} segments but {} has {}",
            eval_a.system_name, eval_a.segments, eval_b.system_name, eval_b.segments
        )));
    }
    let only_a: Vec<&String> = eval_a.per_metric.keys().filter(|k| !eval_b.per_metric.contains_key(*k)).collect();
    let only_b: Vec<&String> = eval_b.per_metric.keys().filter(|k| !eval_a.per_metric.contains_key(*k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::Config(format!(
            "metric sets differ: only in {}: {only_a:?}; only in {}: {only_b:?}",
            eval_a.system_name, eval_b.system_name
        )));
    }
    if eval_a.segments == 0 {
        return Err(Error::Parameter("cannot compare systems on zero segments".into()));
    }
    check_test_params(trials, alpha)?;
    let n = eval_a.segments;

    eval_a
        .per_metric
        .iter()
        .map(|(name, a)| {
            let b = &eval_b.per_metric[name];
            let delta = b.corpus_value - a.corpus_value;
            let count = match (&a.stats, &b.stats) {
                (Some(sa), Some(sb)) if sa.len() == n && sb.len() == n => {
                    count_non_positive(n, trials, seed, &|idx| sb.corpus_score(idx) - sa.corpus_score(idx))
                }
                _ => {
                    let (Some(va), Some(vb)) = (&a.sentence_values, &b.sentence_values) else {
                        return Err(Error::Config(format!("metric {name} has no per-segment scores")));
                    };
                    count_non_positive(n, trials, seed, &|idx| mean_at(vb, idx) - mean_at(va, idx))
                }
            };
            Ok(result(name, delta, count, trials, alpha, seed))
        })
        .collect()
}

/// Systems compared against one baseline, ready to print.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub baseline: SystemEvaluation,
    pub systems: Vec<(SystemEvaluation, Vec<SignificanceResult>)>,
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
    pub rng: &'static str,
}

impl ComparisonReport {
    pub fn build(
        baseline: SystemEvaluation,
        systems: Vec<SystemEvaluation>,
        trials: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let systems = systems
            .into_iter()
            .map(|s| {
                let sig = compare_systems(&baseline, &s, trials, alpha, seed)?;
                Ok((s, sig))
            })
            .collect::<Result<_>>()?;
        Ok(ComparisonReport {
            baseline,
            systems,
            trials,
            alpha,
            seed,
            rng: RNG_NAME,
        })
    }

    /// Rows are systems, columns metrics; `*` marks a significant difference
    /// from the baseline.
    pub fn render(&self) -> String {
        let metrics: Vec<&String> = self.baseline.per_metric.keys().collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["system".to_string()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        rows.push(header);
        let mut push = |eval: &SystemEvaluation, sig: Option<&[SignificanceResult]>| {
            let mut row = vec![eval.system_name.clone()];
            for m in &metrics {
                let mut cell = format_value(m, eval.per_metric[*m].corpus_value);
                if sig.is_some_and(|s| s.iter().any(|r| &r.metric_name == *m && r.significant)) {
                    cell.push('*');
                }
                row.push(cell);
            }
            rows.push(row);
        };
        push(&self.baseline, None);
        for (eval, sig) in &self.systems {
            push(eval, Some(sig));
        }

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out.push_str(&format!(
            "\n* p < {} vs {} (paired bootstrap, one-sided, {} trials, seed {}, {})\n",
            self.alpha, self.baseline.system_name, self.trials, self.seed, self.rng
        ));
        for (eval, sig) in &self.systems {
            for r in sig {
                out.push_str(&format!(
                    "{} {}: delta {:+.4}, p = {:.4}\n",
                    eval.system_name, r.metric_name, r.delta, r.p_value
                ));
            }
        }
        for (name, score) in &self.baseline.per_metric {
            out.push_str(&format!("{name} signature: {}\n", score.signature));
        }
        out
    }
}

fn format_value(metric: &str, v: f64) -> String {
    match metric {
        "chrF" | "BLEU" => format!("{v:.2}"),
        _ => format!("{v:.4}"),
    }
}

/// Single-system table in the same layout as [`ComparisonReport::render`].
pub fn render_evaluation(eval: &SystemEvaluation) -> String {
    let mut out = format!("system: {} ({} segments)\n", eval.system_name, eval.segments);
    for (name, score) in &eval.per_metric {
        out.push_str(&format!("{name:<12} {:>10}  {}\n", format_value(name, score.corpus_value), score.signature));
    }
    out
}
