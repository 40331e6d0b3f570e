//! Reference implementations written directly from the metric definitions,
//! sharing no code with the library, plus fixtures used by several tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Sentence chrF (character 6-grams, beta 2, whitespace removed) using hash
/// maps of n-gram strings.
pub fn naive_chrf(hyp: &str, reference: &str) -> f64 {
    let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<Vec<char>>();
    let (h, r) = (strip(hyp), strip(reference));
    let grams = |chars: &[char], n: usize| {
        let mut m: HashMap<String, usize> = HashMap::new();
        if chars.len() >= n {
            for w in chars.windows(n) {
                *m.entry(w.iter().collect()).or_default() += 1;
            }
        }
        m
    };
    let beta2 = 4.0;
    let (mut sum_p, mut sum_r, mut eff) = (0.0, 0.0, 0);
    for n in 1..=6 {
        let (hg, rg) = (grams(&h, n), grams(&r, n));
        let n_hyp: usize = hg.values().sum();
        let n_ref: usize = rg.values().sum();
        let matched: usize = hg.iter().map(|(g, c)| (*c).min(*rg.get(g).unwrap_or(&0))).sum();
        if n_hyp > 0 && n_ref > 0 {
            sum_p += matched as f64 / n_hyp as f64;
            sum_r += matched as f64 / n_ref as f64;
            eff += 1;
        }
    }
    if eff == 0 {
        return 0.0;
    }
    let (p, r) = (sum_p / eff as f64, sum_r / eff as f64);
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + beta2) * p * r / (beta2 * p + r)
    }
}

/// Full-matrix Levenshtein distance over chars.
pub fn naive_levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Brute-force MBR: every ordered pair scored, expectations summed in index
/// order, first maximum wins (values within a 1e-10 relative margin are
/// ties). A lone candidate without its self term keeps its self utility.
pub fn brute_force_mbr(cands: &[String], include_self: bool, u: impl Fn(&str, &str) -> f64) -> (usize, Vec<f64>) {
    let n = cands.len();
    let mut expected = Vec::with_capacity(n);
    for i in 0..n {
        let mut total = 0.0;
        let mut count = 0;
        for j in 0..n {
            if i == j && !include_self && n > 1 {
                continue;
            }
            total += u(&cands[i], &cands[j]);
            count += 1;
        }
        expected.push(total / count as f64);
    }
    let mut best = 0;
    for i in 1..n {
        if expected[i] > expected[best] + 1e-10 * expected[best].abs().max(1.0) {
            best = i;
        }
    }
    (best, expected)
}

const VOCAB: &[&str] = &["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "to", "park", "big", "red", "über", "naïve", "3.5", "!"];

/// Random candidate lists over a small vocabulary so n-grams overlap and
/// duplicates (hence ties) occur.
pub fn random_sets(count: usize, max_n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=max_n);
            let mut set: Vec<String> = Vec::with_capacity(n);
            for _ in 0..n {
                if !set.is_empty() && rng.gen_bool(0.1) {
                    let dup = set[rng.gen_range(0..set.len())].clone();
                    set.push(dup);
                } else {
                    let len = rng.gen_range(1..8);
                    let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
                    set.push(words.join(" "));
                }
            }
            set
        })
        .collect()
}

#[derive(Debug, Deserialize)]
pub struct GoldenSentence {
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub chrf: f64,
    pub bleu: f64,
}

#[derive(Debug, Deserialize)]
pub struct GoldenCorpus {
    pub indices: Vec<usize>,
    pub chrf: f64,
    pub bleu: f64,
}

#[derive(Debug, Deserialize)]
pub struct GoldenTokenization {
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct Golden {
    pub generator: String,
    pub sentences: Vec<GoldenSentence>,
    pub corpus: Vec<GoldenCorpus>,
    pub tokenize_13a: Vec<GoldenTokenization>,
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

pub fn golden() -> Golden {
    let text = std::fs::read_to_string(data_path("golden_metrics.json")).expect("golden file present");
    serde_json::from_str(&text).expect("golden file parses")
}

pub const BIN: &str = env!("CARGO_BIN_EXE_mbrkit");

/// A self-training setup driven by shell hooks: the translator is
/// `mbrkit mock-translate` over known targets, the trainer a script that
/// copies its training targets and reports two checkpoints per iteration
/// with steadily improving metrics. Creating `fail-at-<n>` in the root makes
/// the trainer crash in iteration `n`.
pub struct LoopFixture {
    pub root: tempfile::TempDir,
}

const TRAINER: &str = r#"#!/bin/sh
set -e
while [ $# -gt 0 ]; do
  case "$1" in
    --train-src) src=$2 ;;
    --train-tgt) tgt=$2 ;;
    --init-model) init=$2 ;;
    --out-dir) out=$2 ;;
    *) echo "unexpected flag $1" >&2; exit 64 ;;
  esac
  shift 2
done
case "$init" in
  base) n=1 ;;
  *) n=$(( $(echo "$init" | sed 's/^model-\([0-9]*\).*/\1/') + 1 )) ;;
esac
if [ -e "@ROOT@/fail-at-$n" ]; then
  echo "simulated crash in iteration $n" >&2
  exit 3
fi
test -s "$src"
cp "$tgt" "$out/model-$n.txt"
awk -v n="$n" 'BEGIN {
  printf "model-%d-a\tcomet\t%.3f\nmodel-%d-a\tchrF\t%.1f\nmodel-%d-a\tBLEU\t%.1f\n", n, 0.80 + n / 100, n, 50 + n, n, 20 + n
  printf "model-%d-b\tcomet\t%.3f\nmodel-%d-b\tchrF\t%.1f\nmodel-%d-b\tBLEU\t%.1f\n", n, 0.805 + n / 100, n, 50.5 + n, n, 20.5 + n
}' > "$out/checkpoints.tsv"
"#;

impl LoopFixture {
    pub fn new(segments: usize, max_iterations: usize) -> Self {
        let root = tempfile::TempDir::new().unwrap();
        let dir = root.path();
        let corpus = mbrkit::pipeline::mock_corpus(segments, 77);
        let sources: Vec<&str> = corpus.sources().collect();
        let targets = corpus.targets().unwrap();
        std::fs::write(dir.join("train.src"), sources.join("\n") + "\n").unwrap();
        std::fs::write(dir.join("truth.tgt"), targets.join("\n") + "\n").unwrap();
        std::fs::write(dir.join("trainer.sh"), TRAINER.replace("@ROOT@", &dir.display().to_string())).unwrap();
        let config = format!(
            "# desk-scale loop\n\
             max_iterations = {max_iterations}\n\
             utility = chrf\n\
             selection_metric = comet\n\
             monitored_metrics = chrF, BLEU\n\
             top_k = 8\n\
             n_candidates = 8\n\
             trainer_cmd = sh {trainer}\n\
             translator_cmd = {BIN} mock-translate --truth {truth} --noise 0.15 --seed 3\n\
             train_source = train.src\n\
             work_dir = work\n\
             baseline_model = base\n\
             baseline.comet = 0.80\n\
             baseline.chrF = 50.0\n\
             baseline.BLEU = 20.0\n",
            trainer = dir.join("trainer.sh").display(),
            truth = dir.join("truth.tgt").display(),
        );
        std::fs::write(dir.join("loop.cfg"), config).unwrap();
        LoopFixture { root }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.path().join("loop.cfg")
    }

    pub fn work_dir(&self) -> PathBuf {
        self.root.path().join("work")
    }

    pub fn fail_at(&self, iteration: usize, on: bool) {
        let marker = self.root.path().join(format!("fail-at-{iteration}"));
        if on {
            std::fs::write(marker, "").unwrap();
        } else {
            std::fs::remove_file(marker).unwrap();
        }
    }

    /// Every file under the work directory, keyed by relative path, with the
    /// work directory's own path masked so runs in different places compare.
    pub fn snapshot(&self) -> std::collections::BTreeMap<String, String> {
        let work = self.work_dir();
        let mask = work.display().to_string();
        let mut out = std::collections::BTreeMap::new();
        let mut stack = vec![work.clone()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(&work).unwrap().display().to_string();
                    out.insert(rel, std::fs::read_to_string(&p).unwrap().replace(&mask, "<work>"));
                }
            }
        }
        out
    }
}
