//! Iterative self-training: translate the training source into N-best lists,
//! pick targets by MBR, fine-tune through an external trainer, keep the best
//! checkpoint, repeat until a monitored metric drops.
//!
//! Every iteration writes into its own `iter-NNN/` directory under the work
//! directory and finishes by writing `iter-NNN/state.json`; completed
//! iterations are never touched again. `state.json` at the top of the work
//! directory points at the latest completed iteration, so an interrupted run
//! resumes from there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_candidate_sets, write_lines, write_parallel_corpus, CandidateSet, Corpus};
use crate::error::{Error, Result};
use crate::mbr::{mbr_decode_corpus, synthetic_corpus, DecodeOptions, Utility};

pub const CHECKPOINTS_FILE: &str = "checkpoints.tsv";
pub const STATE_FILE: &str = "state.json";

/// Loop settings. Paths are absolute or relative to the process working directory.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub utility: Utility,
    pub include_self: bool,
    /// Metric used to pick a checkpoint (the MBR utility's metric).
    pub selection_metric: String,
    /// Metrics whose decrease stops the loop.
    pub monitored_metrics: Vec<String>,
    pub top_k: usize,
    /// Candidates requested from the translator per segment.
    pub n_candidates: usize,
    pub trainer_cmd: String,
    pub translator_cmd: String,
    pub train_source: PathBuf,
    pub valid_source: Option<PathBuf>,
    pub valid_target: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub baseline_model: String,
    /// Validation scores of the baseline model, one per tracked metric.
    pub baseline_metrics: BTreeMap<String, f64>,
}

impl LoopConfig {
    /// The selection metric followed by the monitored ones.
    pub fn tracked_metrics(&self) -> Vec<String> {
        std::iter::once(self.selection_metric.clone())
            .chain(self.monitored_metrics.iter().cloned())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.monitored_metrics.contains(&self.selection_metric) {
            return Err(Error::Config(format!(
                "selection metric {} must not also be monitored",
                self.selection_metric
            )));
        }
        if self.top_k < 1 || self.n_candidates < 1 {
            return Err(Error::Config("top_k and n_candidates must be at least 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        for m in self.tracked_metrics() {
            if !self.baseline_metrics.contains_key(&m) {
                return Err(Error::Config(format!("no baseline value for metric {m} (set baseline.{m})")));
            }
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment. Relative paths
    /// resolve against the file's directory. The utility is given by
    /// `utility` (`chrf`, `bleu`, `edit`); `external` needs `scorer`.
    pub fn from_file(path: &Path, scorer: Option<Utility>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string(), scorer)
    }

    pub fn parse(text: &str, base: &Path, context: &str, scorer: Option<Utility>) -> Result<Self> {
        let mut kv: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format(context, i + 1, format!("expected key = value, got {line:?}")));
            };
            if kv.insert(k.trim().to_string(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::format(context, i + 1, format!("duplicate key {}", k.trim())));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let required = |v: Option<(String, usize)>, key: &str| {
            v.map(|(v, _)| v).ok_or_else(|| Error::Config(format!("{context}: missing required key {key}")))
        };
        let number = |v: Option<(String, usize)>, key: &str, default: usize| -> Result<usize> {
            match v {
                None => Ok(default),
                Some((v, line)) => v
                    .parse()
                    .map_err(|_| Error::format(context, line, format!("{key} must be a non-negative integer"))),
            }
        };
        let path_of = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let max_iterations = number(take("max_iterations"), "max_iterations", 3)?;
        let top_k = number(take("top_k"), "top_k", 50)?;
        let n_candidates = number(take("n_candidates"), "n_candidates", top_k)?;
        let include_self = match take("include_self") {
            None => true,
            Some((v, line)) => v
                .parse()
                .map_err(|_| Error::format(context, line, "include_self must be true or false"))?,
        };
        let utility = match take("utility").map(|(v, l)| (v.to_ascii_lowercase(), l)) {
            None => scorer.unwrap_or_else(Utility::chrf),
            Some((v, line)) => match v.as_str() {
                "chrf" => Utility::chrf(),
                "bleu" => Utility::bleu(),
                "edit" | "neg-edit-distance" => Utility::NegEditDistance,
                "external" => scorer.ok_or_else(|| Error::format(context, line, "utility external needs a scorer command"))?,
                other => return Err(Error::format(context, line, format!("unknown utility {other:?}"))),
            },
        };
        let selection_metric = required(take("selection_metric"), "selection_metric")?;
        let monitored_metrics = required(take("monitored_metrics"), "monitored_metrics")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let trainer_cmd = required(take("trainer_cmd"), "trainer_cmd")?;
        let translator_cmd = required(take("translator_cmd"), "translator_cmd")?;
        let train_source = path_of(required(take("train_source"), "train_source")?);
        let valid_source = take("valid_source").map(|(v, _)| path_of(v));
        let valid_target = take("valid_target").map(|(v, _)| path_of(v));
        let work_dir = path_of(required(take("work_dir"), "work_dir")?);
        let baseline_model = required(take("baseline_model"), "baseline_model")?;

        let mut baseline_metrics = BTreeMap::new();
        for (key, (value, line)) in std::mem::take(&mut kv) {
            let Some(metric) = key.strip_prefix("baseline.") else {
                return Err(Error::format(context, line, format!("unknown key {key}")));
            };
            let v: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::format(context, line, format!("{key} must be a number")))?;
            baseline_metrics.insert(metric.to_string(), v);
        }

        let cfg = LoopConfig {
            max_iterations,
            utility,
            include_self,
            selection_metric,
            monitored_metrics,
            top_k,
            n_candidates,
            trainer_cmd,
            translator_cmd,
            train_source,
            valid_source,
            valid_target,
            work_dir,
            baseline_model,
            baseline_metrics,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: usize,
    /// Directory holding the synthetic corpus of the latest iteration.
    pub dataset_ref: Option<PathBuf>,
    pub model_ref: String,
    /// Model selected at each iteration, index 0 being the baseline.
    pub models: Vec<String>,
    /// Validation scores per metric, one per iteration including the baseline.
    pub history: BTreeMap<String, Vec<f64>>,
    /// Segments in the synthetic corpus of each completed iteration.
    pub segments: Vec<usize>,
}

impl IterationState {
    pub fn initial(cfg: &LoopConfig) -> Self {
        IterationState {
            iteration: 0,
            dataset_ref: None,
            model_ref: cfg.baseline_model.clone(),
            models: vec![cfg.baseline_model.clone()],
            history: cfg
                .tracked_metrics()
                .into_iter()
                .map(|m| {
                    let v = cfg.baseline_metrics[&m];
                    (m, vec![v])
                })
                .collect(),
            segments: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.line(), e.to_string()))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// The external translator and trainer.
pub trait Hooks {
    /// Writes `n` candidates per line of `input` to `out` in the candidate format.
    fn translate(&self, model_ref: &str, input: &Path, n: usize, out: &Path) -> Result<()>;

    /// Fine-tunes from `init_model`; must leave `checkpoints.tsv` in `out_dir`.
    fn train(&self, train_src: &Path, train_tgt: &Path, init_model: &str, out_dir: &Path) -> Result<()>;
}

/// Hooks run as shell-quoted command templates with the contract flags appended.
#[derive(Debug, Clone)]
pub struct CommandHooks {
    pub translator_cmd: String,
    pub trainer_cmd: String,
    /// Extra environment for both hooks.
    pub env: Vec<(String, String)>,
}

impl CommandHooks {
    pub fn from_config(cfg: &LoopConfig) -> Self {
        let mut env = Vec::new();
        if let Some(p) = &cfg.valid_source {
            env.push(("MBR_VALID_SRC".into(), p.display().to_string()));
        }
        if let Some(p) = &cfg.valid_target {
            env.push(("MBR_VALID_TGT".into(), p.display().to_string()));
        }
        CommandHooks {
            translator_cmd: cfg.translator_cmd.clone(),
            trainer_cmd: cfg.trainer_cmd.clone(),
            env,
        }
    }

    fn run(&self, hook: &str, template: &str, args: &[(&str, String)]) -> Result<()> {
        let argv = shlex::split(template)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Config(format!("cannot parse {hook} command {template:?}")))?;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        for (flag, value) in args {
            cmd.arg(flag).arg(value);
        }
        cmd.envs(self.env.iter().map(|(k, v)| (k, v)));
        let output = cmd.output().map_err(|e| Error::Hook {
            hook: hook.into(),
            status: "not started".into(),
            output: format!("{}: {e}", argv[0]),
        })?;
        if !output.status.success() {
            let mut text = String::from_utf8_lossy(&output.stderr).into_owned();
            text.push_str(&String::from_utf8_lossy(&output.stdout));
            let tail: String = text.chars().rev().take(2000).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(Error::Hook {
                hook: hook.into(),
                status: output.status.to_string(),
                output: tail.trim().to_string(),
            });
        }
        Ok(())
    }
}

impl Hooks for CommandHooks {
    fn translate(&self, model_ref: &str, input: &Path, n: usize, out: &Path) -> Result<()> {
        self.run(
            "translator",
            &self.translator_cmd,
            &[
                ("--model", model_ref.to_string()),
                ("--input", input.display().to_string()),
                ("--n", n.to_string()),
                ("--out", out.display().to_string()),
            ],
        )
    }

    fn train(&self, train_src: &Path, train_tgt: &Path, init_model: &str, out_dir: &Path) -> Result<()> {
        self.run(
            "trainer",
            &self.trainer_cmd,
            &[
                ("--train-src", train_src.display().to_string()),
                ("--train-tgt", train_tgt.display().to_string()),
                ("--init-model", init_model.to_string()),
                ("--out-dir", out_dir.display().to_string()),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub checkpoint_ref: String,
    pub metrics: BTreeMap<String, f64>,
}

/// Parses `checkpoint_ref<TAB>metric<TAB>value` lines, keeping checkpoints
/// in order of first appearance, and checks every `required` metric is present.
pub fn parse_checkpoints(text: &str, context: &str, required: &[String]) -> Result<Vec<Checkpoint>> {
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [reference, metric, value] = fields[..] else {
            return Err(Error::format(context, i + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let value: f64 = value
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::format(context, i + 1, format!("bad metric value {value:?}")))?;
        let reference = reference.trim();
        match checkpoints.iter_mut().find(|c| c.checkpoint_ref == reference) {
            Some(c) => {
                c.metrics.insert(metric.trim().to_string(), value);
            }
            None => checkpoints.push(Checkpoint {
                checkpoint_ref: reference.to_string(),
                metrics: BTreeMap::from([(metric.trim().to_string(), value)]),
            }),
        }
    }
    if checkpoints.is_empty() {
        return Err(Error::Contract(format!("{context} lists no checkpoints")));
    }
    for c in &checkpoints {
        if let Some(m) = required.iter().find(|m| !c.metrics.contains_key(*m)) {
            return Err(Error::Contract(format!("{context}: checkpoint {} has no value for {m}", c.checkpoint_ref)));
        }
    }
    Ok(checkpoints)
}

/// MBR-selected targets for every training segment.
pub fn build_synthetic_dataset(corpus: &Corpus, sets: &[CandidateSet], cfg: &LoopConfig) -> Result<Corpus> {
    let mut covered = vec![false; corpus.len()];
    let mut unknown = Vec::new();
    for s in sets {
        match covered.get_mut(s.segment_id()) {
            Some(c) => *c = true,
            None => unknown.push(s.segment_id()),
        }
    }
    let missing: Vec<usize> = covered.iter().enumerate().filter(|(_, c)| !**c).map(|(i, _)| i).collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(Error::Alignment(format!(
            "candidate sets do not cover the corpus: missing segments {missing:?}, unknown segments {unknown:?}"
        )));
    }
    let options = DecodeOptions {
        include_self: cfg.include_self,
        top_k: Some(cfg.top_k),
    };
    let results = mbr_decode_corpus(sets, Some(corpus), &cfg.utility, options)?;
    synthetic_corpus(corpus, &results)
}

pub fn iteration_dir(work_dir: &Path, iteration: usize) -> PathBuf {
    work_dir.join(format!("iter-{iteration:03}"))
}

/// Runs one translate / select / train / pick-checkpoint round.
pub fn run_iteration(state: &IterationState, cfg: &LoopConfig, corpus: &Corpus, hooks: &dyn Hooks) -> Result<IterationState> {
    let next = state.iteration + 1;
    run_iteration_inner(state, cfg, corpus, hooks, next).map_err(|e| Error::Iteration {
        iteration: next,
        source: Box::new(e),
    })
}

fn run_iteration_inner(
    state: &IterationState,
    cfg: &LoopConfig,
    corpus: &Corpus,
    hooks: &dyn Hooks,
    next: usize,
) -> Result<IterationState> {
    let dir = iteration_dir(&cfg.work_dir, next);
    if dir.join(STATE_FILE).exists() {
        return Err(Error::Config(format!("{} is already complete; refusing to overwrite", dir.display())));
    }
    if dir.exists() {
        // Left over from an interrupted run.
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let input = dir.join("train.src");
    write_lines(&input, corpus.sources())?;
    let (src, tgt) = (dir.join("synthetic.src"), dir.join("synthetic.tgt"));

    let mut new_state = state.clone();
    new_state.iteration = next;
    new_state.dataset_ref = Some(dir.clone());

    if corpus.is_empty() {
        write_lines(&src, std::iter::empty())?;
        write_lines(&tgt, std::iter::empty())?;
        new_state.models.push(state.model_ref.clone());
        for values in new_state.history.values_mut() {
            let last = *values.last().expect("history starts with the baseline");
            values.push(last);
        }
        new_state.segments.push(0);
    } else {
        let candidates = dir.join("candidates.jsonl");
        hooks.translate(&state.model_ref, &input, cfg.n_candidates, &candidates)?;
        let sets = load_candidate_sets(&candidates)?;
        let synthetic = build_synthetic_dataset(corpus, &sets, cfg)?;
        write_parallel_corpus(&synthetic, &src, &tgt)?;

        let train_dir = dir.join("train");
        fs::create_dir_all(&train_dir).map_err(|e| Error::io(&train_dir, e))?;
        hooks.train(&src, &tgt, &state.model_ref, &train_dir)?;
        let ckpt_path = train_dir.join(CHECKPOINTS_FILE);
        let text = fs::read_to_string(&ckpt_path)
            .map_err(|e| Error::Contract(format!("trainer did not write {}: {e}", ckpt_path.display())))?;
        let checkpoints = parse_checkpoints(&text, &ckpt_path.display().to_string(), &cfg.tracked_metrics())?;
        let best = checkpoints
            .iter()
            .enumerate()
            .fold(0, |best, (i, c)| {
                if c.metrics[&cfg.selection_metric] > checkpoints[best].metrics[&cfg.selection_metric] {
                    i
                } else {
                    best
                }
            });
        let chosen = &checkpoints[best];
        new_state.model_ref = chosen.checkpoint_ref.clone();
        new_state.models.push(chosen.checkpoint_ref.clone());
        for (metric, values) in new_state.history.iter_mut() {
            values.push(chosen.metrics[metric]);
        }
        new_state.segments.push(synthetic.len());
    }

    new_state.save(&dir.join(STATE_FILE))?;
    new_state.save(&cfg.work_dir.join(STATE_FILE))?;
    Ok(new_state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    Regression { metrics: Vec<String> },
    MaxIterations,
    EmptyCorpus,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Regression { metrics } => write!(f, "regression in {}", metrics.join(", ")),
            StopReason::MaxIterations => f.write_str("max_iterations reached"),
            StopReason::EmptyCorpus => f.write_str("empty training corpus"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum StopDecision {
    Continue,
    Stop {
        reason: StopReason,
        /// Iteration whose model is the loop's answer.
        final_iteration: usize,
        final_model: String,
    },
}

/// Stops when any monitored metric fell below its previous-iteration value
/// (answer: the previous model), or when `max_iterations` is reached.
pub fn check_stopping(state: &IterationState, cfg: &LoopConfig) -> StopDecision {
    let it = state.iteration;
    if it == 0 {
        return StopDecision::Continue;
    }
    let regressed: Vec<String> = cfg
        .monitored_metrics
        .iter()
        .filter(|m| {
            state
                .history
                .get(*m)
                .is_some_and(|h| h.len() > it && h[it] < h[it - 1])
        })
        .cloned()
        .collect();
    if !regressed.is_empty() {
        return StopDecision::Stop {
            reason: StopReason::Regression { metrics: regressed },
            final_iteration: it - 1,
            final_model: state.models[it - 1].clone(),
        };
    }
    if state.segments.last() == Some(&0) {
        return StopDecision::Stop {
            reason: StopReason::EmptyCorpus,
            final_iteration: it,
            final_model: state.model_ref.clone(),
        };
    }
    if it >= cfg.max_iterations {
        return StopDecision::Stop {
            reason: StopReason::MaxIterations,
            final_iteration: it,
            final_model: state.model_ref.clone(),
        };
    }
    StopDecision::Continue
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopOutcome {
    pub state: IterationState,
    pub reason: StopReason,
    pub final_iteration: usize,
    pub final_model: String,
}

impl LoopOutcome {
    /// One row per iteration (baseline first), one column per tracked metric.
    pub fn render_report(&self, cfg: &LoopConfig) -> String {
        let metrics = cfg.tracked_metrics();
        let mut out = String::from("iteration\tmodel\tsegments");
        for m in &metrics {
            out.push('\t');
            out.push_str(m);
        }
        out.push('\n');
        for i in 0..=self.state.iteration {
            let label = if i == 0 { "baseline".to_string() } else { format!("iter{i}") };
            let segments = if i == 0 { "-".to_string() } else { self.state.segments[i - 1].to_string() };
            out.push_str(&format!("{label}\t{}\t{segments}", self.state.models[i]));
            for m in &metrics {
                out.push_str(&format!("\t{}", self.state.history[m][i]));
            }
            if i == self.final_iteration {
                out.push_str("\t<- selected");
            }
            out.push('\n');
        }
        out.push_str(&format!("# stopped: {}\n", self.reason));
        out
    }
}

/// Iterates until [`check_stopping`] says stop, resuming from
/// `work_dir/state.json` when present.
pub fn run_loop(cfg: &LoopConfig, corpus: &Corpus, hooks: &dyn Hooks) -> Result<LoopOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let state_path = cfg.work_dir.join(STATE_FILE);
    let mut state = if state_path.exists() {
        let s = IterationState::load(&state_path)?;
        if s.models.first() != Some(&cfg.baseline_model) {
            return Err(Error::Config(format!(
                "{} belongs to a run with a different baseline model",
                state_path.display()
            )));
        }
        s
    } else {
        let s = IterationState::initial(cfg);
        s.save(&state_path)?;
        s
    };
    loop {
        if let StopDecision::Stop {
            reason,
            final_iteration,
            final_model,
        } = check_stopping(&state, cfg)
        {
            let outcome = LoopOutcome {
                state,
                reason,
                final_iteration,
                final_model,
            };
            let report = cfg.work_dir.join("report.tsv");
            fs::write(&report, outcome.render_report(cfg)).map_err(|e| Error::io(&report, e))?;
            return Ok(outcome);
        }
        state = run_iteration(&state, cfg, corpus, hooks)?;
    }
}

const WORDS: &[&str] = &[
    "the", "patient", "doctor", "received", "treatment", "hospital", "blood", "pressure", "was", "measured", "after",
    "before", "daily", "dose", "of", "medicine", "symptoms", "include", "fever", "and", "cough", "report", "shows",
    "results", "clinical", "trial", "significant", "improvement", "in", "group", "children", "adults", "with",
    "chronic", "disease", "should", "avoid", "exercise", "during", "recovery", "period", "new", "study", "found",
    "that", "risk", "increased", "water", "food", "every", "morning", "two", "weeks", "later", "they", "returned",
];

/// A seeded monolingual-style corpus of short sentences with targets, for
/// desk-scale experiments.
pub fn mock_corpus(segments: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(6..16);
        let mut words: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        if rng.gen_bool(0.3) {
            words.push("42");
        }
        let mut s = words.join(" ");
        s.push('.');
        s
    };
    Corpus::from_texts((0..segments).map(|_| {
        let src = sentence(&mut rng);
        let tgt = sentence(&mut rng);
        (src, Some(tgt))
    }))
}

/// Stand-in for beam search: `n` noisy copies of each target.
///
/// Candidate `r` gets independent per-character edits (substitution, deletion
/// or insertion) at rate `noise_rate * (0.5 + u) * (1 + r / n)` with `u`
/// uniform in `[0, 1)`, so later ranks are noisier on average but not
/// uniformly. Each segment draws from its own seeded stream.
pub fn mock_translate(corpus: &Corpus, n: usize, noise_rate: f64, seed: u64) -> Result<Vec<CandidateSet>> {
    if n == 0 {
        return Err(Error::Parameter("mock_translate needs n >= 1".into()));
    }
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Parameter(format!("noise_rate must lie in [0, 1], got {noise_rate}")));
    }
    let targets = corpus.targets()?;
    targets
        .iter()
        .enumerate()
        .map(|(id, target)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64);
            let chars: Vec<char> = target.chars().collect();
            let candidates = (0..n)
                .map(|rank| {
                    let scale: f64 = 0.5 + rng.gen::<f64>();
                    let rate = (noise_rate * scale * (1.0 + rank as f64 / n as f64)).min(1.0);
                    perturb(&chars, rate, &mut rng)
                })
                .collect();
            CandidateSet::new(id, candidates, None)
        })
        .collect()
}

fn perturb(chars: &[char], rate: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(chars.len() + 8);
    for &c in chars {
        if rate > 0.0 && rng.gen_bool(rate) {
            let pick = chars[rng.gen_range(0..chars.len())];
            match rng.gen_range(0..4) {
                0 | 1 => out.push(pick),
                2 => {}
                _ => {
                    out.push(c);
                    out.push(pick);
                }
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use tempfile::TempDir;

    fn config(work_dir: &Path, max_iterations: usize) -> LoopConfig {
        LoopConfig {
            max_iterations,
            utility: Utility::chrf(),
            include_self: true,
            selection_metric: "comet".into(),
            monitored_metrics: vec!["chrF".into(), "BLEU".into()],
            top_k: 50,
            n_candidates: 4,
            trainer_cmd: String::new(),
            translator_cmd: String::new(),
            train_source: work_dir.join("train.src"),
            valid_source: None,
            valid_target: None,
            work_dir: work_dir.to_path_buf(),
            baseline_model: "base".into(),
            baseline_metrics: BTreeMap::from([("comet".into(), 0.80), ("chrF".into(), 50.0), ("BLEU".into(), 20.0)]),
        }
    }

    /// In-process hooks: mock candidates and a scripted list of checkpoint files.
    struct Scripted {
        truth: Corpus,
        checkpoints: Vec<String>,
        calls: RefCell<usize>,
    }

    impl Hooks for Scripted {
        fn translate(&self, _model: &str, _input: &Path, n: usize, out: &Path) -> Result<()> {
            let sets = mock_translate(&self.truth, n, 0.2, 1)?;
            crate::corpus::write_candidate_sets(&sets, out)
        }
        fn train(&self, _src: &Path, _tgt: &Path, _init: &str, out_dir: &Path) -> Result<()> {
            let i = *self.calls.borrow();
            *self.calls.borrow_mut() += 1;
            fs::write(out_dir.join(CHECKPOINTS_FILE), &self.checkpoints[i]).unwrap();
            Ok(())
        }
    }

    fn ckpts(rows: &[(&str, f64, f64, f64)]) -> String {
        rows.iter()
            .map(|(r, comet, chrf, bleu)| format!("{r}\tcomet\t{comet}\n{r}\tchrF\t{chrf}\n{r}\tBLEU\t{bleu}\n"))
            .collect()
    }

    fn history_state(chrf: &[f64]) -> IterationState {
        let it = chrf.len() - 1;
        IterationState {
            iteration: it,
            dataset_ref: None,
            model_ref: format!("m{it}"),
            models: (0..=it).map(|i| format!("m{i}")).collect(),
            history: BTreeMap::from([
                ("chrF".into(), chrf.to_vec()),
                ("BLEU".into(), (0..=it).map(|i| 20.0 + i as f64).collect()),
                ("comet".into(), (0..=it).map(|i| 0.8 + i as f64 / 100.0).collect()),
            ]),
            segments: vec![10; it],
        }
    }

    #[test]
    fn stops_on_regression_and_keeps_previous_model() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 10);
        assert_eq!(check_stopping(&history_state(&[52.0, 52.7]), &cfg), StopDecision::Continue);
        assert_eq!(check_stopping(&history_state(&[52.0, 52.7, 52.8]), &cfg), StopDecision::Continue);
        assert_eq!(
            check_stopping(&history_state(&[52.0, 52.7, 52.8, 52.6]), &cfg),
            StopDecision::Stop {
                reason: StopReason::Regression {
                    metrics: vec!["chrF".into()]
                },
                final_iteration: 2,
                final_model: "m2".into(),
            }
        );
    }

    #[test]
    fn selection_metric_drop_does_not_stop() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 10);
        let mut s = history_state(&[50.0, 51.0]);
        s.history.get_mut("comet").unwrap()[1] = 0.1;
        assert_eq!(check_stopping(&s, &cfg), StopDecision::Continue);
    }

    #[test]
    fn stops_at_max_iterations() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 2);
        assert!(matches!(
            check_stopping(&history_state(&[50.0, 51.0, 52.0]), &cfg),
            StopDecision::Stop { reason: StopReason::MaxIterations, final_iteration: 2, .. }
        ));
    }

    #[test]
    fn checkpoint_parsing_and_contract() {
        let req = vec!["comet".to_string(), "chrF".to_string()];
        let c = parse_checkpoints("a\tcomet\t0.8\na\tchrF\t50\nb\tcomet\t0.9\nb\tchrF\t51\n", "x", &req).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].checkpoint_ref, "b");
        assert!(matches!(parse_checkpoints("a\tcomet\t0.8\n", "x", &req), Err(Error::Contract(_))));
        assert!(matches!(parse_checkpoints("", "x", &req), Err(Error::Contract(_))));
        assert!(matches!(parse_checkpoints("a\tcomet\n", "x", &req), Err(Error::Format { .. })));
    }

    #[test]
    fn iteration_picks_best_checkpoint() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let truth = mock_corpus(5, 3);
        let hooks = Scripted {
            truth: truth.clone(),
            checkpoints: vec![ckpts(&[("c1", 0.85, 51.0, 21.0), ("c2", 0.87, 50.0, 20.5), ("c3", 0.86, 52.0, 22.0)])],
            calls: RefCell::new(0),
        };
        let s0 = IterationState::initial(&cfg);
        let s1 = run_iteration(&s0, &cfg, &truth, &hooks).unwrap();
        assert_eq!(s1.iteration, 1);
        assert_eq!(s1.model_ref, "c2");
        assert_eq!(s1.history["chrF"], [50.0, 50.0]);
        assert_eq!(s1.history["comet"], [0.80, 0.87]);
        assert!(iteration_dir(dir.path(), 1).join("synthetic.tgt").exists());
        assert_eq!(IterationState::load(&dir.path().join(STATE_FILE)).unwrap(), s1);
    }

    #[test]
    fn missing_metric_is_contract_error_with_iteration() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let truth = mock_corpus(3, 3);
        let hooks = Scripted {
            truth: truth.clone(),
            checkpoints: vec!["c1\tcomet\t0.9\n".into()],
            calls: RefCell::new(0),
        };
        let err = run_iteration(&IterationState::initial(&cfg), &cfg, &truth, &hooks).unwrap_err();
        assert!(matches!(&err, Error::Iteration { iteration: 1, source } if matches!(**source, Error::Contract(_))), "{err}");
    }

    #[test]
    fn coverage_gap_lists_segments() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let corpus = mock_corpus(3, 1);
        let sets = mock_translate(&corpus, 2, 0.1, 1).unwrap();
        let err = build_synthetic_dataset(&corpus, &sets[..2], &cfg).unwrap_err();
        assert!(err.to_string().contains("[2]"), "{err}");
        assert!(build_synthetic_dataset(&Corpus::default(), &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn single_candidate_sets_pass_through() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let corpus = mock_corpus(4, 2);
        let sets = mock_translate(&corpus, 1, 0.3, 5).unwrap();
        let synthetic = build_synthetic_dataset(&corpus, &sets, &cfg).unwrap();
        let firsts: Vec<&str> = sets.iter().map(|s| s.candidates()[0].as_str()).collect();
        assert_eq!(synthetic.targets().unwrap(), firsts);
    }

    #[test]
    fn loop_stops_on_scripted_regression() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 10);
        let truth = mock_corpus(4, 9);
        let hooks = Scripted {
            truth: truth.clone(),
            checkpoints: vec![
                ckpts(&[("i1", 0.86, 52.7, 21.0)]),
                ckpts(&[("i2", 0.88, 52.8, 21.5)]),
                ckpts(&[("i3", 0.89, 52.6, 21.9)]),
            ],
            calls: RefCell::new(0),
        };
        let out = run_loop(&cfg, &truth, &hooks).unwrap();
        assert_eq!(out.state.iteration, 3);
        assert_eq!((out.final_iteration, out.final_model.as_str()), (2, "i2"));
        let report = fs::read_to_string(dir.path().join("report.tsv")).unwrap();
        assert_eq!(report.lines().count(), 6, "{report}");
        assert!(report.contains("iter2\ti2\t4\t0.88\t52.8\t21.5\t<- selected"), "{report}");
    }

    #[test]
    fn empty_corpus_is_a_single_no_op_iteration() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 5);
        let hooks = Scripted {
            truth: Corpus::default(),
            checkpoints: vec![],
            calls: RefCell::new(0),
        };
        let out = run_loop(&cfg, &Corpus::default(), &hooks).unwrap();
        assert_eq!(out.state.iteration, 1);
        assert_eq!(out.reason, StopReason::EmptyCorpus);
        assert_eq!(out.state.segments, [0]);
        assert_eq!(*hooks.calls.borrow(), 0);
    }

    struct BadTranslator;

    impl Hooks for BadTranslator {
        fn translate(&self, _model: &str, _input: &Path, _n: usize, out: &Path) -> Result<()> {
            fs::write(out, "{\"segment_id\": 0, \"rank\": 0}\n").unwrap();
            Ok(())
        }
        fn train(&self, _src: &Path, _tgt: &Path, _init: &str, _out_dir: &Path) -> Result<()> {
            unreachable!("training must not start after a bad candidate file")
        }
    }

    #[test]
    fn malformed_candidates_surface_with_iteration() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let err = run_loop(&cfg, &mock_corpus(2, 1), &BadTranslator).unwrap_err();
        match &err {
            Error::Iteration { iteration: 1, source } => assert!(matches!(**source, Error::Format { line: 1, .. }), "{err}"),
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().starts_with("iteration 1: "), "{err}");
    }

    #[test]
    fn max_iterations_one_runs_exactly_once() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 1);
        let truth = mock_corpus(3, 2);
        let hooks = Scripted {
            truth: truth.clone(),
            checkpoints: vec![ckpts(&[("only", 0.1, 1.0, 1.0)])],
            calls: RefCell::new(0),
        };
        let out = run_loop(&cfg, &truth, &hooks).unwrap();
        assert_eq!(out.state.iteration, 1);
        assert_eq!(out.reason, StopReason::Regression { metrics: vec!["chrF".into(), "BLEU".into()] });
        assert_eq!(out.final_model, "base");

        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 1);
        let hooks = Scripted {
            truth: truth.clone(),
            checkpoints: vec![ckpts(&[("only", 0.9, 60.0, 30.0)])],
            calls: RefCell::new(0),
        };
        let out = run_loop(&cfg, &truth, &hooks).unwrap();
        assert_eq!((out.state.iteration, out.reason.clone()), (1, StopReason::MaxIterations));
        assert_eq!(out.final_model, "only");
    }

    #[test]
    fn reference_equal_candidate_is_selected() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path(), 3);
        let corpus = mock_corpus(20, 11);
        let sets: Vec<CandidateSet> = mock_translate(&corpus, 50, 0.1, 3)
            .unwrap()
            .into_iter()
            .zip(corpus.targets().unwrap())
            .map(|(s, t)| {
                let mut c = s.candidates().to_vec();
                c[3] = t.to_string();
                CandidateSet::new(s.segment_id(), c, None).unwrap()
            })
            .collect();
        let synthetic = build_synthetic_dataset(&corpus, &sets, &cfg).unwrap();
        assert_eq!(synthetic.targets().unwrap(), corpus.targets().unwrap());
    }

    #[test]
    fn mock_translate_contract() {
        let corpus = mock_corpus(6, 4);
        let clean = mock_translate(&corpus, 5, 0.0, 1).unwrap();
        for (set, t) in clean.iter().zip(corpus.targets().unwrap()) {
            assert!(set.candidates().iter().all(|c| c == t));
        }
        let a = mock_translate(&corpus, 50, 0.15, 7).unwrap();
        assert_eq!(a, mock_translate(&corpus, 50, 0.15, 7).unwrap());
        assert!(a.iter().all(|s| s.len() == 50));
        assert_ne!(a, mock_translate(&corpus, 50, 0.15, 8).unwrap());
        assert!(mock_translate(&corpus, 0, 0.1, 1).is_err());
        assert!(mock_translate(&Corpus::from_texts([("x", None::<String>)]), 2, 0.1, 1).is_err());
    }

    #[test]
    fn config_file_parsing() {
        let dir = TempDir::new().unwrap();
        let text = "\
# loop
max_iterations = 4
utility = chrf
selection_metric = comet
monitored_metrics = chrF, BLEU
trainer_cmd = ./train.sh --lr 5e-6
translator_cmd = ./translate.sh
train_source = data/train.src
work_dir = work
baseline_model = base.npz
baseline.comet = 0.8779
baseline.chrF = 52.0
baseline.BLEU = 22.2
";
        let cfg = LoopConfig::parse(text, dir.path(), "loop.cfg", None).unwrap();
        assert_eq!(cfg.max_iterations, 4);
        assert_eq!((cfg.top_k, cfg.n_candidates), (50, 50));
        assert_eq!(cfg.monitored_metrics, ["chrF", "BLEU"]);
        assert_eq!(cfg.train_source, dir.path().join("data/train.src"));
        assert_eq!(cfg.baseline_metrics["chrF"], 52.0);

        let bad = text.replace("monitored_metrics = chrF, BLEU", "monitored_metrics = chrF, comet");
        assert!(matches!(LoopConfig::parse(&bad, dir.path(), "c", None), Err(Error::Config(_))));
        let unknown = format!("{text}bogus = 1\n");
        assert!(matches!(LoopConfig::parse(&unknown, dir.path(), "c", None), Err(Error::Format { line: 14, .. })));
        let no_baseline = text.replace("baseline.BLEU = 22.2\n", "");
        assert!(LoopConfig::parse(&no_baseline, dir.path(), "c", None).is_err());
    }
}
