//! Command-line front end. `dispatch` returns the process exit code: 0 on
//! success, 1 for usage, validation and configuration errors, 2 for I/O,
//! scorer transport and hook failures.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{load_candidate_sets, load_parallel_corpus, read_lines, write_candidate_sets, write_lines, write_parallel_corpus, Corpus};
use crate::error::{Error, Result};
use crate::filter::{run_filter_pipeline, FilterConfig};
use crate::mbr::{mbr_decode_corpus, render_sweep_tsv, sweep_candidate_counts, DecodeOptions, Utility};
use crate::pipeline::{mock_translate, run_loop, CommandHooks, LoopConfig};
use crate::scorer::{BridgeConfig, ProcessScorer};
use crate::scorer::{serve, StubMode, StubScorer};
use crate::scorer::Scorer;
use crate::significance::{evaluate_system, render_evaluation, ComparisonReport, Metric, DEFAULT_ALPHA, DEFAULT_TRIALS};

pub const SCORER_ENV: &str = "MBR_SCORER_CMD";

#[derive(Debug, Parser)]
#[command(name = "mbrkit", version, about = "MBR reranking, corpus filtering and self-training tools")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a parallel corpus with heuristic rules.
    Filter(FilterArgs),
    /// Select one candidate per segment by MBR.
    Mbr(MbrArgs),
    /// Score MBR selections for increasing candidate counts.
    Sweep(SweepArgs),
    /// Score a system output against references.
    Eval(EvalArgs),
    /// Compare systems against a baseline with paired bootstrap resampling.
    Compare(CompareArgs),
    /// Run the iterative self-training loop.
    Loop(LoopArgs),
    /// Write noisy N-best lists of known targets (a translator stand-in).
    MockTranslate(MockTranslateArgs),
    /// Serve a deterministic scorer over the scorer protocol on stdin/stdout.
    StubScorer(StubScorerArgs),
}

#[derive(Debug, Args)]
struct ScorerArgs {
    /// Scorer endpoint command; overrides the MBR_SCORER_CMD environment variable.
    #[arg(long)]
    scorer_cmd: Option<String>,
    /// Seconds to wait for one batch (and for the handshake).
    #[arg(long, default_value_t = 120.0)]
    scorer_timeout: f64,
    /// Client-side cap on scorer batch size.
    #[arg(long)]
    scorer_max_batch: Option<usize>,
}

impl ScorerArgs {
    fn command(&self) -> Option<String> {
        self.scorer_cmd
            .clone()
            .or_else(|| std::env::var(SCORER_ENV).ok())
            .filter(|c| !c.trim().is_empty())
    }

    fn spawn(&self) -> Result<Option<Arc<dyn Scorer>>> {
        let Some(cmd) = self.command() else {
            return Ok(None);
        };
        if !(self.scorer_timeout.is_finite() && self.scorer_timeout > 0.0) {
            return Err(Error::Parameter("--scorer-timeout must be positive".into()));
        }
        let timeout = Duration::from_secs_f64(self.scorer_timeout);
        let config = BridgeConfig {
            batch_timeout: timeout,
            handshake_timeout: timeout,
            max_batch: self.scorer_max_batch,
        };
        let scorer = ProcessScorer::spawn(&cmd, config).map_err(|source| Error::Scorer {
            context: Some(cmd.clone()),
            source,
        })?;
        Ok(Some(Arc::new(scorer)))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UtilityArg {
    Chrf,
    Bleu,
    Edit,
    External,
}

#[derive(Debug, Args)]
struct UtilityArgs {
    /// Utility function (default: external when a scorer is configured, else chrf).
    #[arg(long, value_enum)]
    utility: Option<UtilityArg>,
    /// Treat the external scorer as symmetric and score each pair once.
    #[arg(long)]
    symmetric_scorer: bool,
    #[command(flatten)]
    scorer: ScorerArgs,
}

impl UtilityArgs {
    fn build(&self) -> Result<Utility> {
        let wants_external = match self.utility {
            Some(UtilityArg::External) => true,
            None => self.scorer.command().is_some(),
            Some(_) => false,
        };
        if !wants_external {
            return Ok(match self.utility {
                Some(UtilityArg::Bleu) => Utility::bleu(),
                Some(UtilityArg::Edit) => Utility::NegEditDistance,
                _ => Utility::chrf(),
            });
        }
        let scorer = self
            .scorer
            .spawn()?
            .ok_or_else(|| Error::Config(format!("the external utility needs --scorer-cmd or {SCORER_ENV}")))?;
        Ok(Utility::External {
            scorer,
            symmetric: self.symmetric_scorer,
        })
    }
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
    /// Per-segment scores, `id<TAB>name<TAB>value` lines (lang_prob_src, lang_prob_tgt, bicleaner).
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    max_avg_word_len: f64,
    #[arg(long, default_value_t = 500)]
    max_chars: usize,
    #[arg(long, default_value_t = 0.15)]
    max_digit_ratio: f64,
    #[arg(long, default_value_t = 28)]
    max_longest_word: usize,
    #[arg(long, default_value_t = 100)]
    max_words: usize,
    #[arg(long, default_value_t = 2)]
    min_edit_distance: usize,
    #[arg(long, default_value_t = 5)]
    min_chars: usize,
    #[arg(long, default_value_t = 0.10)]
    min_lang_prob: f64,
    #[arg(long)]
    min_bicleaner: Option<f64>,
}

#[derive(Debug, Args)]
struct MbrArgs {
    /// Candidate lists (JSONL: segment_id, rank, text, optional score).
    #[arg(long)]
    candidates: PathBuf,
    /// Source sentences, required by scorers that need the source.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Selected translations, one per line (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-segment selections with expected utilities as JSONL.
    #[arg(long)]
    details: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Leave the candidate's own utility out of its expectation.
    #[arg(long)]
    exclude_self: bool,
    #[command(flatten)]
    utility: UtilityArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Reference translations, line i for segment i.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,10,25,50")]
    counts: Vec<usize>,
    #[arg(long)]
    exclude_self: bool,
    /// TSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    utility: UtilityArgs,
}

#[derive(Debug, Args)]
struct MetricArgs {
    /// Reference translations, one per line.
    #[arg(long, visible_alias = "ref")]
    refs: PathBuf,
    #[arg(long)]
    source: Option<PathBuf>,
    /// Built-in metrics to report.
    #[arg(long, value_delimiter = ',', default_value = "chrF,BLEU")]
    metrics: Vec<String>,
    /// Report name for the external scorer (default: its handshake name).
    #[arg(long)]
    scorer_name: Option<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    scorer: ScorerArgs,
}

impl MetricArgs {
    fn build(&self) -> Result<Vec<Metric>> {
        let mut metrics = Vec::new();
        for m in &self.metrics {
            metrics.push(match m.to_ascii_lowercase().as_str() {
                "chrf" => Metric::chrf(),
                "bleu" => Metric::bleu(),
                other => return Err(Error::Parameter(format!("unknown metric {other:?} (chrF, BLEU)"))),
            });
        }
        if let Some(scorer) = self.scorer.spawn()? {
            let name = self.scorer_name.clone().unwrap_or_else(|| scorer.capabilities().name.clone());
            metrics.push(Metric::External { name, scorer });
        }
        if metrics.is_empty() {
            return Err(Error::Parameter("no metrics selected".into()));
        }
        Ok(metrics)
    }

    fn load(&self) -> Result<(Vec<String>, Option<Vec<String>>)> {
        let refs = read_lines(&self.refs)?;
        let sources = self.source.as_deref().map(read_lines).transpose()?;
        Ok((refs, sources))
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Baseline system output.
    #[arg(long, visible_alias = "hyp-a")]
    baseline: PathBuf,
    /// System output compared against the baseline (repeatable).
    #[arg(long = "system", visible_alias = "hyp-b", required = true)]
    systems: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Debug, Args)]
struct LoopArgs {
    /// `key = value` loop configuration.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Treat the external scorer as symmetric.
    #[arg(long)]
    symmetric_scorer: bool,
}

#[derive(Debug, Args)]
struct MockTranslateArgs {
    /// Ignored; accepted for the translator hook contract.
    #[arg(long, default_value = "mock")]
    model: String,
    /// Source sentences (only their count is used).
    #[arg(long)]
    input: PathBuf,
    /// True targets, line-aligned with the input.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct StubScorerArgs {
    /// constant:<c>, overlap or length-penalty.
    #[arg(long, default_value = "overlap")]
    mode: StubMode,
    #[arg(long)]
    max_batch: Option<usize>,
    /// Answer batches in a seeded shuffled order.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Exit with an error after answering this many requests.
    #[arg(long)]
    fail_after: Option<usize>,
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(pool) => pool.install(|| run(cli.command)),
        Err(e) => Err(Error::Parameter(format!("cannot start thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Filter(a) => filter(a),
        Command::Mbr(a) => mbr(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Loop(a) => run_loop_cmd(a),
        Command::MockTranslate(a) => mock(a),
        Command::StubScorer(a) => stub(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn filter(a: FilterArgs) -> Result<()> {
    let cfg = FilterConfig {
        max_avg_word_len: a.max_avg_word_len,
        max_chars: a.max_chars,
        max_digit_ratio: a.max_digit_ratio,
        max_longest_word: a.max_longest_word,
        max_words: a.max_words,
        min_edit_distance: a.min_edit_distance,
        min_chars: a.min_chars,
        min_lang_prob: a.min_lang_prob,
        min_bicleaner: a.min_bicleaner,
    };
    cfg.validate()?;
    let corpus = load_parallel_corpus(&a.src, Some(&a.tgt))?;
    let (kept, report) = run_filter_pipeline(&corpus, &cfg, a.sidecar.as_deref())?;
    write_parallel_corpus(&kept, &a.out_src, &a.out_tgt)?;
    if let Some(path) = &a.report_json {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    }
    eprint!("{}", report.render());
    Ok(())
}

fn load_sources(path: Option<&Path>) -> Result<Option<Corpus>> {
    path.map(|p| load_parallel_corpus(p, None)).transpose()
}

fn mbr(a: MbrArgs) -> Result<()> {
    let utility = a.utility.build()?;
    let sets = load_candidate_sets(&a.candidates)?;
    let corpus = load_sources(a.source.as_deref())?;
    let options = DecodeOptions {
        include_self: !a.exclude_self,
        top_k: Some(a.top_k),
    };
    let results = mbr_decode_corpus(&sets, corpus.as_ref(), &utility, options)?;
    if let Some(path) = &a.details {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &results {
            let mut row = serde_json::to_value(r).expect("result serializes");
            row["utility"] = utility.kind().to_string().into();
            writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let lines = results.iter().map(|r| r.selected_text.as_str());
    match &a.out {
        Some(path) => write_lines(path, lines),
        None => {
            let mut text = String::new();
            for l in lines {
                text.push_str(l);
                text.push('\n');
            }
            emit(None, &text)
        }
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let utility = a.utility.build()?;
    let sets = load_candidate_sets(&a.candidates)?;
    let refs = read_lines(&a.refs)?;
    let corpus = load_sources(a.source.as_deref())?;
    let rows = sweep_candidate_counts(&sets, corpus.as_ref(), &utility, !a.exclude_self, &a.counts, Some(&refs))?;
    emit(a.out.as_deref(), &render_sweep_tsv(&rows))
}

fn system_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn eval(a: EvalArgs) -> Result<()> {
    let metrics = a.metrics.build()?;
    let (refs, sources) = a.metrics.load()?;
    let hyps = read_lines(&a.hyp)?;
    let eval = evaluate_system(&system_name(&a.hyp), &hyps, &refs, sources.as_deref(), &metrics)?;
    let text = if a.metrics.json {
        serde_json::to_string_pretty(&eval).expect("evaluation serializes") + "\n"
    } else {
        render_evaluation(&eval)
    };
    emit(None, &text)
}

fn compare(a: CompareArgs) -> Result<()> {
    let metrics = a.metrics.build()?;
    let (refs, sources) = a.metrics.load()?;
    let evaluate = |path: &Path| -> Result<_> {
        let hyps = read_lines(path)?;
        evaluate_system(&system_name(path), &hyps, &refs, sources.as_deref(), &metrics)
    };
    let baseline = evaluate(&a.baseline)?;
    let systems = a.systems.iter().map(|p| evaluate(p)).collect::<Result<Vec<_>>>()?;
    let report = ComparisonReport::build(baseline, systems, a.trials, a.alpha, a.seed)?;
    let text = if a.metrics.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.render()
    };
    emit(None, &text)
}

fn run_loop_cmd(a: LoopArgs) -> Result<()> {
    let scorer = a.scorer.spawn()?.map(|scorer| Utility::External {
        scorer,
        symmetric: a.symmetric_scorer,
    });
    let cfg = LoopConfig::from_file(&a.config, scorer)?;
    let corpus = load_parallel_corpus(&cfg.train_source, None)?;
    let hooks = CommandHooks::from_config(&cfg);
    let outcome = run_loop(&cfg, &corpus, &hooks)?;
    let mut text = outcome.render_report(&cfg);
    text.push_str(&format!(
        "final model: {} (iteration {})\n",
        outcome.final_model, outcome.final_iteration
    ));
    emit(None, &text)
}

fn mock(a: MockTranslateArgs) -> Result<()> {
    let sources = read_lines(&a.input)?;
    let truth = read_lines(&a.truth)?;
    if sources.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} input lines but {} truth lines",
            sources.len(),
            truth.len()
        )));
    }
    let corpus = Corpus::from_texts(sources.into_iter().zip(truth.into_iter().map(Some)));
    let sets = mock_translate(&corpus, a.n, a.noise, a.seed)?;
    write_candidate_sets(&sets, &a.out)
}

fn stub(a: StubScorerArgs) -> Result<()> {
    let mut scorer = StubScorer::new(a.mode);
    if let Some(n) = a.max_batch {
        if n == 0 {
            return Err(Error::Parameter("--max-batch must be at least 1".into()));
        }
        scorer = scorer.with_max_batch(n);
    }
    if let Some(seed) = a.shuffle_seed {
        scorer = scorer.shuffled(seed);
    }
    serve(&scorer, io::stdin().lock(), io::stdout().lock(), a.fail_after).map_err(|e| Error::io("<stdio>", e))
}
