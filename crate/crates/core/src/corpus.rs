//! Parallel corpora, N-best candidate sets and per-segment score sidecars.
//!
//! All text is UTF-8. A byte-order mark at the start of a file is dropped and
//! only the line terminator (`\n` or `\r\n`) is removed from each line.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One aligned source/target sentence pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPair {
    pub id: usize,
    pub source: String,
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl SegmentPair {
    pub fn new(id: usize, source: impl Into<String>, target: Option<String>) -> Self {
        SegmentPair {
            id,
            source: source.into(),
            target,
            meta: BTreeMap::new(),
        }
    }
}

/// Ordered list of segment pairs with ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pairs: Vec<SegmentPair>,
}

impl Corpus {
    /// Builds a corpus, renumbering ids to match position.
    pub fn new(pairs: Vec<SegmentPair>) -> Self {
        let pairs = pairs
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| {
                p.id = i;
                p
            })
            .collect();
        Corpus { pairs }
    }

    pub fn from_texts<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Option<T>)>,
        S: Into<String>,
        T: Into<String>,
    {
        Corpus::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (s, t))| SegmentPair::new(i, s, t.map(Into::into)))
                .collect(),
        )
    }

    pub fn pairs(&self) -> &[SegmentPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&SegmentPair> {
        self.pairs.get(id)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    /// Target sides, or the id of the first pair without one.
    pub fn targets(&self) -> Result<Vec<&str>> {
        self.pairs
            .iter()
            .map(|p| {
                p.target
                    .as_deref()
                    .ok_or(Error::IncompleteCorpus { id: p.id })
            })
            .collect()
    }
}

/// Ranked N-best hypotheses for one source segment. Rank 0 is the generator's best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    segment_id: usize,
    candidates: Vec<String>,
    gen_scores: Option<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(
        segment_id: usize,
        candidates: Vec<String>,
        gen_scores: Option<Vec<f64>>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Validation(format!(
                "candidate set for segment {segment_id} is empty"
            )));
        }
        if let Some(scores) = &gen_scores {
            if scores.len() != candidates.len() {
                return Err(Error::Validation(format!(
                    "segment {segment_id}: {} scores for {} candidates",
                    scores.len(),
                    candidates.len()
                )));
            }
            if let Some(rank) = scores.iter().position(|s| !s.is_finite()) {
                return Err(Error::Validation(format!(
                    "segment {segment_id}: non-finite score at rank {rank}"
                )));
            }
        }
        Ok(CandidateSet {
            segment_id,
            candidates,
            gen_scores,
        })
    }

    pub fn segment_id(&self) -> usize {
        self.segment_id
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn gen_scores(&self) -> Option<&[f64]> {
        self.gen_scores.as_deref()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The rank-ordered prefix of at most `k` candidates.
    pub fn top(&self, k: usize) -> &[String] {
        &self.candidates[..k.min(self.candidates.len())]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    segment_id: usize,
    rank: usize,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Reads a text file into lines, reporting undecodable lines by number.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    split_lines(&bytes).map_err(|line| Error::Encoding {
        path: path.to_path_buf(),
        line,
    })
}

fn split_lines(bytes: &[u8]) -> std::result::Result<Vec<String>, usize> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            String::from_utf8(line.to_vec()).map_err(|_| i + 1)
        })
        .collect()
}

fn check_line(text: &str, what: impl FnOnce() -> String) -> Result<()> {
    if text.contains(['\n', '\r']) {
        Err(Error::LineBreak(what()))
    } else {
        Ok(())
    }
}

/// Writes one line per item, each terminated by `\n`.
pub fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, line) in lines.into_iter().enumerate() {
        check_line(line, || format!("{} line {}", path.display(), i + 1))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_parallel_corpus(source_path: &Path, target_path: Option<&Path>) -> Result<Corpus> {
    let sources = read_lines(source_path)?;
    let targets = match target_path {
        Some(path) => {
            let targets = read_lines(path)?;
            if targets.len() != sources.len() {
                return Err(Error::Alignment(format!(
                    "{} has {} lines but {} has {}",
                    source_path.display(),
                    sources.len(),
                    path.display(),
                    targets.len()
                )));
            }
            targets.into_iter().map(Some).collect()
        }
        None => vec![None; sources.len()],
    };
    Ok(Corpus::from_texts(sources.into_iter().zip(targets)))
}

pub fn write_parallel_corpus(corpus: &Corpus, source_path: &Path, target_path: &Path) -> Result<()> {
    let targets = corpus.targets()?;
    write_lines(source_path, corpus.sources())?;
    write_lines(target_path, targets)
}

pub fn load_candidate_sets(path: &Path) -> Result<Vec<CandidateSet>> {
    let context = path.display().to_string();
    let lines = read_lines(path)?;
    let mut by_segment: BTreeMap<usize, BTreeMap<usize, (String, Option<f64>, usize)>> =
        BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&context, line_no, e.to_string()))?;
        let ranks = by_segment.entry(rec.segment_id).or_default();
        if let Some((_, _, first)) = ranks.get(&rec.rank) {
            return Err(Error::format(
                &context,
                line_no,
                format!(
                    "duplicate record for segment {} rank {} (first seen on line {first})",
                    rec.segment_id, rec.rank
                ),
            ));
        }
        ranks.insert(rec.rank, (rec.text, rec.score, line_no));
    }

    by_segment
        .into_iter()
        .map(|(segment_id, ranks)| {
            let mut texts = Vec::with_capacity(ranks.len());
            let mut scores = Vec::with_capacity(ranks.len());
            for (expected, (rank, (text, score, line_no))) in ranks.into_iter().enumerate() {
                if rank != expected {
                    return Err(Error::format(
                        &context,
                        line_no,
                        format!("segment {segment_id}: rank {rank} follows a gap (expected rank {expected})"),
                    ));
                }
                check_line(&text, || format!("{context} line {line_no}"))?;
                texts.push(text);
                scores.push((score, line_no));
            }
            let gen_scores = match scores.iter().filter(|(s, _)| s.is_some()).count() {
                0 => None,
                n if n == scores.len() => Some(scores.iter().filter_map(|(s, _)| *s).collect()),
                _ => {
                    let line_no = scores.iter().find(|(s, _)| s.is_none()).map_or(0, |(_, l)| *l);
                    return Err(Error::format(
                        &context,
                        line_no,
                        format!("segment {segment_id}: score present on some candidates but not all"),
                    ));
                }
            };
            CandidateSet::new(segment_id, texts, gen_scores)
                .map_err(|e| Error::format(&context, 0, e.to_string()))
        })
        .collect()
}

pub fn write_candidate_sets(sets: &[CandidateSet], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for set in sets {
        for (rank, text) in set.candidates.iter().enumerate() {
            check_line(text, || format!("segment {} rank {rank}", set.segment_id))?;
            let rec = CandidateRecord {
                segment_id: set.segment_id,
                rank,
                text: text.clone(),
                score: set.gen_scores.as_ref().map(|s| s[rank]),
            };
            let line = serde_json::to_string(&rec).expect("candidate record serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Named per-segment scores, e.g. `lang_prob_src` or `bicleaner`, keyed by segment id.
pub type Sidecar = HashMap<usize, BTreeMap<String, f64>>;

/// Parses a `segment_id<TAB>name<TAB>value` score file.
pub fn parse_sidecar(text: &str, context: &str) -> Result<Sidecar> {
    let mut scores = Sidecar::new();
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, name, value] = fields[..] else {
            return Err(Error::format(
                context,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| Error::format(context, line_no, format!("bad segment id {id:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::format(context, line_no, format!("bad score {value:?}")))?;
        scores.entry(id).or_default().insert(name.trim().to_string(), value);
    }
    Ok(scores)
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding {
        path: path.to_path_buf(),
        line: 1 + e.as_bytes()[..e.utf8_error().valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count(),
    })?;
    parse_sidecar(&text, &path.display().to_string())
}
