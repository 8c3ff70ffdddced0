//! Trajectory data model, JSONL ingestion and dataset splitting.
//!
//! A trajectory file is UTF-8 JSONL. The first line is a header
//! `{"format_version": 1, "k_stat": K}`; every following line is one
//! trajectory:
//!
//! ```text
//! {"question_id": "q1", "trajectory_id": "t0", "answer": "42", "label": true,
//!  "steps": [[-0.01, -4.2, ...], ...]}
//! ```
//!
//! Each step holds the top-K natural-log probabilities, sorted non-increasing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line 1: invalid header: {0}")]
    Header(String),
    #[error("line {line}: record {trajectory_id:?} step {step}: expected {expected} log-probabilities, found {found}")]
    KMismatch {
        line: usize,
        trajectory_id: String,
        step: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: record {trajectory_id:?} step {step}: positive log-probability {value}")]
    PositiveLogprob {
        line: usize,
        trajectory_id: String,
        step: usize,
        value: f64,
    },
    #[error("line {line}: record {trajectory_id:?} step {step}: non-finite log-probability")]
    NonFinite {
        line: usize,
        trajectory_id: String,
        step: usize,
    },
    #[error("line {line}: record {trajectory_id:?} step {step}: log-probabilities not sorted non-increasing")]
    Unsorted {
        line: usize,
        trajectory_id: String,
        step: usize,
    },
    #[error("line {line}: record {trajectory_id:?} has no steps")]
    EmptySteps { line: usize, trajectory_id: String },
    #[error("line {line}: duplicate (question_id, trajectory_id) = ({question_id:?}, {trajectory_id:?})")]
    Duplicate {
        line: usize,
        question_id: String,
        trajectory_id: String,
    },
    #[error("file is empty (missing header)")]
    MissingHeader,
    #[error("split: {0}")]
    Split(String),
}

impl StoreError {
    /// True for failures of the underlying file system rather than content.
    pub fn is_io(&self) -> bool {
        matches!(self, StoreError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub k_stat: usize,
}

/// Top-k log-probabilities at one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStep {
    pub top_k_logprobs: Vec<f64>,
}

impl TokenStep {
    pub fn new(top_k_logprobs: Vec<f64>) -> Self {
        Self { top_k_logprobs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub question_id: String,
    pub trajectory_id: String,
    pub answer: String,
    pub label: Option<bool>,
    pub steps: Vec<TokenStep>,
}

impl Trajectory {
    /// Width of the stored top-k vectors (0 when there are no steps).
    pub fn k(&self) -> usize {
        self.steps.first().map_or(0, |s| s.top_k_logprobs.len())
    }
}

/// A loaded trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k_stat: usize,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Deserialize)]
struct RawRecord {
    question_id: String,
    trajectory_id: String,
    #[serde(default)]
    answer: String,
    #[serde(default)]
    label: Option<bool>,
    steps: Vec<Vec<f64>>,
}

/// Record fields only, for scored files where steps are not needed.
#[derive(Debug, Clone, Deserialize)]
pub struct RecordSummary {
    pub question_id: String,
    pub trajectory_id: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub label: Option<bool>,
    #[serde(default)]
    pub score: Option<f64>,
}

fn parse_header(line: &str) -> Result<Header, StoreError> {
    let header: Header =
        serde_json::from_str(line).map_err(|e| StoreError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(StoreError::Header(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.k_stat == 0 {
        return Err(StoreError::Header("k_stat must be at least 1".into()));
    }
    Ok(header)
}

fn check_steps(raw: RawRecord, k: usize, line: usize) -> Result<Trajectory, StoreError> {
    if raw.steps.is_empty() {
        return Err(StoreError::EmptySteps {
            line,
            trajectory_id: raw.trajectory_id,
        });
    }
    for (step, lp) in raw.steps.iter().enumerate() {
        let err_ctx = || raw.trajectory_id.clone();
        if lp.len() != k {
            return Err(StoreError::KMismatch {
                line,
                trajectory_id: err_ctx(),
                step,
                expected: k,
                found: lp.len(),
            });
        }
        for &v in lp {
            if !v.is_finite() {
                return Err(StoreError::NonFinite {
                    line,
                    trajectory_id: err_ctx(),
                    step,
                });
            }
            if v > 0.0 {
                return Err(StoreError::PositiveLogprob {
                    line,
                    trajectory_id: err_ctx(),
                    step,
                    value: v,
                });
            }
        }
        if lp.windows(2).any(|w| w[1] > w[0]) {
            return Err(StoreError::Unsorted {
                line,
                trajectory_id: err_ctx(),
                step,
            });
        }
    }
    Ok(Trajectory {
        question_id: raw.question_id,
        trajectory_id: raw.trajectory_id,
        answer: raw.answer,
        label: raw.label,
        steps: raw.steps.into_iter().map(TokenStep::new).collect(),
    })
}

/// Streaming reader over a trajectory file.
///
/// Yields `(line_number, trajectory)` pairs. Duplicate ids are detected
/// across the whole stream.
pub struct TrajectoryReader<R> {
    lines: io::Lines<R>,
    header: Header,
    line_no: usize,
    seen: HashSet<(String, String)>,
}

impl TrajectoryReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> TrajectoryReader<R> {
    pub fn new(reader: R) -> Result<Self, StoreError> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or(StoreError::MissingHeader)??;
        let header = parse_header(first.trim_end_matches('\r'))?;
        Ok(Self {
            lines,
            header,
            line_no: 1,
            seen: HashSet::new(),
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    fn next_line(&mut self) -> Option<Result<(usize, String), StoreError>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if !line.trim().is_empty() {
                return Some(Ok((self.line_no, line)));
            }
        }
    }

    fn check_duplicate(&mut self, line: usize, q: &str, t: &str) -> Result<(), StoreError> {
        if !self.seen.insert((q.to_owned(), t.to_owned())) {
            return Err(StoreError::Duplicate {
                line,
                question_id: q.to_owned(),
                trajectory_id: t.to_owned(),
            });
        }
        Ok(())
    }

    /// Reads the next record without its steps (used for scored files).
    pub fn next_summary(&mut self) -> Option<Result<(usize, RecordSummary), StoreError>> {
        let (line, text) = match self.next_line()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let rec: RecordSummary = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                return Some(Err(StoreError::Json {
                    line,
                    message: e.to_string(),
                }))
            }
        };
        if let Err(e) = self.check_duplicate(line, &rec.question_id, &rec.trajectory_id) {
            return Some(Err(e));
        }
        Some(Ok((line, rec)))
    }
}

impl<R: BufRead> Iterator for TrajectoryReader<R> {
    type Item = Result<(usize, Trajectory), StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, text) = match self.next_line()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let raw: RawRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                return Some(Err(StoreError::Json {
                    line,
                    message: e.to_string(),
                }))
            }
        };
        let k = self.header.k_stat;
        let result = check_steps(raw, k, line).and_then(|t| {
            self.check_duplicate(line, &t.question_id, &t.trajectory_id)?;
            Ok(t)
        });
        Some(result.map(|t| (line, t)))
    }
}

/// Loads and validates a whole trajectory file, stopping at the first error.
pub fn load_jsonl(path: &Path) -> Result<Dataset, StoreError> {
    let reader = TrajectoryReader::open(path)?;
    let k_stat = reader.header().k_stat;
    let trajectories = reader
        .map(|r| r.map(|(_, t)| t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        k_stat,
        trajectories,
    })
}

/// One validation problem found in a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

/// Validates every record and collects all problems instead of stopping at
/// the first one. Only I/O failures are returned as `Err`.
pub fn validate_jsonl(path: &Path) -> Result<(usize, Vec<Diagnostic>), io::Error> {
    let file = File::open(path)?;
    let mut reader = match TrajectoryReader::new(BufReader::new(file)) {
        Ok(r) => r,
        Err(StoreError::Io(e)) => return Err(e),
        Err(e) => {
            return Ok((
                0,
                vec![Diagnostic {
                    line: 1,
                    message: e.to_string(),
                }],
            ))
        }
    };
    let mut diags = Vec::new();
    let mut n_ok = 0;
    loop {
        match reader.next() {
            None => break,
            Some(Ok(_)) => n_ok += 1,
            Some(Err(StoreError::Io(e))) => return Err(e),
            Some(Err(e)) => diags.push(Diagnostic {
                line: reader.line_no,
                message: e.to_string(),
            }),
        }
    }
    Ok((n_ok, diags))
}

fn write_json_string<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    serde_json::to_writer(&mut *w, s).map_err(io::Error::from)
}

/// Writes one trajectory as a JSONL record. Log-probabilities are written
/// with 17 significant digits, which round-trips every `f64` exactly.
pub fn write_record<W: Write>(w: &mut W, t: &Trajectory, score: Option<f64>) -> io::Result<()> {
    w.write_all(b"{\"question_id\":")?;
    write_json_string(w, &t.question_id)?;
    w.write_all(b",\"trajectory_id\":")?;
    write_json_string(w, &t.trajectory_id)?;
    w.write_all(b",\"answer\":")?;
    write_json_string(w, &t.answer)?;
    if let Some(label) = t.label {
        write!(w, ",\"label\":{label}")?;
    }
    if let Some(s) = score {
        write!(w, ",\"score\":{s:.16e}")?;
    }
    w.write_all(b",\"steps\":[")?;
    for (i, step) in t.steps.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        w.write_all(b"[")?;
        for (j, v) in step.top_k_logprobs.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v:.16e}")?;
        }
        w.write_all(b"]")?;
    }
    w.write_all(b"]}\n")
}

pub fn write_header<W: Write>(w: &mut W, k_stat: usize) -> io::Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        k_stat,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")
}

pub fn save_jsonl(path: &Path, dataset: &Dataset) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, dataset.k_stat)?;
    for t in &dataset.trajectories {
        write_record(&mut w, t, None)?;
    }
    w.flush()
}

/// Index sets into a trajectory sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn split_sizes(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize), StoreError> {
    let r = [ratios.train, ratios.validation, ratios.test];
    if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(StoreError::Split(format!(
            "ratios must be positive and sum to 1, got {r:?}"
        )));
    }
    let n_val = round_half_up(ratios.validation * n as f64);
    let n_test = round_half_up(ratios.test * n as f64);
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(StoreError::Split(format!(
            "{n} trajectories are too few for a three-way split"
        )));
    }
    Ok((n - n_val - n_test, n_val, n_test))
}

/// Random trajectory-level partition. Validation and test receive
/// `round(ratio * n)` items each; train takes the remainder.
pub fn split_dataset(n: usize, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, StoreError> {
    let (n_train, n_val, _) = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}

/// Question-level partition: all trajectories of a question land in the
/// same part. Part sizes approximate the ratio targets.
pub fn split_by_question(
    trajs: &[Trajectory],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, StoreError> {
    let (_, n_val, n_test) = split_sizes(trajs.len(), ratios)?;
    let mut questions: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for t in trajs {
        if seen.insert(t.question_id.as_str()) {
            questions.push(t.question_id.as_str());
        }
    }
    if questions.len() < 3 {
        return Err(StoreError::Split(format!(
            "{} questions are too few for a question-level split",
            questions.len()
        )));
    }
    questions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut counts = std::collections::HashMap::new();
    for t in trajs {
        *counts.entry(t.question_id.as_str()).or_insert(0usize) += 1;
    }
    let mut part_of = std::collections::HashMap::new();
    let (mut got_test, mut got_val) = (0usize, 0usize);
    let last = questions.len() - 1;
    for (i, q) in questions.iter().enumerate() {
        // keep at least one question for train
        let part = if (got_test < n_test || got_test == 0) && i < last {
            got_test += counts[q];
            2
        } else if (got_val < n_val || got_val == 0) && i < last {
            got_val += counts[q];
            1
        } else {
            0
        };
        part_of.insert(*q, part);
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (i, t) in trajs.iter().enumerate() {
        match part_of[t.question_id.as_str()] {
            0 => split.train.push(i),
            1 => split.validation.push(i),
            _ => split.test.push(i),
        }
    }
    if split.train.is_empty() {
        return Err(StoreError::Split(
            "question-level split left train empty".into(),
        ));
    }
    Ok(split)
}
