//! Deterministic synthetic trajectory pools with a controllable
//! class-conditional tail pattern.

use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{save_jsonl, Dataset, TokenStep, Trajectory};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("infeasible spec: negative amplitude {0} would require positive log-probabilities")]
    Infeasible(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Generator parameters.
///
/// Per-step signals are `max(0, base_level + noise_sigma * z)`; incorrect
/// trajectories additionally get `amplitude` added over their last `extent`
/// steps. Lengths are uniform in `[min_len, max_len]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_questions: usize,
    pub pool_size: usize,
    pub correct_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Width of the emitted top-k vectors.
    pub k: usize,
    pub base_level: f64,
    pub noise_sigma: f64,
    pub amplitude: f64,
    pub extent: usize,
    pub l_tail: usize,
    /// Number of distinct answers per question (gold plus distractors).
    pub alphabet: usize,
    /// Probability that an incorrect trajectory picks the question's
    /// dominant distractor; otherwise a distractor is drawn uniformly.
    pub wrong_concentration: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_questions: 200,
            pool_size: 32,
            correct_fraction: 0.5,
            min_len: 300,
            max_len: 600,
            k: 20,
            base_level: 1.0,
            noise_sigma: 0.25,
            amplitude: 0.75,
            extent: 256,
            l_tail: 256,
            alphabet: 8,
            wrong_concentration: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if !(self.correct_fraction > 0.0 && self.correct_fraction < 1.0) {
            return bad("correct_fraction must lie in (0, 1)");
        }
        if self.n_questions == 0 || self.pool_size == 0 || self.k == 0 {
            return bad("n_questions, pool_size and k must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.extent > self.l_tail {
            return bad("extent must not exceed l_tail");
        }
        if self.alphabet < 2 {
            return bad("alphabet needs at least two answers");
        }
        if ![
            self.base_level,
            self.noise_sigma,
            self.amplitude,
            self.wrong_concentration,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return bad("non-finite parameter");
        }
        if self.base_level < 0.0 || self.noise_sigma < 0.0 {
            return bad("base_level and noise_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.wrong_concentration) {
            return bad("wrong_concentration must lie in [0, 1]");
        }
        if self.amplitude < 0.0 {
            return Err(SynthError::Infeasible(self.amplitude));
        }
        Ok(())
    }

    /// Trajectories per question carrying the gold answer.
    pub fn n_correct(&self) -> usize {
        (self.correct_fraction * self.pool_size as f64).round() as usize
    }
}

/// A generated trajectory together with the signal it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrajectory {
    pub trajectory: Trajectory,
    pub signal: Vec<f64>,
}

pub fn gold_answer(question: usize) -> String {
    format!("{}", question * 7 + 3)
}

fn distractor(question: usize, j: usize) -> String {
    format!("{}", question * 7 + 3 + 1000 * (j + 1))
}

fn question_rng(seed: u64, question: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(question as u64);
    rng
}

fn generate_question(spec: &SynthSpec, q: usize) -> Vec<SynthTrajectory> {
    let mut rng = question_rng(spec.seed, q);
    let n_correct = spec.n_correct();
    let n_distractors = spec.alphabet - 1;
    let mut correct: Vec<bool> = (0..spec.pool_size).map(|i| i < n_correct).collect();
    for i in (1..correct.len()).rev() {
        let j = rng.random_range(0..=i);
        correct.swap(i, j);
    }
    correct
        .into_iter()
        .enumerate()
        .map(|(i, ok)| {
            let answer = if ok {
                gold_answer(q)
            } else if rng.random::<f64>() < spec.wrong_concentration {
                distractor(q, 0)
            } else {
                distractor(q, rng.random_range(0..n_distractors))
            };
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let burst_from = len.saturating_sub(spec.extent);
            let signal: Vec<f64> = (0..len)
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut s = (spec.base_level + spec.noise_sigma * z).max(0.0);
                    if !ok && t >= burst_from {
                        s += spec.amplitude;
                    }
                    s
                })
                .collect();
            let steps = signal
                .iter()
                .map(|&s| TokenStep::new(vec![0.0 - s; spec.k]))
                .collect();
            SynthTrajectory {
                trajectory: Trajectory {
                    question_id: format!("q{q:04}"),
                    trajectory_id: format!("q{q:04}-t{i:04}"),
                    answer,
                    label: Some(ok),
                    steps,
                },
                signal,
            }
        })
        .collect()
}

/// Generates every question's pool, question-major.
pub fn generate_detailed(spec: &SynthSpec) -> Result<Vec<SynthTrajectory>, SynthError> {
    spec.validate()?;
    let per_q: Vec<Vec<SynthTrajectory>> = (0..spec.n_questions)
        .into_par_iter()
        .map(|q| generate_question(spec, q))
        .collect();
    Ok(per_q.into_iter().flatten().collect())
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset, SynthError> {
    Ok(Dataset {
        k_stat: spec.k,
        trajectories: generate_detailed(spec)?
            .into_iter()
            .map(|s| s.trajectory)
            .collect(),
    })
}

/// Sidecar path holding the spec used for a generated file.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".spec.json");
    output.with_file_name(name)
}

/// Writes the JSONL file and its spec sidecar.
pub fn write_synth(spec: &SynthSpec, output: &Path) -> Result<Dataset, SynthError> {
    let data = generate(spec)?;
    save_jsonl(output, &data)?;
    let json = serde_json::to_string_pretty(spec).map_err(io::Error::other)?;
    std::fs::write(sidecar_path(output), json + "\n")?;
    Ok(data)
}
