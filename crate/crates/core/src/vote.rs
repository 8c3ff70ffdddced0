//! Answer canonicalisation, top-eta filtering and score-weighted voting.
//!
//! The voting functions are generic over the weight type so that exact
//! (integer or rational) weights can be used where ties matter.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::Add;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical token for a trajectory whose answer could not be extracted.
pub const NO_ANSWER: &str = "<NO_ANSWER>";

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("eta must lie in (0, 1], got {0}")]
    EtaOutOfRange(f64),
    #[error("no candidates to vote over")]
    Empty,
    #[error("every retained trajectory is {NO_ANSWER}")]
    AllNoAnswer,
    #[error("{answers} answers but {scores} scores")]
    LengthMismatch { answers: usize, scores: usize },
    #[error("score is not comparable (NaN)")]
    Incomparable,
    #[error("retained index {0} out of range")]
    BadIndex(usize),
}

/// A trajectory reduced to what voting and evaluation need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory<T> {
    pub question_id: String,
    pub trajectory_id: String,
    /// Canonical answer.
    pub answer: String,
    pub label: Option<bool>,
    pub score: T,
}

/// Contents of the last balanced `\boxed{...}` group, if any.
fn last_boxed(raw: &str) -> Option<&str> {
    const OPEN: &str = "\\boxed{";
    let mut search_end = raw.len();
    while let Some(pos) = raw[..search_end].rfind(OPEN) {
        let start = pos + OPEN.len();
        let mut depth = 1usize;
        for (i, ch) in raw[start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..start + i]);
                    }
                }
                _ => {}
            }
        }
        // unbalanced; try an earlier box
        search_end = pos;
    }
    None
}

fn normalize_integer(s: &str) -> Option<String> {
    let (neg, digits) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() {
        return Some("0".into());
    }
    Some(if neg {
        format!("-{stripped}")
    } else {
        stripped.to_string()
    })
}

/// Extracts the last `\boxed{...}` group (or uses the whole text), trims
/// whitespace and strips leading zeros from integers. Empty results map to
/// [`NO_ANSWER`].
pub fn canonicalize_answer(raw: &str) -> String {
    let body = last_boxed(raw).unwrap_or(raw).trim();
    if body.is_empty() {
        return NO_ANSWER.to_string();
    }
    normalize_integer(body).unwrap_or_else(|| body.to_string())
}

/// Number of trajectories kept for `n` candidates: `max(1, floor(eta * n))`.
pub fn retained_count(n: usize, eta: f64) -> usize {
    // the small offset absorbs representation error such as 0.29 * 100
    (((eta * n as f64) + 1e-9).floor() as usize).clamp(1, n.max(1))
}

fn check_eta(eta: f64) -> Result<(), VoteError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(VoteError::EtaOutOfRange(eta));
    }
    Ok(())
}

/// Indices of the top `max(1, floor(eta * N))` scores, in rank order.
/// Equal scores rank by ascending index.
pub fn top_eta_filter<W: Copy + PartialOrd>(
    scores: &[W],
    eta: f64,
) -> Result<Vec<usize>, VoteError> {
    check_eta(eta)?;
    if scores.is_empty() {
        return Err(VoteError::Empty);
    }
    if scores.iter().any(|s| s.partial_cmp(s).is_none()) {
        return Err(VoteError::Incomparable);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(retained_count(scores.len(), eta));
    Ok(order)
}

/// Winner and per-answer total weight over the `retained` subset.
///
/// Weights are summed in ascending index order. [`NO_ANSWER`] never wins;
/// equal totals resolve to the lexicographically smallest answer.
pub fn weighted_majority<S, W>(
    answers: &[S],
    scores: &[W],
    retained: &[usize],
) -> Result<(String, BTreeMap<String, W>), VoteError>
where
    S: AsRef<str>,
    W: Copy + PartialOrd + Zero + Add<Output = W>,
{
    if answers.len() != scores.len() {
        return Err(VoteError::LengthMismatch {
            answers: answers.len(),
            scores: scores.len(),
        });
    }
    if retained.is_empty() {
        return Err(VoteError::Empty);
    }
    let mut idx = retained.to_vec();
    idx.sort_unstable();
    let mut weights: BTreeMap<String, W> = BTreeMap::new();
    for &i in &idx {
        let a = answers.get(i).ok_or(VoteError::BadIndex(i))?.as_ref();
        if a == NO_ANSWER {
            continue;
        }
        let slot = weights.entry(a.to_string()).or_insert_with(W::zero);
        *slot = *slot + scores[i];
    }
    let mut winner: Option<(&String, W)> = None;
    for (a, &w) in &weights {
        match winner {
            None => winner = Some((a, w)),
            Some((_, best)) if w > best => winner = Some((a, w)),
            _ => {}
        }
    }
    let winner = winner.ok_or(VoteError::AllNoAnswer)?.0.clone();
    Ok((winner, weights))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome<W> {
    pub winner: String,
    /// Retained indices in rank order.
    pub retained: Vec<usize>,
    pub weights: BTreeMap<String, W>,
    pub eta: f64,
    pub n_retained: usize,
}

/// Top-eta filtering followed by the weighted vote.
pub fn vote<S, W>(answers: &[S], scores: &[W], eta: f64) -> Result<VoteOutcome<W>, VoteError>
where
    S: AsRef<str>,
    W: Copy + PartialOrd + Zero + Add<Output = W>,
{
    if answers.len() != scores.len() {
        return Err(VoteError::LengthMismatch {
            answers: answers.len(),
            scores: scores.len(),
        });
    }
    let retained = top_eta_filter(scores, eta)?;
    let (winner, weights) = weighted_majority(answers, scores, &retained)?;
    Ok(VoteOutcome {
        winner,
        n_retained: retained.len(),
        retained,
        weights,
        eta,
    })
}

/// Plurality vote. [`NO_ANSWER`] only wins when it is the sole answer
/// (including the empty input); ties go to the lexicographically smallest.
pub fn unweighted_majority<S: AsRef<str>>(answers: &[S]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        let a = a.as_ref();
        if a != NO_ANSWER {
            *counts.entry(a).or_default() += 1;
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (a, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((a, c));
        }
    }
    best.map_or_else(|| NO_ANSWER.to_string(), |(a, _)| a.to_string())
}

/// One line of a votes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub question_id: String,
    pub winner: String,
    pub eta: f64,
    pub retained_ids: Vec<String>,
    pub weights: BTreeMap<String, f64>,
}

/// Votes over one question's scored trajectories.
pub fn vote_question(
    question_id: &str,
    items: &[ScoredTrajectory<f64>],
    eta: f64,
) -> Result<VoteRecord, VoteError> {
    let answers: Vec<&str> = items.iter().map(|t| t.answer.as_str()).collect();
    let scores: Vec<f64> = items.iter().map(|t| t.score).collect();
    let out = vote(&answers, &scores, eta)?;
    Ok(VoteRecord {
        question_id: question_id.to_string(),
        winner: out.winner,
        eta,
        retained_ids: out
            .retained
            .iter()
            .map(|&i| items[i].trajectory_id.clone())
            .collect(),
        weights: out.weights,
    })
}
