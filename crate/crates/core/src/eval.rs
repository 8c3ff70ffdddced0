//! Evaluation protocol: Pass@1, Maj@K and score-weighted voting at K via
//! repeated subsampling from fixed per-question pools.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::train::auc;
use crate::vote::{
    canonicalize_answer, unweighted_majority, vote, ScoredTrajectory, VoteError, NO_ANSWER,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no pools to evaluate")]
    NoPools,
    #[error("question {0:?} has an empty pool")]
    EmptyPool(String),
    #[error("question {0:?} has no gold answer and unlabeled trajectories")]
    MissingGold(String),
    #[error("question {question_id:?}: trajectories labeled correct disagree on the answer ({first:?} vs {second:?})")]
    InconsistentLabels {
        question_id: String,
        first: String,
        second: String,
    },
    #[error("question {question_id:?} trajectory {trajectory_id:?}: label {label} disagrees with gold answer {gold:?}")]
    LabelMismatch {
        question_id: String,
        trajectory_id: String,
        label: bool,
        gold: Option<String>,
    },
    #[error("K={k} exceeds pool size {pool} of question {question_id:?}")]
    KTooLarge {
        k: usize,
        pool: usize,
        question_id: String,
    },
    #[error("K and repeats must be at least 1")]
    ZeroDraws,
    #[error("bins must be at least 1")]
    ZeroBins,
    #[error(transparent)]
    Vote(#[from] VoteError),
}

/// All candidate trajectories for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionPool<T> {
    pub question_id: String,
    /// Canonical gold answer; `None` when no trajectory is correct and no
    /// gold answer was supplied.
    pub gold_answer: Option<String>,
    pub trajectories: Vec<ScoredTrajectory<T>>,
}

impl<T> QuestionPool<T> {
    pub fn is_correct(&self, answer: &str) -> bool {
        answer != NO_ANSWER && self.gold_answer.as_deref() == Some(answer)
    }

    pub fn n_correct(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| self.is_correct(&t.answer))
            .count()
    }
}

/// Groups trajectories by question (in order of first appearance).
///
/// Gold answers come from `gold` when given, otherwise from the answer of
/// any trajectory labeled correct. Present labels must agree with the gold
/// answer.
pub fn build_pools<T>(
    items: Vec<ScoredTrajectory<T>>,
    gold: Option<&BTreeMap<String, String>>,
) -> Result<Vec<QuestionPool<T>>, EvalError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<ScoredTrajectory<T>>> = BTreeMap::new();
    for it in items {
        if !groups.contains_key(&it.question_id) {
            order.push(it.question_id.clone());
        }
        groups.entry(it.question_id.clone()).or_default().push(it);
    }
    let mut pools = Vec::with_capacity(order.len());
    for qid in order {
        let trajectories = groups.remove(&qid).unwrap();
        let gold_answer = match gold.and_then(|g| g.get(&qid)) {
            Some(g) => Some(canonicalize_answer(g)),
            None => {
                let mut found: Option<&str> = None;
                for t in &trajectories {
                    match t.label {
                        None => return Err(EvalError::MissingGold(qid.clone())),
                        Some(true) => match found {
                            None => found = Some(&t.answer),
                            Some(f) if f != t.answer => {
                                return Err(EvalError::InconsistentLabels {
                                    question_id: qid.clone(),
                                    first: f.to_string(),
                                    second: t.answer.clone(),
                                })
                            }
                            _ => {}
                        },
                        Some(false) => {}
                    }
                }
                found.map(str::to_string)
            }
        };
        let pool = QuestionPool {
            question_id: qid,
            gold_answer,
            trajectories,
        };
        for t in &pool.trajectories {
            if let Some(label) = t.label {
                if label != pool.is_correct(&t.answer) {
                    return Err(EvalError::LabelMismatch {
                        question_id: pool.question_id.clone(),
                        trajectory_id: t.trajectory_id.clone(),
                        label,
                        gold: pool.gold_answer.clone(),
                    });
                }
            }
        }
        pools.push(pool);
    }
    Ok(pools)
}

fn check_pools<T>(pools: &[QuestionPool<T>]) -> Result<(), EvalError> {
    if pools.is_empty() {
        return Err(EvalError::NoPools);
    }
    if let Some(p) = pools.iter().find(|p| p.trajectories.is_empty()) {
        return Err(EvalError::EmptyPool(p.question_id.clone()));
    }
    Ok(())
}

/// Exact expected single-trajectory accuracy: the per-question fraction of
/// correct trajectories, averaged over questions.
pub fn pass_at_1<T>(pools: &[QuestionPool<T>]) -> Result<f64, EvalError> {
    check_pools(pools)?;
    let total: f64 = pools
        .iter()
        .map(|p| p.n_correct() as f64 / p.trajectories.len() as f64)
        .sum();
    Ok(total / pools.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    /// Unweighted plurality vote.
    Maj,
    /// Top-eta filtering plus score-weighted vote.
    Chronos { eta: f64 },
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for one (seed, repeat, question) subsample draw.
pub fn draw_seed(seed: u64, repeat: usize, question_id: &str) -> u64 {
    splitmix64(seed ^ splitmix64(repeat as u64 ^ splitmix64(fnv1a(question_id))))
}

/// Indices of `k` distinct trajectories drawn for one repeat, ascending.
pub fn draw_indices(
    pool_size: usize,
    k: usize,
    seed: u64,
    repeat: usize,
    question_id: &str,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(seed, repeat, question_id));
    let mut idx = rand::seq::index::sample(&mut rng, pool_size, k).into_vec();
    idx.sort_unstable();
    idx
}

fn check_draws<T>(pools: &[QuestionPool<T>], k: usize, repeats: usize) -> Result<(), EvalError> {
    check_pools(pools)?;
    if k == 0 || repeats == 0 {
        return Err(EvalError::ZeroDraws);
    }
    if let Some(p) = pools.iter().find(|p| p.trajectories.len() < k) {
        return Err(EvalError::KTooLarge {
            k,
            pool: p.trajectories.len(),
            question_id: p.question_id.clone(),
        });
    }
    Ok(())
}

fn decide<T: Scalar>(items: &[&ScoredTrajectory<T>], method: Method) -> Result<String, EvalError> {
    let answers: Vec<&str> = items.iter().map(|t| t.answer.as_str()).collect();
    match method {
        Method::Maj => Ok(unweighted_majority(&answers)),
        Method::Chronos { eta } => {
            let scores: Vec<T> = items.iter().map(|t| t.score).collect();
            match vote(&answers, &scores, eta) {
                Ok(out) => Ok(out.winner),
                Err(VoteError::AllNoAnswer) => Ok(NO_ANSWER.to_string()),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Winner of every (repeat, question) draw, [`NO_ANSWER`] when nothing
/// could be chosen. Indexed `[repeat][question]`.
pub fn draw_winners<T: Scalar>(
    pools: &[QuestionPool<T>],
    k: usize,
    repeats: usize,
    seed: u64,
    method: Method,
) -> Result<Vec<Vec<String>>, EvalError> {
    check_draws(pools, k, repeats)?;
    (0..repeats)
        .map(|r| {
            pools
                .iter()
                .map(|p| {
                    let idx = draw_indices(p.trajectories.len(), k, seed, r, &p.question_id);
                    let items: Vec<&ScoredTrajectory<T>> =
                        idx.iter().map(|&i| &p.trajectories[i]).collect();
                    decide(&items, method)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

impl MethodStats {
    fn from_repeats(per_repeat: Vec<f64>) -> Self {
        let n = per_repeat.len() as f64;
        let mean = per_repeat.iter().sum::<f64>() / n;
        let var = per_repeat
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n;
        Self {
            mean,
            std: var.sqrt(),
            per_repeat,
        }
    }
}

/// Accuracy statistics plus per-question accuracy (over repeats).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleResult {
    pub stats: MethodStats,
    pub per_question: Vec<f64>,
}

pub fn subsample_eval<T: Scalar>(
    pools: &[QuestionPool<T>],
    k: usize,
    repeats: usize,
    seed: u64,
    method: Method,
) -> Result<SubsampleResult, EvalError> {
    let winners = draw_winners(pools, k, repeats, seed, method)?;
    let correct = |r: &Vec<String>, q: usize| pools[q].is_correct(&r[q]);
    let per_repeat: Vec<f64> = winners
        .iter()
        .map(|r| (0..pools.len()).filter(|&q| correct(r, q)).count() as f64 / pools.len() as f64)
        .collect();
    let per_question = (0..pools.len())
        .map(|q| winners.iter().filter(|r| correct(r, q)).count() as f64 / repeats as f64)
        .collect();
    Ok(SubsampleResult {
        stats: MethodStats::from_repeats(per_repeat),
        per_question,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub question_id: String,
    pub gold_answer: Option<String>,
    pub pool_size: usize,
    pub pass_at_1: f64,
    pub maj_accuracy: f64,
    pub chronos_accuracy: f64,
}

/// Consolidated evaluation. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub repeats: usize,
    pub eta: f64,
    pub seed: u64,
    pub n_questions: usize,
    pub pass_at_1: MethodStats,
    pub maj: MethodStats,
    pub chronos: MethodStats,
    /// AUC of the scores against correctness over every pooled trajectory.
    pub auc: Option<f64>,
    pub per_question: Vec<QuestionRow>,
}

pub fn compare_report<T: Scalar>(
    pools: &[QuestionPool<T>],
    k: usize,
    repeats: usize,
    eta: f64,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    check_draws(pools, k, repeats)?;
    let p1 = pass_at_1(pools)?;
    let maj = subsample_eval(pools, k, repeats, seed, Method::Maj)?;
    let chr = subsample_eval(pools, k, repeats, seed, Method::Chronos { eta })?;

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for p in pools {
        for t in &p.trajectories {
            scores.push(t.score);
            labels.push(p.is_correct(&t.answer));
        }
    }
    let auc = auc(&scores, &labels).ok();

    let per_question = pools
        .iter()
        .enumerate()
        .map(|(q, p)| QuestionRow {
            question_id: p.question_id.clone(),
            gold_answer: p.gold_answer.clone(),
            pool_size: p.trajectories.len(),
            pass_at_1: p.n_correct() as f64 / p.trajectories.len() as f64,
            maj_accuracy: maj.per_question[q],
            chronos_accuracy: chr.per_question[q],
        })
        .collect();
    Ok(EvalReport {
        k,
        repeats,
        eta,
        seed,
        n_questions: pools.len(),
        pass_at_1: MethodStats {
            mean: p1,
            std: 0.0,
            per_repeat: vec![p1; repeats],
        },
        maj: maj.stats,
        chronos: chr.stats,
        auc,
        per_question,
    })
}

pub fn write_question_csv<W: Write>(w: &mut W, report: &EvalReport) -> io::Result<()> {
    writeln!(
        w,
        "question_id,gold_answer,pool_size,pass_at_1,maj_accuracy,chronos_accuracy"
    )?;
    for r in &report.per_question {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            csv_field(&r.question_id),
            csv_field(r.gold_answer.as_deref().unwrap_or("")),
            r.pool_size,
            r.pass_at_1,
            r.maj_accuracy,
            r.chronos_accuracy
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    Correct,
    Incorrect,
}

impl Correctness {
    pub fn as_str(self) -> &'static str {
        match self {
            Correctness::Correct => "correct",
            Correctness::Incorrect => "incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRecord {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub class: Correctness,
    pub count: usize,
}

/// Histogram of min-max normalised scores per correctness class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub benchmark: String,
    pub bins: usize,
    /// All scores equal: everything sits in a single `[0, 1]` bin per class.
    pub degenerate: bool,
    pub records: Vec<HistRecord>,
}

/// Normalises every pooled score to `[0, 1]` by the min and max over all
/// pools, then bins per class. The last bin is closed on the right.
pub fn export_distribution<T: Scalar>(
    pools: &[QuestionPool<T>],
    bins: usize,
    benchmark: &str,
) -> Result<Distribution, EvalError> {
    check_pools(pools)?;
    if bins == 0 {
        return Err(EvalError::ZeroBins);
    }
    let items: Vec<(f64, Correctness)> = pools
        .iter()
        .flat_map(|p| {
            p.trajectories.iter().map(move |t| {
                let c = if p.is_correct(&t.answer) {
                    Correctness::Correct
                } else {
                    Correctness::Incorrect
                };
                (t.score.as_f64(), c)
            })
        })
        .collect();
    let lo = items.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let hi = items.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    let classes = [Correctness::Correct, Correctness::Incorrect];
    if hi <= lo {
        let records = classes
            .iter()
            .map(|&class| HistRecord {
                bin_lo: 0.0,
                bin_hi: 1.0,
                class,
                count: items.iter().filter(|x| x.1 == class).count(),
            })
            .collect();
        return Ok(Distribution {
            benchmark: benchmark.to_string(),
            bins: 1,
            degenerate: true,
            records,
        });
    }
    let mut counts = [vec![0usize; bins], vec![0usize; bins]];
    for &(s, c) in &items {
        let x = (s - lo) / (hi - lo);
        let b = ((x * bins as f64).floor() as usize).min(bins - 1);
        counts[(c == Correctness::Incorrect) as usize][b] += 1;
    }
    let mut records = Vec::with_capacity(2 * bins);
    for (ci, &class) in classes.iter().enumerate() {
        for (b, &count) in counts[ci].iter().enumerate() {
            records.push(HistRecord {
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                class,
                count,
            });
        }
    }
    Ok(Distribution {
        benchmark: benchmark.to_string(),
        bins,
        degenerate: false,
        records,
    })
}

pub fn write_histogram_csv<W: Write>(w: &mut W, dist: &Distribution) -> io::Result<()> {
    writeln!(w, "bin_lo,bin_hi,class,count")?;
    for r in &dist.records {
        writeln!(
            w,
            "{},{},{},{}",
            r.bin_lo,
            r.bin_hi,
            r.class.as_str(),
            r.count
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(
        q: &str,
        i: usize,
        answer: &str,
        label: Option<bool>,
        score: f64,
    ) -> ScoredTrajectory<f64> {
        ScoredTrajectory {
            question_id: q.into(),
            trajectory_id: format!("t{i}"),
            answer: answer.into(),
            label,
            score,
        }
    }

    fn pool(n: usize, n_correct: usize) -> QuestionPool<f64> {
        QuestionPool {
            question_id: "q".into(),
            gold_answer: Some("1".into()),
            trajectories: (0..n)
                .map(|i| {
                    let ok = i < n_correct;
                    st(
                        "q",
                        i,
                        if ok { "1" } else { "2" },
                        Some(ok),
                        if ok { 0.9 } else { 0.1 },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn pass_at_1_cases() {
        assert_eq!(pass_at_1(&[pool(48, 12)]).unwrap(), 0.25);
        assert_eq!(pass_at_1(&[pool(5, 5)]).unwrap(), 1.0);
        let empty = QuestionPool::<f64> {
            question_id: "e".into(),
            gold_answer: None,
            trajectories: vec![],
        };
        assert!(matches!(pass_at_1(&[empty]), Err(EvalError::EmptyPool(_))));
        assert!(matches!(pass_at_1::<f64>(&[]), Err(EvalError::NoPools)));
    }

    #[test]
    fn gold_inference_and_label_checks() {
        let items = vec![
            st("a", 0, "5", Some(true), 0.5),
            st("a", 1, "6", Some(false), 0.5),
            st("b", 0, "1", Some(false), 0.5),
        ];
        let pools = build_pools(items, None).unwrap();
        assert_eq!(pools[0].gold_answer.as_deref(), Some("5"));
        assert_eq!(pools[1].gold_answer, None);
        assert_eq!(pools[1].n_correct(), 0);

        let bad = vec![
            st("a", 0, "5", Some(true), 0.5),
            st("a", 1, "6", Some(true), 0.5),
        ];
        assert!(matches!(
            build_pools(bad, None),
            Err(EvalError::InconsistentLabels { .. })
        ));

        let unlabeled = vec![st("a", 0, "5", None, 0.5)];
        assert!(matches!(
            build_pools(unlabeled.clone(), None),
            Err(EvalError::MissingGold(_))
        ));
        let gold: BTreeMap<String, String> = [("a".to_string(), "\\boxed{05}".to_string())].into();
        assert!(build_pools(unlabeled, Some(&gold)).unwrap()[0].is_correct("5"));

        let mismatch = vec![st("a", 0, "6", Some(true), 0.5)];
        assert!(matches!(
            build_pools(mismatch, Some(&gold)),
            Err(EvalError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn full_pool_draws_have_no_variance() {
        let pools = vec![pool(10, 3)];
        let r = subsample_eval(&pools, 10, 5, 1, Method::Chronos { eta: 0.1 }).unwrap();
        assert_eq!(r.stats.std, 0.0);
        assert_eq!(r.stats.mean, 1.0);
        let m = subsample_eval(&pools, 10, 5, 1, Method::Maj).unwrap();
        assert_eq!(m.stats.mean, 0.0);
        assert!(matches!(
            subsample_eval(&pools, 11, 1, 1, Method::Maj),
            Err(EvalError::KTooLarge { .. })
        ));
    }

    #[test]
    fn draws_are_reproducible_and_seeded() {
        let a = draw_indices(512, 128, 3, 0, "q1");
        assert_eq!(a, draw_indices(512, 128, 3, 0, "q1"));
        assert_eq!(a.len(), 128);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, draw_indices(512, 128, 3, 1, "q1"));
        assert_ne!(a, draw_indices(512, 128, 3, 0, "q2"));
        assert_ne!(a, draw_indices(512, 128, 4, 0, "q1"));
    }

    #[test]
    fn single_trajectory_pools_coincide() {
        let pools = vec![
            pool(1, 1),
            QuestionPool {
                question_id: "z".into(),
                ..pool(1, 0)
            },
        ];
        let r = compare_report(&pools, 1, 3, 0.1, 0).unwrap();
        assert_eq!(r.pass_at_1.mean, 0.5);
        assert_eq!(r.maj.mean, 0.5);
        assert_eq!(r.chronos.mean, 0.5);
    }

    #[test]
    fn pass_at_1_ignores_seed() {
        let pools = vec![pool(20, 7)];
        let a = compare_report(&pools, 5, 4, 0.5, 1).unwrap();
        let b = compare_report(&pools, 5, 4, 0.5, 99).unwrap();
        assert_eq!(a.pass_at_1, b.pass_at_1);
        assert_eq!(a, compare_report(&pools, 5, 4, 0.5, 1).unwrap());
    }

    #[test]
    fn histogram_rules() {
        let pools = vec![pool(30, 10)];
        let d = export_distribution(&pools, 20, "toy").unwrap();
        assert_eq!(d.records.len(), 40);
        let total: usize = d.records.iter().map(|r| r.count).sum();
        assert_eq!(total, 30);
        let max_incorrect = d
            .records
            .iter()
            .filter(|r| r.class == Correctness::Incorrect && r.count > 0)
            .map(|r| r.bin_hi)
            .fold(0.0, f64::max);
        let min_correct = d
            .records
            .iter()
            .filter(|r| r.class == Correctness::Correct && r.count > 0)
            .map(|r| r.bin_lo)
            .fold(1.0, f64::min);
        assert!(max_incorrect <= min_correct);

        let mut flat = pool(6, 2);
        flat.trajectories.iter_mut().for_each(|t| t.score = 0.4);
        let d = export_distribution(&[flat], 20, "flat").unwrap();
        assert!(d.degenerate);
        assert_eq!(
            d.records.iter().map(|r| r.count).collect::<Vec<_>>(),
            vec![2, 4]
        );

        let mut out = Vec::new();
        write_histogram_csv(&mut out, &d).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("bin_lo,bin_hi,class,count\n0,1,correct,2\n"));
    }
}
