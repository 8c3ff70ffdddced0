//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chronos::eval::{build_pools, draw_winners, subsample_eval, Method, QuestionPool};
use chronos::net::{
    count_flops, forward_one, init_params, ChronosConfig, ModelParams, NOMINAL_GENERATION_FLOPS,
};
use chronos::signal::TemporalSignal;
use chronos::store::{split_dataset, SplitRatios};
use chronos::synth::{generate, SynthSpec};
use chronos::train::{auc, backward, bce_mean, train, Selection, TrainConfig, TrainReport};
use chronos::vote::{vote, ScoredTrajectory, NO_ANSWER};
use common::{brute_force_votes, oracle_forward, pair_count_auc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn minimal_config() -> ChronosConfig {
    ChronosConfig::new(32, 2, 2, vec![3, 5], 2)
}

/// Minimal-config parameters with non-zero biases.
fn minimal_params(seed: u64) -> ModelParams<f64> {
    let mut p = init_params::<f64>(&minimal_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    let names: Vec<String> = p
        .weights
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for (name, t) in names.iter().zip(p.weights.tensors_mut()) {
        if name.ends_with('b') {
            t.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    p
}

fn random_signal(rng: &mut ChaCha8Rng, l: usize) -> TemporalSignal<f64> {
    let valid_len = rng.random_range(1..=l);
    let mut values = vec![0.0; l];
    for v in values[l - valid_len..].iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    TemporalSignal { values, valid_len }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let params = minimal_params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<TemporalSignal<f64>> = (0..4).map(|_| random_signal(&mut rng, 32)).collect();
    let refs: Vec<&TemporalSignal<f64>> = batch.iter().collect();
    let labels = [true, false, true, false];
    let loss = |p: &ModelParams<f64>| -> f64 {
        let scores: Vec<f64> = batch
            .iter()
            .map(|s| {
                forward_one(&p.weights, &p.config, &s.values, s.valid_len)
                    .unwrap()
                    .score
            })
            .collect();
        bce_mean(&scores, &labels).unwrap()
    };
    let (_, grads) = backward(&params, &refs, &labels).unwrap();
    let h = 1e-6;
    let mut worst = (0.0f64, String::new());
    let mut worst_elem = 0.0f64;
    let mut n_checked = 0;
    let names: Vec<String> = grads.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for j in 0..analytic[ti].len() {
            let mut plus = params.clone();
            plus.weights.tensors_mut()[ti].data[j] += h;
            let mut minus = params.clone();
            minus.weights.tensors_mut()[ti].data[j] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic[ti][j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-3 {
                worst_elem = worst_elem.max((a - numeric).abs() / scale);
            }
            n_checked += 1;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(f64::MIN_POSITIVE);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst.0 < 1e-6 && secs < 10.0,
        detail: format!(
            "{n_checked} params in {} tensors, max per-tensor rel err {:.2e} ({}), max elementwise rel err (|g|>1e-3) {:.2e}, {secs:.2}s",
            names.len(),
            worst.0,
            worst.1,
            worst_elem
        ),
    }
}

fn forward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let p = minimal_params(1000 + i);
        let sig = random_signal(&mut rng, 32);
        let cache = forward_one(&p.weights, &p.config, &sig.values, sig.valid_len).unwrap();
        let (logit, score) = oracle_forward(&p.weights, &p.config, &sig.values, sig.valid_len);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        worst = worst
            .max(rel(cache.logit, logit))
            .max(rel(cache.score, score));
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("100 inputs, max rel err {worst:.2e} (logit and score)"),
    }
}

fn check_vote(answers: &[&str], scores: &[u32], mismatches: &mut usize) {
    let n = answers.len();
    for (m, want) in (1..=n).zip(brute_force_votes(answers, scores)) {
        let eta = m as f64 / n as f64;
        let got = vote(answers, scores, eta).map(|o| o.winner);
        if got.as_deref() != Ok(want.as_str()) {
            *mismatches += 1;
        }
    }
}

fn voting_oracle() -> Outcome {
    const FULL: usize = 5;
    let start = Instant::now();
    let labels = ["A", "B"];
    let mut instances = 0u64;
    let mut mismatches = 0usize;
    let mut answers = Vec::new();
    for n in 1..=8usize {
        for mask in 0..(1u32 << n) {
            answers.clear();
            answers.extend((0..n).map(|i| labels[((mask >> i) & 1) as usize]));
            if n <= FULL {
                // every ordered score tuple
                let mut scores = vec![1u32; n];
                loop {
                    check_vote(&answers, &scores, &mut mismatches);
                    instances += n as u64;
                    let mut i = 0;
                    while i < n && scores[i] == 9 {
                        scores[i] = 1;
                        i += 1;
                    }
                    if i == n {
                        break;
                    }
                    scores[i] += 1;
                }
            } else {
                // every score multiset, in descending and ascending position order
                let mut scores = vec![9u32; n];
                loop {
                    check_vote(&answers, &scores, &mut mismatches);
                    let rev: Vec<u32> = scores.iter().rev().copied().collect();
                    check_vote(&answers, &rev, &mut mismatches);
                    instances += 2 * n as u64;
                    // next non-increasing sequence
                    let mut i = n;
                    while i > 0 && scores[i - 1] == 1 {
                        i -= 1;
                    }
                    if i == 0 {
                        break;
                    }
                    let v = scores[i - 1] - 1;
                    for s in scores[i - 1..].iter_mut() {
                        *s = v;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: mismatches == 0 && secs < 60.0,
        detail: format!(
            "{instances} (instance, eta) checks: all orders for N<={FULL}, all score multisets in both orders for N<=8; {mismatches} mismatches, {secs:.1}s"
        ),
    }
}

fn degenerate_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut draws = 0usize;
    let mut mismatches = 0usize;
    for pool_i in 0..1000 {
        let size = rng.random_range(2..=64usize);
        let n_answers = rng.random_range(1..=5usize);
        let c: f64 = rng.random_range(0.01..1.0);
        let trajectories = (0..size)
            .map(|i| {
                let answer = if rng.random::<f64>() < 0.1 {
                    NO_ANSWER.to_string()
                } else {
                    format!("a{}", rng.random_range(0..n_answers))
                };
                ScoredTrajectory {
                    question_id: format!("p{pool_i}"),
                    trajectory_id: format!("t{i}"),
                    answer,
                    label: None,
                    score: c,
                }
            })
            .collect();
        let pool = QuestionPool {
            question_id: format!("p{pool_i}"),
            gold_answer: Some("a0".into()),
            trajectories,
        };
        let k = rng.random_range(1..=size);
        let pools = [pool];
        let maj = draw_winners(&pools, k, 4, pool_i, Method::Maj).unwrap();
        let chr = draw_winners(&pools, k, 4, pool_i, Method::Chronos { eta: 1.0 }).unwrap();
        for (a, b) in maj.iter().zip(&chr) {
            draws += 1;
            if a != b {
                mismatches += 1;
            }
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("1000 pools, {draws} draws, {mismatches} mismatches"),
    }
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.random_range(2..=50usize);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    rng.random_range(0..10) as f64 / 10.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let got = auc(&scores, &labels).unwrap();
        worst = worst.max((got - pair_count_auc(&scores, &labels)).abs());
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("1000 instances, max abs diff {worst:.2e}"),
    }
}

fn learn_spec(amplitude: f64) -> SynthSpec {
    SynthSpec {
        n_questions: 200,
        pool_size: 32,
        amplitude,
        seed: 3,
        ..SynthSpec::default()
    }
}

fn learn_config() -> ChronosConfig {
    ChronosConfig::new(256, 4, 2, vec![5, 11], 2)
}

fn learn_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 15,
        batch_size: 32,
        patience: 3,
        ensemble_size: 1,
        seed: 0,
        k_stat: 20,
        selection: Selection::Validation,
    }
}

fn train_synth(amplitude: f64) -> (ModelParams<f64>, TrainReport) {
    let spec = learn_spec(amplitude);
    let data = generate(&spec).unwrap();
    let split = split_dataset(data.trajectories.len(), SplitRatios::default(), 1).unwrap();
    train::<f64>(
        &data.trajectories,
        &split,
        &learn_config(),
        &learn_train_config(),
    )
    .unwrap()
}

fn synthetic_learnability(model_out: &mut Option<ModelParams<f64>>) -> Outcome {
    let start = Instant::now();
    let sigma = SynthSpec::default().noise_sigma;
    let (model, sep) = train_synth(3.0 * sigma);
    let (_, null) = train_synth(0.0);
    let secs = start.elapsed().as_secs_f64();
    let a_sep = sep.test_auc.unwrap_or(f64::NAN);
    let a_null = null.test_auc.unwrap_or(f64::NAN);
    *model_out = Some(model);
    Outcome {
        pass: a_sep >= 0.95 && (0.45..=0.55).contains(&a_null) && secs < 300.0,
        detail: format!(
            "test AUC {a_sep:.4} at 3 sigma (best epoch {}, loss {:.4} -> {:.4}), {a_null:.4} at amplitude 0; {secs:.1}s single-threaded",
            sep.best_epoch,
            sep.initial_loss,
            sep.best().train_loss
        ),
    }
}

fn minority_voting(model: &ModelParams<f64>) -> Outcome {
    let spec = SynthSpec {
        n_questions: 40,
        pool_size: 128,
        correct_fraction: 0.3,
        alphabet: 4,
        wrong_concentration: 0.8,
        amplitude: 3.0 * SynthSpec::default().noise_sigma,
        seed: 41,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let items: Vec<ScoredTrajectory<f64>> = data
        .trajectories
        .iter()
        .map(|t| ScoredTrajectory {
            question_id: t.question_id.clone(),
            trajectory_id: t.trajectory_id.clone(),
            answer: t.answer.clone(),
            label: t.label,
            score: model.score_trajectory(t).unwrap(),
        })
        .collect();
    let pools = build_pools(items, None).unwrap();
    let maj = subsample_eval(&pools, 64, 16, 0, Method::Maj)
        .unwrap()
        .stats
        .mean;
    let chr = subsample_eval(&pools, 64, 16, 0, Method::Chronos { eta: 0.1 })
        .unwrap()
        .stats
        .mean;
    Outcome {
        pass: chr - maj >= 0.20,
        detail: format!(
            "{} questions x {} pool, correct fraction 0.3: weighted@64 {:.2}% vs Maj@64 {:.2}% over 16 repeats",
            spec.n_questions,
            spec.pool_size,
            100.0 * chr,
            100.0 * maj
        ),
    }
}

fn flops_overhead() -> Outcome {
    let f = count_flops(&ChronosConfig::default(), 30);
    let ratio = f as f64 / NOMINAL_GENERATION_FLOPS;
    Outcome {
        pass: (1e9..=1e10).contains(&(f as f64)) && ratio < 1e-5,
        detail: format!(
            "default config, batch 30: {f} FLOPs ({:.2} GFLOPs), ratio to 2e15 = {ratio:.2e}",
            f as f64 / 1e9
        ),
    }
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chronos"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let result = (|| -> Result<String, String> {
        run_cli(&[
            "synth",
            "--output",
            &p("data.jsonl"),
            "--n-questions",
            "16",
            "--pool-size",
            "16",
            "--ltail",
            "64",
            "--extent",
            "32",
            "--kstat",
            "4",
            "--seed",
            "5",
        ])?;
        let train_args = |out: &str| {
            vec![
                "train".to_string(),
                "--input".into(),
                p("data.jsonl"),
                "--output".into(),
                p(out),
                "--ltail".into(),
                "64".into(),
                "--n-proj".into(),
                "2".into(),
                "--n-conv".into(),
                "2".into(),
                "--kernels".into(),
                "3,5".into(),
                "--n-blk".into(),
                "1".into(),
                "--kstat".into(),
                "4".into(),
                "--epochs".into(),
                "3".into(),
                "--ensemble-size".into(),
                "2".into(),
                "--seed".into(),
                "9".into(),
            ]
        };
        let a1 = train_args("run1");
        let a2 = train_args("run2");
        run_cli(&a1.iter().map(String::as_str).collect::<Vec<_>>())?;
        run_cli(&a2.iter().map(String::as_str).collect::<Vec<_>>())?;
        let (r1, r2) = (
            dir_bytes(&dir.path().join("run1")),
            dir_bytes(&dir.path().join("run2")),
        );
        if r1 != r2 {
            return Err("train outputs differ".into());
        }
        run_cli(&[
            "score",
            "--checkpoint",
            &p("run1"),
            "--input",
            &p("data.jsonl"),
            "--output",
            &p("scored.jsonl"),
        ])?;
        for out in ["eval1.json", "eval2.json"] {
            run_cli(&[
                "eval",
                "--input",
                &p("scored.jsonl"),
                "--output",
                &p(out),
                "--k",
                "8",
                "--repeats",
                "4",
                "--eta",
                "0.25",
                "--seed",
                "3",
            ])?;
        }
        if std::fs::read(p("eval1.json")).unwrap() != std::fs::read(p("eval2.json")).unwrap() {
            return Err("eval outputs differ".into());
        }
        Ok(format!(
            "train ({} files) and eval outputs byte-identical across reruns",
            r1.len()
        ))
    })();
    match result {
        Ok(detail) => Outcome { pass: true, detail },
        Err(detail) => Outcome {
            pass: false,
            detail,
        },
    }
}

fn main() {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .unwrap();
    let mut model = None;
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient check", gradient_check()),
        ("forward oracle", forward_oracle()),
        ("voting oracle", voting_oracle()),
        ("degenerate equivalence", degenerate_equivalence()),
        ("auc oracle", auc_oracle()),
        ("synthetic learnability", synthetic_learnability(&mut model)),
    ];
    results.push((
        "minority-correct voting",
        minority_voting(model.as_ref().unwrap()),
    ));
    results.push(("flops overhead", flops_overhead()));
    results.push(("determinism", determinism()));
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
