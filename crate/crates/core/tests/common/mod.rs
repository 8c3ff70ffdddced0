//! Reference implementations used as independent oracles.

#![allow(dead_code, clippy::needless_range_loop)]

use chronos::net::{ChronosConfig, Weights};

/// Direct scalar evaluation of the scorer, written from the layer
/// definitions with explicit index arithmetic. Returns `(logit, score)`.
pub fn oracle_forward(
    w: &Weights<f64>,
    cfg: &ChronosConfig,
    x: &[f64],
    valid_len: usize,
) -> (f64, f64) {
    let l = cfg.l_tail;
    let p = cfg.n_proj;
    let nc = cfg.n_conv;
    let width = p + nc * cfg.kernel_lengths.len();
    assert_eq!(x.len(), l);

    // z[c][t]
    let mut z = vec![vec![0.0; l]; p];
    for c in 0..p {
        for t in 0..l {
            z[c][t] = w.proj_w.data[c] * x[t] + w.proj_b.data[c];
        }
    }
    let mut o = vec![vec![0.0; l]; width];
    for c in 0..width {
        for t in 0..l {
            let mut acc = w.stem_b.data[c];
            for j in 0..p {
                acc += w.stem_w.data[c * p + j] * z[j][t];
            }
            o[c][t] = acc;
        }
    }
    let mut total = o.clone();

    for blk in &w.blocks {
        let mut u = vec![vec![0.0; l]; p];
        for c in 0..p {
            for t in 0..l {
                let mut acc = blk.bottleneck_b.data[c];
                for j in 0..width {
                    acc += blk.bottleneck_w.data[c * width + j] * o[j][t];
                }
                u[c][t] = acc;
            }
        }
        let mut next: Vec<Vec<f64>> = u.clone();
        for bank in &blk.convs {
            let k = bank.kernel_len;
            let left = (k - 1) / 2;
            for f in 0..nc {
                let mut row = vec![0.0; l];
                for t in 0..l {
                    let mut acc = bank.bias.data[f];
                    for c in 0..p {
                        for j in 0..k {
                            let src = t as isize + j as isize - left as isize;
                            if src >= 0 && (src as usize) < l {
                                acc += bank.weight.data[(f * p + c) * k + j] * u[c][src as usize];
                            }
                        }
                    }
                    row[t] = if acc > 0.0 { acc } else { 0.0 };
                }
                next.push(row);
            }
        }
        assert_eq!(next.len(), width);
        for c in 0..width {
            for t in 0..l {
                let mut acc = blk.shortcut_b.data[c];
                for j in 0..width {
                    acc += blk.shortcut_w.data[c * width + j] * o[j][t];
                }
                next[c][t] += acc;
            }
        }
        for c in 0..width {
            for t in 0..l {
                total[c][t] += next[c][t];
            }
        }
        o = next;
    }

    let start = l - valid_len;
    let feat: Vec<f64> = (0..width)
        .map(|c| total[c][start..].iter().sum::<f64>() / valid_len as f64)
        .collect();
    let h = cfg.mlp_hidden;
    let mut logit = w.head_b2.data[0];
    for j in 0..h {
        let mut acc = w.head_b1.data[j];
        for c in 0..width {
            acc += w.head_w1.data[j * width + c] * feat[c];
        }
        if acc > 0.0 {
            logit += w.head_w2.data[j] * acc;
        }
    }
    (logit, 1.0 / (1.0 + (-logit).exp()))
}

/// AUC by counting every (positive, negative) pair; ties count one half.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Top-eta weighted vote by brute force over integer weights, for every
/// retained count `m = 1..=n` (entry `m - 1`).
///
/// The rank of `i` counts the trajectories scoring higher, or equal with a
/// smaller index; the `m` lowest ranks are retained. The answer with the
/// largest weight sum wins; equal sums go to the lexicographically smallest
/// answer.
pub fn brute_force_votes(answers: &[&str], scores: &[u32]) -> Vec<String> {
    let n = answers.len();
    let rank: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect();
    let mut cands: Vec<&str> = answers.to_vec();
    cands.sort();
    cands.dedup();
    (1..=n)
        .map(|m| {
            let mut best: Option<(&str, u64)> = None;
            for &a in &cands {
                let mut present = false;
                let mut total = 0u64;
                for i in 0..n {
                    if rank[i] < m && answers[i] == a {
                        present = true;
                        total += scores[i] as u64;
                    }
                }
                if !present {
                    continue;
                }
                if best.is_none_or(|(_, b)| total > b) {
                    best = Some((a, total));
                }
            }
            best.expect("at least one retained answer").0.to_string()
        })
        .collect()
}
