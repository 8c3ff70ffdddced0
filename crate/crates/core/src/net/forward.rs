use rayon::prelude::*;

use super::config::ChronosConfig;
use super::params::{BlockWeights, ModelParams, Weights};
use super::NetError;
use crate::scalar::{sigmoid, Scalar};
use crate::signal::{trajectory_signal, TemporalSignal};
use crate::store::Trajectory;

/// Channel-major feature map: `data[c * len + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Map<T> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Map<T> {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![T::zero(); channels * len],
        }
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[T] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize) -> T {
        self.data[c * self.len + t]
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Left padding of a "same" convolution of length `l`. The right side gets
/// `l - 1 - left`, so even kernels lean one step towards the future.
#[inline]
pub fn same_pad_left(l: usize) -> usize {
    (l - 1) / 2
}

/// Output positions `t` for which `t + q - pad` is a valid input index.
#[inline]
pub(crate) fn tap_range(q: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(q);
    let hi = (len + pad).saturating_sub(q).min(len);
    (lo, hi)
}

/// `out[f][t] = b[f] + sum_{c,q} w[f,c,q] * x[c][t + q - pad]`, zero outside.
#[allow(clippy::needless_range_loop)]
pub(crate) fn conv_same<T: Scalar>(
    x: &Map<T>,
    w: &[T],
    b: &[T],
    l: usize,
    out_ch: usize,
) -> Map<T> {
    let len = x.len;
    let pad = same_pad_left(l);
    let mut out = Map::zeros(out_ch, len);
    for f in 0..out_ch {
        let row = out.row_mut(f);
        row.iter_mut().for_each(|v| *v = b[f]);
        for c in 0..x.channels {
            let xr = x.row(c);
            let wbase = (f * x.channels + c) * l;
            for q in 0..l {
                let wv = w[wbase + q];
                let (lo, hi) = tap_range(q, pad, len);
                if lo >= hi {
                    continue;
                }
                let src = &xr[lo + q - pad..hi + q - pad];
                for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                    *o += wv * s;
                }
            }
        }
    }
    out
}

/// 1x1 convolution (channel mixing): `w` is `[out_ch, x.channels]`.
pub(crate) fn pointwise<T: Scalar>(x: &Map<T>, w: &[T], b: &[T], out_ch: usize) -> Map<T> {
    conv_same(x, w, b, 1, out_ch)
}

/// Per-block activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    /// Bottleneck output, `n_proj` channels.
    pub bottleneck: Map<T>,
    /// Pre-activation of each parallel convolution, `n_conv` channels each.
    pub conv_pre: Vec<Map<T>>,
}

/// Activations of one forward pass over a single signal.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    pub input: Vec<T>,
    pub valid_len: usize,
    /// Output of the 1x1 projection.
    pub z: Map<T>,
    /// Residual stream `o_0 .. o_{n_blk}`, all `width` channels.
    pub outs: Vec<Map<T>>,
    pub blocks: Vec<BlockCache<T>>,
    /// Masked mean over valid positions of the summed residual stream.
    pub features: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub logit: T,
    pub score: T,
}

fn check_len<T>(input: &[T], cfg: &ChronosConfig) -> Result<(), NetError> {
    if input.len() != cfg.l_tail {
        return Err(NetError::Shape(format!(
            "input length {} does not match l_tail {}",
            input.len(),
            cfg.l_tail
        )));
    }
    Ok(())
}

/// 1x1 projection of the single-channel input to `n_proj` channels.
pub fn project<T: Scalar>(
    input: &[T],
    weights: &Weights<T>,
    cfg: &ChronosConfig,
) -> Result<Map<T>, NetError> {
    check_len(input, cfg)?;
    let x = Map {
        channels: 1,
        len: input.len(),
        data: input.to_vec(),
    };
    Ok(pointwise(
        &x,
        &weights.proj_w.data,
        &weights.proj_b.data,
        cfg.n_proj,
    ))
}

/// One multi-scale block without its residual shortcut:
/// `Concat(u, ReLU(conv_l1(u)), ..., ReLU(conv_lk(u)))` with `u` the 1x1
/// bottleneck of `x`.
pub fn multiscale_block<T: Scalar>(
    x: &Map<T>,
    block: &BlockWeights<T>,
    cfg: &ChronosConfig,
) -> Result<(Map<T>, BlockCache<T>), NetError> {
    let width = cfg.width();
    if x.channels != width || block.bottleneck_w.shape != [cfg.n_proj, width] {
        return Err(NetError::Shape(format!(
            "block expects {} input channels, got {}",
            block.bottleneck_w.shape.get(1).copied().unwrap_or(0),
            x.channels
        )));
    }
    let u = pointwise(
        x,
        &block.bottleneck_w.data,
        &block.bottleneck_b.data,
        cfg.n_proj,
    );
    let mut out = Map::zeros(width, x.len);
    out.data[..u.data.len()].copy_from_slice(&u.data);
    let mut conv_pre = Vec::with_capacity(block.convs.len());
    let mut offset = u.data.len();
    for bank in &block.convs {
        let pre = conv_same(
            &u,
            &bank.weight.data,
            &bank.bias.data,
            bank.kernel_len,
            cfg.n_conv,
        );
        for (o, &p) in out.data[offset..offset + pre.data.len()]
            .iter_mut()
            .zip(&pre.data)
        {
            *o = p.max(T::zero());
        }
        offset += pre.data.len();
        conv_pre.push(pre);
    }
    Ok((
        out,
        BlockCache {
            bottleneck: u,
            conv_pre,
        },
    ))
}

/// Forward pass for one standardized signal of length `l_tail`.
///
/// Layer indices used in non-finite reports: 0 projection, 1 stem,
/// `2..=n_blk+1` blocks, `n_blk+2` head.
pub fn forward_one<T: Scalar>(
    weights: &Weights<T>,
    cfg: &ChronosConfig,
    input: &[T],
    valid_len: usize,
) -> Result<Cache<T>, NetError> {
    check_len(input, cfg)?;
    if valid_len == 0 || valid_len > cfg.l_tail {
        return Err(NetError::Shape(format!(
            "valid_len {valid_len} outside [1, {}]",
            cfg.l_tail
        )));
    }
    let width = cfg.width();
    let len = cfg.l_tail;
    let z = project(input, weights, cfg)?;
    if !z.all_finite() {
        return Err(NetError::NonFinite { layer: 0 });
    }
    let o0 = pointwise(&z, &weights.stem_w.data, &weights.stem_b.data, width);
    if !o0.all_finite() {
        return Err(NetError::NonFinite { layer: 1 });
    }
    let mut outs = vec![o0];
    let mut blocks = Vec::with_capacity(cfg.n_blk);
    for (i, bw) in weights.blocks.iter().enumerate() {
        let prev = outs.last().unwrap();
        let (mut o, bc) = multiscale_block(prev, bw, cfg)?;
        let sc = pointwise(prev, &bw.shortcut_w.data, &bw.shortcut_b.data, width);
        for (a, &s) in o.data.iter_mut().zip(&sc.data) {
            *a += s;
        }
        if !o.all_finite() {
            return Err(NetError::NonFinite { layer: 2 + i });
        }
        outs.push(o);
        blocks.push(bc);
    }

    let start = len - valid_len;
    let inv_n = T::one() / T::from_count(valid_len);
    let features: Vec<T> = (0..width)
        .map(|c| {
            let mut acc = T::zero();
            for o in &outs {
                acc += o.row(c)[start..].iter().copied().sum::<T>();
            }
            acc * inv_n
        })
        .collect();

    let h = cfg.mlp_hidden;
    let w1 = &weights.head_w1.data;
    let hidden_pre: Vec<T> = (0..h)
        .map(|j| {
            weights.head_b1.data[j]
                + w1[j * width..(j + 1) * width]
                    .iter()
                    .zip(&features)
                    .map(|(&a, &b)| a * b)
                    .sum::<T>()
        })
        .collect();
    let logit = weights.head_b2.data[0]
        + hidden_pre
            .iter()
            .zip(&weights.head_w2.data)
            .map(|(&p, &w)| p.max(T::zero()) * w)
            .sum::<T>();
    if !logit.is_finite() {
        return Err(NetError::NonFinite {
            layer: cfg.n_blk + 2,
        });
    }
    let eps = T::epsilon();
    let score = sigmoid(logit).max(eps).min(T::one() - eps);
    Ok(Cache {
        input: input.to_vec(),
        valid_len,
        z,
        outs,
        blocks,
        features,
        hidden_pre,
        logit,
        score,
    })
}

/// Forward pass over a batch of standardized signals.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[TemporalSignal<T>],
) -> Result<Vec<Cache<T>>, NetError> {
    batch
        .par_iter()
        .map(|s| forward_one(&params.weights, &params.config, &s.values, s.valid_len))
        .collect()
}

impl<T: Scalar> ModelParams<T> {
    /// Applies the embedded standardizer to a raw tail window.
    pub fn prepare(&self, sig: &TemporalSignal<T>) -> Result<TemporalSignal<T>, NetError> {
        check_len(&sig.values, &self.config)?;
        Ok(TemporalSignal {
            values: self.standardizer.apply(sig),
            valid_len: sig.valid_len,
        })
    }

    /// Score of a raw (unstandardized) tail window.
    pub fn score_signal(&self, sig: &TemporalSignal<T>) -> Result<T, NetError> {
        let prepared = self.prepare(sig)?;
        Ok(forward_one(
            &self.weights,
            &self.config,
            &prepared.values,
            prepared.valid_len,
        )?
        .score)
    }

    pub fn signal_of(&self, traj: &Trajectory) -> Result<TemporalSignal<T>, NetError> {
        Ok(trajectory_signal(traj, self.k_stat, self.config.l_tail)?)
    }

    pub fn score_trajectory(&self, traj: &Trajectory) -> Result<T, NetError> {
        self.score_signal(&self.signal_of(traj)?)
    }

    /// Scores raw tail windows in parallel; output order matches input.
    pub fn score_batch(&self, sigs: &[TemporalSignal<T>]) -> Result<Vec<T>, NetError> {
        sigs.par_iter().map(|s| self.score_signal(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::init_params;

    fn tiny() -> ChronosConfig {
        ChronosConfig::new(16, 3, 2, vec![1, 4, 5], 2)
    }

    #[test]
    fn projection_single_channel() {
        let cfg = ChronosConfig::new(2, 1, 1, vec![1], 1);
        let mut w = Weights::<f64>::zeros(&cfg);
        w.proj_w.data = vec![2.0];
        let z = project(&[1.0, 3.0], &w, &cfg).unwrap();
        assert_eq!(z.data, vec![2.0, 6.0]);
        w.proj_b.data = vec![0.5];
        assert_eq!(project(&[0.0, 0.0], &w, &cfg).unwrap().data, vec![0.5, 0.5]);
        assert!(project(&[0.0; 3], &w, &cfg).is_err());
    }

    #[test]
    fn projection_row_count() {
        let cfg = ChronosConfig::new(32, 8, 4, vec![3, 5, 7], 3);
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let z = project(&vec![0.3; 32], &p.weights, &cfg).unwrap();
        assert_eq!((z.channels, z.len), (8, 32));
    }

    #[test]
    fn block_shape_and_zero_input() {
        let cfg = ChronosConfig::new(2048, 16, 8, vec![10, 20, 40], 1);
        let mut p = init_params::<f64>(&cfg, 2).unwrap();
        for (k, bank) in p.weights.blocks[0].convs.iter_mut().enumerate() {
            bank.bias.data = (0..8).map(|f| f as f64 - 3.0 + k as f64).collect();
        }
        let x = Map::zeros(cfg.width(), 2048);
        let (out, _) = multiscale_block(&x, &p.weights.blocks[0], &cfg).unwrap();
        assert_eq!((out.channels, out.len), (40, 2048));
        for (k, bank) in p.weights.blocks[0].convs.iter().enumerate() {
            for f in 0..8 {
                let expect = bank.bias.data[f].max(0.0);
                let row = out.row(16 + k * 8 + f);
                assert!(row.iter().all(|&v| v == expect));
            }
        }
        let bad = Map::zeros(cfg.width() + 1, 2048);
        assert!(multiscale_block(&bad, &p.weights.blocks[0], &cfg).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Map {
            channels: 2,
            len: 6,
            data: (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        for l in 1..=6 {
            let w: Vec<f64> = (0..2 * 2 * l).map(|i| (i as f64 * 0.11).cos()).collect();
            let b = [0.1, -0.2];
            let got = conv_same(&x, &w, &b, l, 2);
            let pad = same_pad_left(l) as isize;
            for f in 0..2 {
                for t in 0..6isize {
                    let mut acc = b[f];
                    for c in 0..2 {
                        for q in 0..l as isize {
                            let s = t + q - pad;
                            if (0..6).contains(&s) {
                                acc += w[(f * 2 + c) * l + q as usize] * x.at(c, s as usize);
                            }
                        }
                    }
                    assert!((got.at(f, t as usize) - acc).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let cfg = tiny();
        let p = ModelParams {
            weights: Weights::<f64>::zeros(&cfg),
            ..init_params(&cfg, 0).unwrap()
        };
        let sig = TemporalSignal {
            values: (0..16).map(|i| i as f64).collect(),
            valid_len: 10,
        };
        assert_eq!(p.score_signal(&sig).unwrap(), 0.5);
    }

    #[test]
    fn batch_order_and_composition_do_not_matter() {
        let cfg = tiny();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let sigs: Vec<TemporalSignal<f64>> = (0..6)
            .map(|k| TemporalSignal {
                values: (0..16)
                    .map(|i| ((i * (k + 1)) as f64 * 0.13).sin())
                    .collect(),
                valid_len: 16 - k,
            })
            .collect();
        let a = p.score_batch(&sigs).unwrap();
        let mut rev = sigs.clone();
        rev.reverse();
        let mut b = p.score_batch(&rev).unwrap();
        b.reverse();
        assert_eq!(a, b);
        let single = p.score_batch(&sigs[2..3]).unwrap();
        assert_eq!(single[0].to_bits(), a[2].to_bits());
        assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn extreme_inputs_stay_in_open_interval() {
        let cfg = tiny();
        let mut p = init_params::<f64>(&cfg, 5).unwrap();
        p.weights.head_b2.data[0] = 1e4;
        let sig = TemporalSignal {
            values: vec![1.0; 16],
            valid_len: 16,
        };
        let s = p.score_signal(&sig).unwrap();
        assert!(s < 1.0);
        p.weights.head_b2.data[0] = -1e4;
        let s = p.score_signal(&sig).unwrap();
        assert!(s > 0.0);
        p.weights.head_b2.data[0] = f64::INFINITY;
        assert!(matches!(
            p.score_signal(&sig),
            Err(NetError::NonFinite { layer: 4 })
        ));
    }
}
