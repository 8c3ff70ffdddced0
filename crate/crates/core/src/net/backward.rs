//! Reverse-mode differentiation of the scorer with respect to its weights.

use super::config::ChronosConfig;
use super::forward::{same_pad_left, tap_range, Cache, Map};
use super::params::Weights;
use crate::scalar::Scalar;

/// Accumulates the gradient of a convolution (see `conv_same`).
#[allow(clippy::needless_range_loop)]
fn conv_same_backward<T: Scalar>(
    x: &Map<T>,
    w: &[T],
    l: usize,
    dout: &Map<T>,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut Map<T>>,
) {
    let len = x.len;
    let pad = same_pad_left(l);
    for f in 0..dout.channels {
        let drow = dout.row(f);
        db[f] += drow.iter().copied().sum::<T>();
        for c in 0..x.channels {
            let xr = x.row(c);
            let wbase = (f * x.channels + c) * l;
            for q in 0..l {
                let (lo, hi) = tap_range(q, pad, len);
                if lo >= hi {
                    continue;
                }
                let src = &xr[lo + q - pad..hi + q - pad];
                let g = &drow[lo..hi];
                dw[wbase + q] += g.iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[wbase + q];
                    let dst = &mut dx.row_mut(c)[lo + q - pad..hi + q - pad];
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
}

fn pointwise_backward<T: Scalar>(
    x: &Map<T>,
    w: &[T],
    dout: &Map<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut Map<T>>,
) {
    conv_same_backward(x, w, 1, dout, dw, db, dx)
}

/// Adds `d logit / d weights * dlogit` for one cached forward pass to `grads`.
#[allow(clippy::needless_range_loop)]
pub fn backward_from_logit<T: Scalar>(
    weights: &Weights<T>,
    cfg: &ChronosConfig,
    cache: &Cache<T>,
    dlogit: T,
    grads: &mut Weights<T>,
) {
    let width = cfg.width();
    let len = cfg.l_tail;
    let h = cfg.mlp_hidden;
    let p = cfg.n_proj;

    // head
    grads.head_b2.data[0] += dlogit;
    let mut dfeat = vec![T::zero(); width];
    for j in 0..h {
        let pre = cache.hidden_pre[j];
        let act = pre.max(T::zero());
        grads.head_w2.data[j] += dlogit * act;
        if pre <= T::zero() {
            continue;
        }
        let dpre = dlogit * weights.head_w2.data[j];
        grads.head_b1.data[j] += dpre;
        let wrow = &weights.head_w1.data[j * width..(j + 1) * width];
        let grow = &mut grads.head_w1.data[j * width..(j + 1) * width];
        for c in 0..width {
            grow[c] += dpre * cache.features[c];
            dfeat[c] += dpre * wrow[c];
        }
    }

    // masked mean pool over the summed residual stream
    let start = len - cache.valid_len;
    let inv_n = T::one() / T::from_count(cache.valid_len);
    let mut dsum = Map::zeros(width, len);
    for c in 0..width {
        let g = dfeat[c] * inv_n;
        dsum.row_mut(c)[start..].iter_mut().for_each(|v| *v = g);
    }

    // residual blocks, last to first
    let mut dcur = dsum.clone();
    for i in (0..cfg.n_blk).rev() {
        let bw = &weights.blocks[i];
        let bc = &cache.blocks[i];
        let prev = &cache.outs[i];
        let gb = &mut grads.blocks[i];
        let mut dprev = dsum.clone();

        pointwise_backward(
            prev,
            &bw.shortcut_w.data,
            &dcur,
            &mut gb.shortcut_w.data,
            &mut gb.shortcut_b.data,
            Some(&mut dprev),
        );

        let mut du = Map {
            channels: p,
            len,
            data: dcur.data[..p * len].to_vec(),
        };
        let mut offset = p * len;
        for (k, bank) in bw.convs.iter().enumerate() {
            let pre = &bc.conv_pre[k];
            let n = pre.data.len();
            let dpre = Map {
                channels: pre.channels,
                len,
                data: dcur.data[offset..offset + n]
                    .iter()
                    .zip(&pre.data)
                    .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
                    .collect(),
            };
            offset += n;
            let gk = &mut gb.convs[k];
            conv_same_backward(
                &bc.bottleneck,
                &bank.weight.data,
                bank.kernel_len,
                &dpre,
                &mut gk.weight.data,
                &mut gk.bias.data,
                Some(&mut du),
            );
        }
        pointwise_backward(
            prev,
            &bw.bottleneck_w.data,
            &du,
            &mut gb.bottleneck_w.data,
            &mut gb.bottleneck_b.data,
            Some(&mut dprev),
        );
        dcur = dprev;
    }

    // stem and projection
    let mut dz = Map::zeros(p, len);
    pointwise_backward(
        &cache.z,
        &weights.stem_w.data,
        &dcur,
        &mut grads.stem_w.data,
        &mut grads.stem_b.data,
        Some(&mut dz),
    );
    let x = Map {
        channels: 1,
        len,
        data: cache.input.clone(),
    };
    pointwise_backward(
        &x,
        &weights.proj_w.data,
        &dz,
        &mut grads.proj_w.data,
        &mut grads.proj_b.data,
        None,
    );
}
