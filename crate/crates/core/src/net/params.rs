use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ChronosConfig;
use super::NetError;
use crate::scalar::Scalar;
use crate::signal::{Standardizer, DEFAULT_K_STAT};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// One parallel convolution: `n_conv` filters over the bottleneck channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank<T> {
    pub kernel_len: usize,
    /// `[n_conv, n_proj, kernel_len]`
    pub weight: Tensor<T>,
    /// `[n_conv]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    /// `[n_proj, width]`
    pub bottleneck_w: Tensor<T>,
    pub bottleneck_b: Tensor<T>,
    pub convs: Vec<ConvBank<T>>,
    /// `[width, width]`
    pub shortcut_w: Tensor<T>,
    pub shortcut_b: Tensor<T>,
}

/// All learnable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    /// `[n_proj]`: the 1x1 projection of the single input channel.
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    /// `[width, n_proj]`: aligns the projection to the residual width.
    pub stem_w: Tensor<T>,
    pub stem_b: Tensor<T>,
    pub blocks: Vec<BlockWeights<T>>,
    /// `[mlp_hidden, width]`
    pub head_w1: Tensor<T>,
    pub head_b1: Tensor<T>,
    /// `[mlp_hidden]`
    pub head_w2: Tensor<T>,
    /// `[1]`
    pub head_b2: Tensor<T>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(cfg: &ChronosConfig) -> Self {
        let (p, w, h) = (cfg.n_proj, cfg.width(), cfg.mlp_hidden);
        Self {
            proj_w: Tensor::zeros(&[p]),
            proj_b: Tensor::zeros(&[p]),
            stem_w: Tensor::zeros(&[w, p]),
            stem_b: Tensor::zeros(&[w]),
            blocks: (0..cfg.n_blk)
                .map(|_| BlockWeights {
                    bottleneck_w: Tensor::zeros(&[p, w]),
                    bottleneck_b: Tensor::zeros(&[p]),
                    convs: cfg
                        .kernel_lengths
                        .iter()
                        .map(|&l| ConvBank {
                            kernel_len: l,
                            weight: Tensor::zeros(&[cfg.n_conv, p, l]),
                            bias: Tensor::zeros(&[cfg.n_conv]),
                        })
                        .collect(),
                    shortcut_w: Tensor::zeros(&[w, w]),
                    shortcut_b: Tensor::zeros(&[w]),
                })
                .collect(),
            head_w1: Tensor::zeros(&[h, w]),
            head_b1: Tensor::zeros(&[h]),
            head_w2: Tensor::zeros(&[h]),
            head_b2: Tensor::zeros(&[1]),
        }
    }

    /// Tensors in declaration order, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("proj_w".to_string(), &self.proj_w),
            ("proj_b".to_string(), &self.proj_b),
            ("stem_w".to_string(), &self.stem_w),
            ("stem_b".to_string(), &self.stem_b),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.bottleneck_w"), &b.bottleneck_w));
            out.push((format!("block{i}.bottleneck_b"), &b.bottleneck_b));
            for c in &b.convs {
                out.push((format!("block{i}.conv{}.w", c.kernel_len), &c.weight));
                out.push((format!("block{i}.conv{}.b", c.kernel_len), &c.bias));
            }
            out.push((format!("block{i}.shortcut_w"), &b.shortcut_w));
            out.push((format!("block{i}.shortcut_b"), &b.shortcut_b));
        }
        out.push(("head_w1".to_string(), &self.head_w1));
        out.push(("head_b1".to_string(), &self.head_b1));
        out.push(("head_w2".to_string(), &self.head_w2));
        out.push(("head_b2".to_string(), &self.head_b2));
        out
    }

    /// Mutable tensors in the same order as [`Weights::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.stem_w,
            &mut self.stem_b,
        ];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.bottleneck_w);
            out.push(&mut b.bottleneck_b);
            for c in b.convs.iter_mut() {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            out.push(&mut b.shortcut_w);
            out.push(&mut b.shortcut_b);
        }
        out.push(&mut self.head_w1);
        out.push(&mut self.head_b1);
        out.push(&mut self.head_w2);
        out.push(&mut self.head_b2);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ChronosConfig) -> Result<(), NetError> {
        let expected = Weights::<T>::zeros(cfg);
        let got = self.named_tensors();
        let want = expected.named_tensors();
        if got.len() != want.len() {
            return Err(NetError::Shape(format!(
                "expected {} tensors, found {}",
                want.len(),
                got.len()
            )));
        }
        for ((name, g), (_, w)) in got.iter().zip(&want) {
            if g.shape != w.shape || g.data.len() != w.data.len() {
                return Err(NetError::Shape(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    w.shape, g.shape
                )));
            }
        }
        Ok(())
    }
}

/// A trained or freshly initialised scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ChronosConfig,
    /// Width of the per-step statistic the model was trained with.
    pub k_stat: usize,
    pub standardizer: Standardizer,
    /// Seed the weights were initialised from.
    pub init_seed: u64,
    pub weights: Weights<T>,
}

/// Deterministic initialisation: weights ~ U(-a, a) with `a = sqrt(3 / fan_in)`,
/// biases zero.
pub fn init_params<T: Scalar>(
    config: &ChronosConfig,
    seed: u64,
) -> Result<ModelParams<T>, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::<T>::zeros(config);
    let bound = |fan_in: usize| (3.0 / fan_in as f64).sqrt();
    let (p, width) = (config.n_proj, config.width());
    w.proj_w = Tensor::uniform(&[p], bound(1), &mut rng);
    w.stem_w = Tensor::uniform(&[width, p], bound(p), &mut rng);
    for b in w.blocks.iter_mut() {
        b.bottleneck_w = Tensor::uniform(&[p, width], bound(width), &mut rng);
        for c in b.convs.iter_mut() {
            let shape = c.weight.shape.clone();
            c.weight = Tensor::uniform(&shape, bound(p * c.kernel_len), &mut rng);
        }
        b.shortcut_w = Tensor::uniform(&[width, width], bound(width), &mut rng);
    }
    w.head_w1 = Tensor::uniform(&[config.mlp_hidden, width], bound(width), &mut rng);
    w.head_w2 = Tensor::uniform(&[config.mlp_hidden], bound(config.mlp_hidden), &mut rng);
    Ok(ModelParams {
        config: config.clone(),
        k_stat: DEFAULT_K_STAT,
        standardizer: Standardizer::default(),
        init_seed: seed,
        weights: w,
    })
}
