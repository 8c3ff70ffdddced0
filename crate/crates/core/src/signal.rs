//! Per-step confidence signal and tail windowing.
//!
//! The signal value at step `t` is the negative mean of the top-`k_stat`
//! log-probabilities, so it is zero for a fully certain step and grows as
//! the distribution flattens. Higher values mean *lower* confidence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::store::Trajectory;

/// Default width of the per-step statistic, matching top-k = 20 sampling.
pub const DEFAULT_K_STAT: usize = 20;
/// Default tail window length.
pub const DEFAULT_L_TAIL: usize = 2048;
/// Value placed at left-padded positions.
pub const PAD_VALUE: f64 = 0.0;
/// Lower bound applied to a fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("k_stat {k_stat} exceeds stored top-k width {stored}")]
    KStatTooLarge { k_stat: usize, stored: usize },
    #[error("k_stat must be at least 1")]
    ZeroKStat,
    #[error("empty signal")]
    Empty,
    #[error("tail length must be at least 1")]
    ZeroTail,
    #[error("no non-padded positions to fit a standardizer on")]
    AllPadded,
}

/// Fixed-length, left-padded tail of a signal.
///
/// The last `valid_len` entries are real; everything before them is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSignal<T> {
    pub values: Vec<T>,
    pub valid_len: usize,
}

impl<T: Scalar> TemporalSignal<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first non-padded position.
    pub fn valid_start(&self) -> usize {
        self.values.len() - self.valid_len
    }

    pub fn valid(&self) -> &[T] {
        &self.values[self.valid_start()..]
    }
}

pub fn compute_signal<T: Scalar>(traj: &Trajectory, k_stat: usize) -> Result<Vec<T>, SignalError> {
    if k_stat == 0 {
        return Err(SignalError::ZeroKStat);
    }
    let stored = traj.k();
    if k_stat > stored {
        return Err(SignalError::KStatTooLarge { k_stat, stored });
    }
    let inv_k = T::one() / T::from_count(k_stat);
    Ok(traj
        .steps
        .iter()
        .map(|step| {
            let sum: T = step.top_k_logprobs[..k_stat]
                .iter()
                .map(|&lp| T::lit(lp))
                .sum();
            // -0.0 for an all-zero step; normalise to +0.0
            (-(sum * inv_k)).max(T::zero())
        })
        .collect())
}

pub fn tail_window<T: Scalar>(raw: &[T], l_tail: usize) -> Result<TemporalSignal<T>, SignalError> {
    if raw.is_empty() {
        return Err(SignalError::Empty);
    }
    if l_tail == 0 {
        return Err(SignalError::ZeroTail);
    }
    if raw.len() >= l_tail {
        return Ok(TemporalSignal {
            values: raw[raw.len() - l_tail..].to_vec(),
            valid_len: l_tail,
        });
    }
    let mut values = vec![T::lit(PAD_VALUE); l_tail - raw.len()];
    values.extend_from_slice(raw);
    Ok(TemporalSignal {
        values,
        valid_len: raw.len(),
    })
}

/// `compute_signal` followed by `tail_window`.
pub fn trajectory_signal<T: Scalar>(
    traj: &Trajectory,
    k_stat: usize,
    l_tail: usize,
) -> Result<TemporalSignal<T>, SignalError> {
    tail_window(&compute_signal::<T>(traj, k_stat)?, l_tail)
}

/// Global affine input normalisation fitted on non-padded training positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Standardizer {
    /// Population mean and standard deviation over every non-padded value.
    pub fn fit<T: Scalar>(signals: &[TemporalSignal<T>]) -> Result<Self, SignalError> {
        let n: usize = signals.iter().map(|s| s.valid_len).sum();
        if n == 0 {
            return Err(SignalError::AllPadded);
        }
        let nf = n as f64;
        let mean = signals
            .iter()
            .flat_map(|s| s.valid())
            .map(|v| v.as_f64())
            .sum::<f64>()
            / nf;
        let var = signals
            .iter()
            .flat_map(|s| s.valid())
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / nf;
        Ok(Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }

    /// Maps real positions to `(v - mean) / std`; padded positions become 0.
    pub fn apply<T: Scalar>(&self, sig: &TemporalSignal<T>) -> Vec<T> {
        let start = sig.valid_start();
        let mean = T::lit(self.mean);
        let inv_std = T::one() / T::lit(self.std);
        sig.values
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                if t < start {
                    T::zero()
                } else {
                    (v - mean) * inv_std
                }
            })
            .collect()
    }
}

pub fn fit_standardizer<T: Scalar>(
    signals: &[TemporalSignal<T>],
) -> Result<Standardizer, SignalError> {
    Standardizer::fit(signals)
}

pub fn standardize<T: Scalar>(sig: &TemporalSignal<T>, z: &Standardizer) -> Vec<T> {
    z.apply(sig)
}
