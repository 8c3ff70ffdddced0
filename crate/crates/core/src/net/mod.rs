//! The scorer network.
//!
//! A single-channel signal of length `l_tail` is projected by 1x1 filters to
//! `n_proj` channels, mapped by a learned 1x1 stem to the block width
//! `n_proj + n_kernels * n_conv`, and passed through `n_blk` multi-scale
//! blocks with 1x1 residual shortcuts. The residual stream of every stage is
//! summed, mean-pooled over the non-padded positions and fed to a one-hidden-
//! layer MLP with a sigmoid output.

mod backward;
mod checkpoint;
mod config;
mod flops;
mod forward;
mod params;

use thiserror::Error;

use crate::signal::SignalError;

pub use backward::backward_from_logit;
pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use config::{
    default_grid, ChronosConfig, DEFAULT_KERNEL_SETS, DEFAULT_N_CONV_GRID, DEFAULT_N_PROJ_GRID,
};
pub use flops::{count_flops, NOMINAL_GENERATION_FLOPS};
pub use forward::{
    forward, forward_one, multiscale_block, project, same_pad_left, BlockCache, Cache, Map,
};
pub use params::{init_params, BlockWeights, ConvBank, ModelParams, Tensor, Weights};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
