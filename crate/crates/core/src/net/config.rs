use serde::{Deserialize, Serialize};

use super::NetError;

/// Architecture hyperparameters of the scorer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChronosConfig {
    pub l_tail: usize,
    pub n_proj: usize,
    pub n_conv: usize,
    /// Strictly increasing kernel lengths of the parallel convolutions.
    pub kernel_lengths: Vec<usize>,
    pub n_blk: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for ChronosConfig {
    fn default() -> Self {
        Self::new(2048, 16, 8, vec![10, 20, 40], 3)
    }
}

impl ChronosConfig {
    /// Builds a config with the hidden width equal to the block width.
    pub fn new(
        l_tail: usize,
        n_proj: usize,
        n_conv: usize,
        kernel_lengths: Vec<usize>,
        n_blk: usize,
    ) -> Self {
        let mlp_hidden = n_proj + kernel_lengths.len() * n_conv;
        Self {
            l_tail,
            n_proj,
            n_conv,
            kernel_lengths,
            n_blk,
            mlp_hidden,
            seed: 0,
        }
    }

    /// Number of parallel kernels per block.
    pub fn n_kernels(&self) -> usize {
        self.kernel_lengths.len()
    }

    /// Channel count of every block output: `n_proj + n_kernels * n_conv`.
    pub fn width(&self) -> usize {
        self.n_proj + self.n_kernels() * self.n_conv
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let dims = [
            ("l_tail", self.l_tail),
            ("n_proj", self.n_proj),
            ("n_conv", self.n_conv),
            ("n_blk", self.n_blk),
            ("mlp_hidden", self.mlp_hidden),
            ("kernel count", self.kernel_lengths.len()),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NetError::InvalidConfig(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        if self.kernel_lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NetError::InvalidConfig(format!(
                "kernel lengths must be strictly increasing, got {:?}",
                self.kernel_lengths
            )));
        }
        if self.kernel_lengths[0] == 0 || *self.kernel_lengths.last().unwrap() > self.l_tail {
            return Err(NetError::InvalidConfig(format!(
                "kernel lengths must lie in [1, l_tail={}], got {:?}",
                self.l_tail, self.kernel_lengths
            )));
        }
        Ok(())
    }
}

/// Kernel-length sets searched by default.
pub const DEFAULT_KERNEL_SETS: [[usize; 3]; 3] = [[10, 20, 40], [20, 40, 80], [40, 80, 160]];
pub const DEFAULT_N_PROJ_GRID: [usize; 2] = [8, 16];
pub const DEFAULT_N_CONV_GRID: [usize; 3] = [4, 8, 16];

/// The 2 x 3 x 3 default search grid, in (n_proj, n_conv, kernels) order.
pub fn default_grid(l_tail: usize, n_blk: usize) -> Vec<ChronosConfig> {
    let mut grid = Vec::with_capacity(18);
    for &n_proj in &DEFAULT_N_PROJ_GRID {
        for &n_conv in &DEFAULT_N_CONV_GRID {
            for ks in &DEFAULT_KERNEL_SETS {
                grid.push(ChronosConfig::new(
                    l_tail,
                    n_proj,
                    n_conv,
                    ks.to_vec(),
                    n_blk,
                ));
            }
        }
    }
    grid
}
