use super::config::ChronosConfig;

/// Closed-form floating-point operation count of a forward pass.
///
/// Every multiply-add counts as two operations. Convolutions are counted
/// over the full kernel at every position (padding taps included). Residual
/// additions and the masked mean pool count one operation per element;
/// activations and the sigmoid are not counted.
pub fn count_flops(cfg: &ChronosConfig, batch_size: u64) -> u64 {
    let l = cfg.l_tail as u64;
    let p = cfg.n_proj as u64;
    let nc = cfg.n_conv as u64;
    let w = cfg.width() as u64;
    let h = cfg.mlp_hidden as u64;
    let b = cfg.n_blk as u64;
    let sum_kernels: u64 = cfg.kernel_lengths.iter().map(|&k| k as u64).sum();

    let projection = 2 * p * l;
    let stem = 2 * w * p * l;
    let per_block = 2 * p * w * l // bottleneck
        + 2 * nc * p * sum_kernels * l // parallel convolutions
        + 2 * w * w * l // shortcut
        + w * l; // residual add
    let pool = (b + 1) * w * l + w;
    let head = 2 * h * w + 2 * h;
    batch_size * (projection + stem + b * per_block + pool + head)
}

/// Nominal generation cost of a 30-query batch for a 1.5B model, in FLOPs.
pub const NOMINAL_GENERATION_FLOPS: f64 = 2.0e15;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_in_batch() {
        let cfg = ChronosConfig::default();
        assert_eq!(count_flops(&cfg, 0), 0);
        assert_eq!(count_flops(&cfg, 60), 2 * count_flops(&cfg, 30));
    }

    #[test]
    fn linear_in_tail_length_up_to_head() {
        let mut a = ChronosConfig::default();
        let base = count_flops(&a, 1);
        a.l_tail *= 2;
        let doubled = count_flops(&a, 1);
        let w = a.width() as u64;
        let head = 2 * a.mlp_hidden as u64 * w + 2 * a.mlp_hidden as u64 + w;
        assert_eq!(doubled - head, 2 * (base - head));
    }

    #[test]
    fn hand_count_for_minimal_config() {
        // l=4, p=1, nc=1, kernels {1}, 1 block: w=2, h=2
        let cfg = ChronosConfig::new(4, 1, 1, vec![1], 1);
        let expected = 2 * 4 // projection
            + 2 * 2 * 4 // stem
            + (2 * 2 * 4 + 2 * 4 + 2 * 4 * 4 + 2 * 4) // block
            + (2 * 2 * 4 + 2) // pool
            + (2 * 2 * 2 + 2 * 2); // head
        assert_eq!(count_flops(&cfg, 1), expected);
    }
}
