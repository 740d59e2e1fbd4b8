//! Shared fixtures for the schedule benchmarks.

use pipesim::{Grouping, PipelineConfig, RecomputeMode, RecomputePolicy, Q};

/// Plain config with `v` chunks per stage and `m = 2p` micro-batches.
pub fn config(p: u32, v: u32) -> PipelineConfig {
    PipelineConfig::new(p, 2 * p, v)
}

/// Two-chunk config with block-wise temporal recomputation at half ratio.
pub fn trecomp_config(p: u32) -> PipelineConfig {
    let mut cfg = config(p, 2);
    cfg.recompute = Some(RecomputePolicy {
        mode: RecomputeMode::BlockWiseTemporal,
        ratio: Q::new(1, 2),
        delay_rounds_override: None,
        grouping: Grouping::Block,
    });
    cfg
}
