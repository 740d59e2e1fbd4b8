//! Closed-form predictions used to cross-check simulations.
//!
//! Time values are in T_unit = t_fwd/(vp) and memory in units of `m_a`
//! unless a name says otherwise. Every ceiling and floor is evaluated on
//! exact rationals.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{PipelineConfig, RecomputeMode};
use crate::error::DomainError;
use crate::offload::{available_offload_time, available_upload_time, offload_conditions};
use crate::rational::Q;
use crate::recomp::delay_rounds;
use crate::sched::StrategyKind;

fn need(p: u32, min: u32) -> Result<i64, DomainError> {
    if p < min {
        Err(DomainError::new(format!(
            "formula needs p >= {min}, got {p}"
        )))
    } else {
        Ok(i64::from(p))
    }
}

fn ceil_q(n: i64, d: i64) -> i64 {
    Q::new(n, d).ceil()
}

/// Extra forward interval between the chunks, `3 + 6*ceil((p-3)/6) - p`.
pub fn fwd_interval(p: u32) -> Result<i64, DomainError> {
    let p = need(p, 3)?;
    Ok(3 + 6 * ceil_q(p - 3, 6) - p)
}

/// Extra backward interval between the chunks, `3 + 6*ceil((2p-3)/6) - 2p`.
pub fn bwd_interval(p: u32) -> Result<i64, DomainError> {
    let p = need(p, 3)?;
    Ok(3 + 6 * ceil_q(2 * p - 3, 6) - 2 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TPipePeaks {
    pub chunk1_blocks: i64,
    pub chunk2_blocks: i64,
    /// `(chunk1 + chunk2) / (2p)` of `m_a`.
    pub total_fraction: Q,
}

/// Peak stage-0 activation blocks of each chunk under T-Pipe with v = 2:
/// `ceil(2/3 + ceil((p-3)/6) + ceil((2p-3)/6) + p/2)` and `ceil((3p-2)/6)`.
pub fn tpipe_peaks(p: u32) -> Result<TPipePeaks, DomainError> {
    let p = need(p, 3)?;
    let inner = Q::new(2, 3) + ceil_q(p - 3, 6) + ceil_q(2 * p - 3, 6) + Q::new(p, 2);
    let c1 = inner.ceil();
    let c2 = ceil_q(3 * p - 2, 6);
    Ok(TPipePeaks {
        chunk1_blocks: c1,
        chunk2_blocks: c2,
        total_fraction: Q::new(c1 + c2, 2 * p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TPipeTime {
    pub warmup: Q,
    pub steady: Q,
    pub cooldown: Q,
    pub total: Q,
    pub bubble_ratio: Q,
}

/// Phase durations of T-Pipe: `2p`, `6(m-1)`, `4p`, total `6(m+p-1)`, and
/// bubble ratio `(p-1)/(m+p-1)`.
pub fn tpipe_time(p: u32, m: u32) -> Result<TPipeTime, DomainError> {
    let p = need(p, 1)?;
    if m < 1 {
        return Err(DomainError::new("formula needs m >= 1"));
    }
    let m = i64::from(m);
    Ok(TPipeTime {
        warmup: Q::int(2 * p),
        steady: Q::int(6 * (m - 1)),
        cooldown: Q::int(4 * p),
        total: Q::int(6 * (m + p - 1)),
        bubble_ratio: Q::new(p - 1, m + p - 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TRecompForms {
    /// `3p + ceil((p-1)/2) - 2`.
    pub life_chunk2: Q,
    /// `ceil(life_chunk2 / 7)`: chunk-2 blocks alive at once under a period of 7.
    pub lifespan_blocks: i64,
    /// `floor(p/2)`: the simplified block count.
    pub blocks: i64,
    pub blocks_with_buffer: i64,
    /// `(floor(p/2) + 1) / (2p)` of `m_a`.
    pub storage_fraction: Q,
    /// `floor(p/2) / (2p)` of `m_a`.
    pub storage_fraction_no_buffer: Q,
    /// `6p + 7(m-1)`.
    pub total_time: Q,
}

/// T-Pipe with chunk 1 fully recomputed block-wise.
pub fn trecomp_closed_forms(p: u32, m: u32) -> Result<TRecompForms, DomainError> {
    let p = need(p, 3)?;
    if m < 1 {
        return Err(DomainError::new("formula needs m >= 1"));
    }
    let m = i64::from(m);
    let life = 3 * p + ceil_q(p - 1, 2) - 2;
    let blocks = p / 2;
    Ok(TRecompForms {
        life_chunk2: Q::int(life),
        lifespan_blocks: ceil_q(life, 7),
        blocks,
        blocks_with_buffer: blocks + 1,
        storage_fraction: Q::new(blocks + 1, 2 * p),
        storage_fraction_no_buffer: Q::new(blocks, 2 * p),
        total_time: Q::int(6 * p + 7 * (m - 1)),
    })
}

/// 1F1B with half of every block recomputed: total `7(m-1+p)` T_unit and a
/// stored fraction of one half of `m_a`, before the buffer block.
pub fn onefoneb_half_recompute(p: u32, m: u32) -> (Q, Q) {
    let (p, m) = (i64::from(p), i64::from(m));
    (Q::int(7 * (m - 1 + p)), Q::new(1, 2))
}

/// Peak activation fraction of a baseline schedule at `stage`.
///
/// 1F1B (v = 1): `(p - stage)/p`. Interleave (v >= 2):
/// `(v*p + p - 2*stage - 1)/(v*p)`, which is `1 + (p-1)/(p*v)` at stage 0.
pub fn baseline_peaks(p: u32, v: u32, stage: u32) -> Result<Q, DomainError> {
    let pp = need(p, 1)?;
    if v < 1 || stage >= p {
        return Err(DomainError::new(format!(
            "need v >= 1 and stage < p, got v={v} stage={stage}"
        )));
    }
    let s = i64::from(stage);
    let v = i64::from(v);
    if v == 1 {
        Ok(Q::new(pp - s, pp))
    } else {
        Ok(Q::new(v * pp + pp - 2 * s - 1, v * pp))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffloadAnalytic {
    pub available_offload: Q,
    pub available_upload: Q,
    pub required_offload: Q,
    pub required_upload: Q,
    pub feasible_offload: bool,
    pub feasible_upload: bool,
}

/// All closed forms that apply to a configuration.
///
/// Fields are absent when the formula does not cover the configuration.
/// `formulas` maps each present field to the expression it evaluates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnalyticReport {
    pub strategy: StrategyKind,
    pub p: u32,
    pub m: u32,
    pub v: u32,
    /// True when the T-Pipe closed forms are expected to match the simulator
    /// exactly: v = 2, ratio 2, zero latency, m >= p.
    pub exact_regime: bool,
    pub tpipe_time: Option<TPipeTime>,
    pub tpipe_peaks: Option<TPipePeaks>,
    pub fwd_interval: Option<i64>,
    pub bwd_interval: Option<i64>,
    pub delay_rounds: Option<u32>,
    pub trecomp: Option<TRecompForms>,
    pub baseline_stage0_peak: Option<Q>,
    pub offload: Option<OffloadAnalytic>,
    pub formulas: BTreeMap<&'static str, &'static str>,
}

impl AnalyticReport {
    pub fn for_config(cfg: &PipelineConfig, strategy: StrategyKind) -> AnalyticReport {
        let mut formulas = BTreeMap::new();
        let tpipe2 = strategy == StrategyKind::TPipe && cfg.v == 2;
        let exact_regime =
            tpipe2 && cfg.bwd_fwd_ratio == Q::int(2) && cfg.p2p_latency.is_zero() && cfg.m >= cfg.p;
        let mode = cfg.recompute_mode();
        let mut r = AnalyticReport {
            strategy,
            p: cfg.p,
            m: cfg.m,
            v: cfg.v,
            exact_regime,
            tpipe_time: None,
            tpipe_peaks: None,
            fwd_interval: None,
            bwd_interval: None,
            delay_rounds: None,
            trecomp: None,
            baseline_stage0_peak: None,
            offload: None,
            formulas: BTreeMap::new(),
        };
        if tpipe2 {
            if mode == RecomputeMode::None {
                r.tpipe_time = tpipe_time(cfg.p, cfg.m).ok();
                formulas.insert("tpipe_time", "total 6(m+p-1), bubble (p-1)/(m+p-1)");
                r.tpipe_peaks = tpipe_peaks(cfg.p).ok();
                formulas.insert(
                    "tpipe_peaks",
                    "ceil(2/3+ceil((p-3)/6)+ceil((2p-3)/6)+p/2), ceil((3p-2)/6)",
                );
            }
            r.fwd_interval = fwd_interval(cfg.p).ok();
            formulas.insert("fwd_interval", "3+6*ceil((p-3)/6)-p");
            r.bwd_interval = bwd_interval(cfg.p).ok();
            formulas.insert("bwd_interval", "3+6*ceil((2p-3)/6)-2p");
            if mode == RecomputeMode::BlockWiseTemporal {
                r.delay_rounds = delay_rounds(cfg.p).ok();
                formulas.insert(
                    "delay_rounds",
                    "min k>=0: (3+6a-p)-(ceil((p-1)/2)-a-1)+7k>=0, a=ceil((p-3)/6)",
                );
                r.trecomp = trecomp_closed_forms(cfg.p, cfg.m).ok();
                formulas.insert(
                    "trecomp",
                    "life 3p+ceil((p-1)/2)-2, blocks floor(p/2)+1, total 6p+7(m-1)",
                );
            }
        }
        if strategy != StrategyKind::TPipe && mode == RecomputeMode::None {
            r.baseline_stage0_peak = baseline_peaks(cfg.p, cfg.v, 0).ok();
            formulas.insert(
                "baseline_stage0_peak",
                "1F1B (p-s)/p, interleave 1+(p-1)/(pv)",
            );
        }
        if let Some(o) = &cfg.offload {
            if let (Ok(ao), Ok(au), Ok((fo, fu))) = (
                available_offload_time(cfg.p, cfg.t_bwd()),
                available_upload_time(cfg.p, cfg.t_fwd),
                offload_conditions(cfg.p, o.t_step, o.t_upload, cfg.t_fwd, cfg.t_bwd()),
            ) {
                let two_p = 2 * i64::from(cfg.p);
                r.offload = Some(OffloadAnalytic {
                    available_offload: ao,
                    available_upload: au,
                    required_offload: o.t_step / two_p,
                    required_upload: o.t_upload / two_p,
                    feasible_offload: fo,
                    feasible_upload: fu,
                });
                formulas.insert(
                    "offload",
                    "(p-ceil((2p-3)/6)-1)*t_bwd/(2p) >= t_step/(2p); (p-ceil((p-3)/6)-1)*t_fwd/(2p) >= t_upload/(2p)",
                );
            }
        }
        r.formulas = formulas;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_at_eight_and_three() {
        let pk = tpipe_peaks(8).unwrap();
        assert_eq!((pk.chunk1_blocks, pk.chunk2_blocks), (9, 4));
        assert_eq!(pk.total_fraction, Q::new(13, 16));
        let pk = tpipe_peaks(3).unwrap();
        assert_eq!((pk.chunk1_blocks, pk.chunk2_blocks), (4, 2));
        assert_eq!(pk.total_fraction, Q::ONE);
        assert!(tpipe_peaks(2).is_err());
    }

    #[test]
    fn time_phases() {
        let t = tpipe_time(8, 8).unwrap();
        assert_eq!(t.total, Q::int(90));
        assert_eq!(t.bubble_ratio, Q::new(7, 15));
        assert_eq!(t.warmup + t.steady + t.cooldown, t.total);
        assert_eq!(tpipe_time(1, 5).unwrap().bubble_ratio, Q::ZERO);
    }

    #[test]
    fn trecomp_at_eight() {
        let t = trecomp_closed_forms(8, 8).unwrap();
        assert_eq!(t.life_chunk2, Q::int(26));
        assert_eq!(t.lifespan_blocks, 4);
        assert_eq!(t.blocks, 4);
        assert_eq!(t.storage_fraction, Q::new(5, 16));
        assert_eq!(t.total_time, Q::int(97));
        assert_eq!(onefoneb_half_recompute(8, 8).0, Q::int(105));
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_peaks(4, 1, 3).unwrap(), Q::new(1, 4));
        assert_eq!(baseline_peaks(4, 2, 0).unwrap(), Q::new(11, 8));
        assert_eq!(baseline_peaks(1, 3, 0).unwrap(), Q::ONE);
        assert_eq!(baseline_peaks(1, 1, 0).unwrap(), Q::ONE);
    }

    #[test]
    fn intervals_at_anchor_points() {
        assert_eq!(fwd_interval(8).unwrap(), 1);
        assert_eq!(bwd_interval(8).unwrap(), 5);
        assert_eq!(fwd_interval(3).unwrap(), 0);
    }
}
