//! Offload planning: gradient offload with host optimizer steps placed in
//! cooldown bubbles, weight uploads placed in warmup bubbles.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::DomainError;
use crate::rational::Q;
use crate::sched::StrategyKind;
use crate::sim::Timeline;
use crate::task::TaskId;

fn ceil6(n: i64) -> i64 {
    Q::new(n, 6).ceil()
}

/// Idle time between the end of the deeper chunk's last backward and the
/// start of the shallower chunk's last backward:
/// `(p - ceil((2p-3)/6) - 1) * t_bwd / (2p)`.
pub fn available_offload_time(p: u32, t_bwd: Q) -> Result<Q, DomainError> {
    if p < 2 {
        return Err(DomainError::new(format!(
            "offload window needs p >= 2, got {p}"
        )));
    }
    let p = i64::from(p);
    Ok(t_bwd * (p - ceil6(2 * p - 3) - 1) / (2 * p))
}

/// Warmup idle time before the deeper chunk's first forward:
/// `(p - ceil((p-3)/6) - 1) * t_fwd / (2p)`.
pub fn available_upload_time(p: u32, t_fwd: Q) -> Result<Q, DomainError> {
    if p < 2 {
        return Err(DomainError::new(format!(
            "upload window needs p >= 2, got {p}"
        )));
    }
    let p = i64::from(p);
    Ok(t_fwd * (p - ceil6(p - 3) - 1) / (2 * p))
}

/// Closed-form feasibility: `t_step/(2p) <= available_offload_time` and
/// `t_upload/(2p) <= available_upload_time`.
pub fn offload_conditions(
    p: u32,
    t_step: Q,
    t_upload: Q,
    t_fwd: Q,
    t_bwd: Q,
) -> Result<(bool, bool), DomainError> {
    let off = available_offload_time(p, t_bwd)?;
    let up = available_upload_time(p, t_fwd)?;
    let two_p = 2 * i64::from(p);
    Ok((t_step / two_p <= off, t_upload / two_p <= up))
}

/// Placement of one offloaded chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkOffload {
    pub chunk: u32,
    /// Stage whose windows bind the overlap.
    pub binding_stage: u32,
    /// Span used by the gradient offload and host step at the binding stage.
    pub offload_window: Option<(Q, Q)>,
    /// Span used by the weight upload at the binding stage.
    pub upload_window: Option<(Q, Q)>,
    pub offload_available: Q,
    pub offload_required: Q,
    pub upload_available: Q,
    pub upload_required: Q,
    pub offload_overlap: Q,
    pub upload_overlap: Q,
    /// The smaller of the two overlaps.
    pub achieved_overlap: Q,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadPlan {
    pub per_chunk: Vec<ChunkOffload>,
    pub feasible_offload: bool,
    pub feasible_upload: bool,
    pub model_state_saving: Q,
    pub on_device_fraction: Q,
    /// False when the windows could not be taken from pipeline bubbles and
    /// the transfer is assumed to overlap computation for free.
    pub hardware_agnostic: bool,
    pub notes: Vec<String>,
}

fn overlap(avail: Q, required: Q) -> Q {
    if required.is_zero() {
        Q::ONE
    } else {
        (avail / required).min(Q::ONE)
    }
}

/// Greedily fills idle intervals with `required` time; returns the span used.
fn place(intervals: &[(Q, Q)], required: Q) -> Option<(Q, Q)> {
    let first = intervals.first()?.0;
    let mut left = required;
    let mut last = first;
    for &(a, b) in intervals {
        let take = (b - a).min(left);
        last = a + take;
        left -= take;
        if left.is_zero() {
            break;
        }
    }
    Some((first, last))
}

/// Offload window of `chunk` at `stage`: from the end of its last backward to
/// the start of the next shallower chunk's last backward (or the end of the
/// iteration for chunk 1).
pub fn offload_window(tl: &Timeline, stage: u32, chunk: u32) -> Option<(Q, Q)> {
    let ix = tl.lookup();
    let from = ix.get(&TaskId::bwd(stage, chunk, tl.m))?.1;
    let to = if chunk > 1 {
        ix.get(&TaskId::bwd(stage, chunk - 1, tl.m))?.0
    } else {
        tl.total_time
    };
    Some((from, to))
}

/// Upload window of `chunk` at `stage`: from time zero to its first forward.
pub fn upload_window(tl: &Timeline, stage: u32, chunk: u32) -> Option<(Q, Q)> {
    let ix = tl.lookup();
    Some((Q::ZERO, ix.get(&TaskId::fwd(stage, chunk, 1))?.0))
}

/// Measured idle time inside the offload window of `chunk` at `stage`.
pub fn measured_offload_idle(tl: &Timeline, stage: u32, chunk: u32) -> Option<Q> {
    offload_window(tl, stage, chunk).map(|(a, b)| tl.idle_between(stage, a, b))
}

/// Measured idle time inside the upload window of `chunk` at `stage`.
pub fn measured_upload_idle(tl: &Timeline, stage: u32, chunk: u32) -> Option<Q> {
    upload_window(tl, stage, chunk).map(|(a, b)| tl.idle_between(stage, a, b))
}

/// Places each offloaded chunk's transfers into measured idle time.
///
/// Every stage moves `t_step/(v*p)` of offload and `t_upload/(v*p)` of upload
/// per chunk. The overlap of a chunk is taken at its worst stage.
pub fn plan_offload(cfg: &PipelineConfig, tl: &Timeline) -> OffloadPlan {
    let pol = cfg.offload.clone().unwrap_or(crate::config::OffloadPolicy {
        t_step: Q::ZERO,
        t_upload: Q::ZERO,
        chunks_offloaded: Vec::new(),
    });
    let vp = i64::from(cfg.v) * i64::from(cfg.p);
    let req_off = pol.t_step / vp;
    let req_up = pol.t_upload / vp;
    let saving = Q::new(pol.chunks_offloaded.len() as i64, i64::from(cfg.v));
    let (feasible_offload, feasible_upload) =
        offload_conditions(cfg.p, pol.t_step, pol.t_upload, cfg.t_fwd, cfg.t_bwd())
            .unwrap_or((pol.t_step.is_zero(), pol.t_upload.is_zero()));
    let mut notes = Vec::new();
    let mut chunks = pol.chunks_offloaded.clone();
    chunks.sort_unstable_by(|a, b| b.cmp(a));
    chunks.dedup();

    if tl.strategy != StrategyKind::TPipe {
        notes.push(format!(
            "{} has no dedicated cooldown/warmup bubbles: transfers assumed to overlap computation at no cost",
            tl.strategy
        ));
        let per_chunk = chunks
            .iter()
            .map(|&c| ChunkOffload {
                chunk: c,
                binding_stage: 0,
                offload_window: None,
                upload_window: None,
                offload_available: Q::ZERO,
                offload_required: req_off,
                upload_available: Q::ZERO,
                upload_required: req_up,
                offload_overlap: Q::ONE,
                upload_overlap: Q::ONE,
                achieved_overlap: Q::ONE,
            })
            .collect();
        return OffloadPlan {
            per_chunk,
            feasible_offload,
            feasible_upload,
            model_state_saving: saving,
            on_device_fraction: Q::ONE - saving,
            hardware_agnostic: false,
            notes,
        };
    }

    let mut per_chunk = Vec::new();
    for &c in &chunks {
        let mut best: Option<ChunkOffload> = None;
        for s in 0..cfg.p {
            let (Some(ow), Some(uw)) = (offload_window(tl, s, c), upload_window(tl, s, c)) else {
                continue;
            };
            let oi = tl.idle_intervals(s, ow.0, ow.1);
            let ui = tl.idle_intervals(s, uw.0, uw.1);
            let oa: Q = oi.iter().map(|(a, b)| *b - *a).sum();
            let ua: Q = ui.iter().map(|(a, b)| *b - *a).sum();
            let oo = overlap(oa, req_off);
            let uo = overlap(ua, req_up);
            let cand = ChunkOffload {
                chunk: c,
                binding_stage: s,
                offload_window: place(&oi, req_off),
                upload_window: place(&ui, req_up),
                offload_available: oa,
                offload_required: req_off,
                upload_available: ua,
                upload_required: req_up,
                offload_overlap: oo,
                upload_overlap: uo,
                achieved_overlap: oo.min(uo),
            };
            let worse = match &best {
                None => true,
                Some(b) => {
                    (
                        cand.achieved_overlap,
                        cand.offload_available + cand.upload_available,
                    ) < (b.achieved_overlap, b.offload_available + b.upload_available)
                }
            };
            if worse {
                best = Some(cand);
            }
        }
        if let Some(b) = best {
            per_chunk.push(b);
        }
    }
    OffloadPlan {
        per_chunk,
        feasible_offload,
        feasible_upload,
        model_state_saving: saving,
        on_device_fraction: Q::ONE - saving,
        hardware_agnostic: true,
        notes,
    }
}

/// One row of [`scaling_report`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub p: u32,
    pub seq_scale: Q,
    pub t_bwd: Q,
    pub available: Q,
    pub required: Q,
    /// `available / required`; absent when nothing is required.
    pub ratio: Option<Q>,
}

/// Offload headroom across stage counts and sequence-length scales.
///
/// `t_step` stays fixed; `seq_scale` multiplies `t_bwd`.
pub fn scaling_report(cfg: &PipelineConfig, sweep: &[(u32, Q)]) -> Vec<ScalingRow> {
    let t_step = cfg.offload.as_ref().map(|o| o.t_step).unwrap_or(Q::ZERO);
    sweep
        .iter()
        .map(|&(p, scale)| {
            let t_bwd = cfg.t_bwd() * scale;
            let available = available_offload_time(p, t_bwd).unwrap_or(Q::ZERO);
            let required = t_step / (2 * i64::from(p));
            let ratio = (!required.is_zero()).then(|| available / required);
            ScalingRow {
                p,
                seq_scale: scale,
                t_bwd,
                available,
                required,
                ratio,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offload_window_examples() {
        assert_eq!(available_offload_time(8, Q::int(32)).unwrap(), Q::int(8));
        assert_eq!(available_offload_time(4, Q::int(16)).unwrap(), Q::int(4));
        assert_eq!(available_offload_time(2, Q::int(8)).unwrap(), Q::ZERO);
        assert!(available_offload_time(1, Q::int(8)).is_err());
    }

    #[test]
    fn upload_window_examples() {
        assert_eq!(available_upload_time(8, Q::int(16)).unwrap(), Q::int(6));
        assert_eq!(available_upload_time(2, Q::int(4)).unwrap(), Q::ONE);
        assert_eq!(available_upload_time(16, Q::int(32)).unwrap(), Q::int(12));
    }

    #[test]
    fn conditions_boundary() {
        let t_bwd = Q::int(32);
        let at = offload_conditions(8, t_bwd * 4, Q::ZERO, Q::int(16), t_bwd).unwrap();
        assert!(at.0);
        let past =
            offload_conditions(8, t_bwd * Q::new(41, 10), Q::ZERO, Q::int(16), t_bwd).unwrap();
        assert!(!past.0);
        assert_eq!(
            offload_conditions(3, Q::ZERO, Q::ZERO, Q::ONE, Q::ONE).unwrap(),
            (true, true)
        );
    }

    #[test]
    fn greedy_place_spans_intervals() {
        let iv = [(Q::int(1), Q::int(2)), (Q::int(4), Q::int(6))];
        assert_eq!(place(&iv, Q::int(2)), Some((Q::int(1), Q::int(5))));
        assert_eq!(place(&iv, Q::int(9)), Some((Q::int(1), Q::int(6))));
        assert_eq!(place(&[], Q::int(1)), None);
    }
}
