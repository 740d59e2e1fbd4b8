//! Deterministic execution of a task graph.
//!
//! Each stage issues its tasks strictly in `stage_order`. A task starts as
//! soon as the stage is free, its release time has passed and every
//! predecessor has finished (plus the P2P latency across stages). Stages are
//! advanced in ascending index, so identical inputs always yield identical
//! timelines.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::DomainError;
use crate::graph::TaskGraph;
use crate::rational::Q;
use crate::sched::StrategyKind;
use crate::task::{TaskId, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("deadlock at t={time}: {} stage heads blocked, first {}", blocked.len(), blocked.first().map(|t| t.to_string()).unwrap_or_default())]
pub struct DeadlockError {
    pub time: Q,
    pub blocked: Vec<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub id: TaskId,
    pub start: Q,
    pub end: Q,
}

/// Start and end of every task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub strategy: StrategyKind,
    pub p: u32,
    pub v: u32,
    pub m: u32,
    pub t_unit: Q,
    pub latency: Q,
    pub total_time: Q,
    pub busy_time: Vec<Q>,
    /// Entries sorted by stage, then start time.
    pub entries: Vec<TimelineEntry>,
}

impl Timeline {
    /// Map from task id to `(start, end)`.
    pub fn lookup(&self) -> HashMap<TaskId, (Q, Q)> {
        self.entries
            .iter()
            .map(|e| (e.id, (e.start, e.end)))
            .collect()
    }

    /// Entries of one stage in start order.
    pub fn stage(&self, s: u32) -> impl Iterator<Item = &TimelineEntry> {
        self.entries.iter().filter(move |e| e.id.stage == s)
    }

    /// Idle time of stage `s` inside `[from, to]`.
    pub fn idle_between(&self, s: u32, from: Q, to: Q) -> Q {
        self.idle_intervals(s, from, to)
            .iter()
            .map(|(a, b)| *b - *a)
            .sum()
    }

    /// Maximal idle intervals of stage `s` clipped to `[from, to]`.
    pub fn idle_intervals(&self, s: u32, from: Q, to: Q) -> Vec<(Q, Q)> {
        let mut out = Vec::new();
        if to <= from {
            return out;
        }
        let mut cursor = from;
        for e in self.stage(s) {
            if e.end <= cursor {
                continue;
            }
            if e.start >= to {
                break;
            }
            if e.start > cursor {
                out.push((cursor, e.start));
            }
            cursor = cursor.max(e.end);
        }
        if cursor < to {
            out.push((cursor, to));
        }
        out
    }
}

/// One step of a piecewise-constant memory function, in units of `m_a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPoint {
    pub time: Q,
    pub activation: Q,
    pub buffer: Q,
    pub model_state: Q,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMemory {
    pub stage: u32,
    pub points: Vec<MemoryPoint>,
}

/// Per-stage memory occupancy over time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTimeline {
    pub act_block: Q,
    pub stages: Vec<StageMemory>,
}

impl MemoryTimeline {
    /// `(time, stage, category, value)` rows for CSV export.
    pub fn rows(&self) -> Vec<(Q, u32, &'static str, Q)> {
        let mut out = Vec::new();
        for st in &self.stages {
            for pt in &st.points {
                out.push((pt.time, st.stage, "activation", pt.activation));
                out.push((pt.time, st.stage, "buffer", pt.buffer));
                out.push((pt.time, st.stage, "model_state", pt.model_state));
            }
        }
        out
    }
}

/// Peak memory of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePeaks {
    pub stage: u32,
    /// Peak activation, in units of `m_a`.
    pub activation: Q,
    pub buffer: Q,
    /// Peak of activation plus buffer.
    pub activation_plus_buffer: Q,
    pub model_state: Q,
    /// Same peaks counted in activation blocks of `m_a/(v*p)`.
    pub activation_blocks: Q,
    pub activation_plus_buffer_blocks: Q,
    /// Peak activation blocks per chunk (index 0 is chunk 1).
    pub chunk_blocks: Vec<Q>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervals {
    pub fwd_interval: Q,
    pub bwd_interval: Q,
}

/// Aggregate results of a run. Times are absolute; `*_units` fields divide
/// by `t_unit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub strategy: StrategyKind,
    pub p: u32,
    pub v: u32,
    pub m: u32,
    pub t_unit: Q,
    pub total_time: Q,
    pub total_time_units: Q,
    pub busy_time: Vec<Q>,
    pub bubble_ratio: Q,
    pub stage_bubble_ratio: Vec<Q>,
    /// Forward and backward work excluding recomputation.
    pub useful_time: Q,
    pub recompute_time: Q,
    pub peaks: Vec<StagePeaks>,
    /// Stage-0 intervals in T_unit, measured when v = 2.
    pub intervals_units: Option<Intervals>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub timeline: Timeline,
    pub memory: MemoryTimeline,
    pub report: SimReport,
}

/// Runs the graph to completion.
pub fn simulate(g: &TaskGraph, cfg: &PipelineConfig) -> Result<SimOutput, DeadlockError> {
    let n = g.tasks.len();
    let p = g.p as usize;
    let mut start: Vec<Option<Q>> = vec![None; n];
    let mut end: Vec<Option<Q>> = vec![None; n];
    let mut next = vec![0usize; p];
    let mut free = vec![Q::ZERO; p];
    let mut done = 0;
    while done < n {
        let mut progressed = false;
        for s in 0..p {
            while let Some(&k) = g.stage_order[s].get(next[s]) {
                let mut t = free[s].max(g.releases[k]);
                let mut ready = true;
                for &d in &g.preds[k] {
                    match end[d] {
                        Some(e) => t = t.max(e + g.edge_latency(d, k)),
                        None => {
                            ready = false;
                            break;
                        }
                    }
                }
                if !ready {
                    break;
                }
                start[k] = Some(t);
                end[k] = Some(t + g.tasks[k].duration);
                free[s] = t + g.tasks[k].duration;
                next[s] += 1;
                done += 1;
                progressed = true;
            }
        }
        if !progressed {
            let blocked = (0..p)
                .filter_map(|s| g.stage_order[s].get(next[s]).map(|&k| g.tasks[k].id))
                .collect();
            let time = free.iter().copied().max().unwrap_or(Q::ZERO);
            return Err(DeadlockError { time, blocked });
        }
    }
    let start: Vec<Q> = start
        .into_iter()
        .map(|x| x.expect("all tasks ran"))
        .collect();
    let end: Vec<Q> = end.into_iter().map(|x| x.expect("all tasks ran")).collect();

    let total = end.iter().copied().max().unwrap_or(Q::ZERO);
    let mut busy = vec![Q::ZERO; p];
    let mut useful = Q::ZERO;
    let mut recompute = Q::ZERO;
    for t in &g.tasks {
        busy[t.id.stage as usize] += t.duration;
        useful += t.useful;
        recompute += t.duration - t.useful;
    }
    let mut entries: Vec<TimelineEntry> = g
        .tasks
        .iter()
        .enumerate()
        .map(|(k, t)| TimelineEntry {
            id: t.id,
            start: start[k],
            end: end[k],
        })
        .collect();
    entries.sort_by_key(|a| (a.id.stage, a.start, a.end));
    let timeline = Timeline {
        strategy: g.strategy,
        p: g.p,
        v: g.v,
        m: g.m,
        t_unit: cfg.t_unit(),
        latency: g.latency,
        total_time: total,
        busy_time: busy.clone(),
        entries,
    };

    let (memory, peaks) = memory_profile(g, cfg, &start, &end);
    let span = total * i64::from(g.p);
    let bubble_ratio = if total.is_zero() {
        Q::ZERO
    } else {
        Q::ONE - busy.iter().sum::<Q>() / span
    };
    let stage_bubble_ratio = busy
        .iter()
        .map(|b| {
            if total.is_zero() {
                Q::ZERO
            } else {
                Q::ONE - *b / total
            }
        })
        .collect();
    let intervals_units = if g.v == 2 && g.m >= 1 {
        measure_intervals(&timeline).ok().map(|(a, b)| Intervals {
            fwd_interval: a / cfg.t_unit(),
            bwd_interval: b / cfg.t_unit(),
        })
    } else {
        None
    };
    let report = SimReport {
        strategy: g.strategy,
        p: g.p,
        v: g.v,
        m: g.m,
        t_unit: cfg.t_unit(),
        total_time: total,
        total_time_units: total / cfg.t_unit(),
        busy_time: busy,
        bubble_ratio,
        stage_bubble_ratio,
        useful_time: useful,
        recompute_time: recompute,
        peaks,
        intervals_units,
    };
    Ok(SimOutput {
        timeline,
        memory,
        report,
    })
}

/// On-device fraction of per-stage model states under the configured offload.
pub fn model_state_on_device(cfg: &PipelineConfig) -> Q {
    match &cfg.offload {
        Some(o) => Q::ONE - Q::new(o.chunks_offloaded.len() as i64, i64::from(cfg.v)),
        None => Q::ONE,
    }
}

struct MemEvent {
    time: Q,
    /// Releases sort before allocations at equal times.
    alloc: bool,
    chunk: u32,
    act: Q,
    buf: Q,
}

fn memory_profile(
    g: &TaskGraph,
    cfg: &PipelineConfig,
    start: &[Q],
    end: &[Q],
) -> (MemoryTimeline, Vec<StagePeaks>) {
    let blk = cfg.act_block();
    let ms = model_state_on_device(cfg);
    let mut per_stage: Vec<Vec<MemEvent>> = (0..g.p).map(|_| Vec::new()).collect();
    for (k, t) in g.tasks.iter().enumerate() {
        let ev = &mut per_stage[t.id.stage as usize];
        let c = t.id.chunk;
        if !t.buf_alloc.is_zero() {
            ev.push(MemEvent {
                time: start[k],
                alloc: true,
                chunk: c,
                act: Q::ZERO,
                buf: t.buf_alloc,
            });
        }
        if !t.act_alloc.is_zero() {
            ev.push(MemEvent {
                time: end[k],
                alloc: true,
                chunk: c,
                act: t.act_alloc,
                buf: Q::ZERO,
            });
        }
        if !t.act_release.is_zero() || !t.buf_release.is_zero() {
            ev.push(MemEvent {
                time: end[k],
                alloc: false,
                chunk: c,
                act: -t.act_release,
                buf: -t.buf_release,
            });
        }
    }
    let mut stages = Vec::with_capacity(g.p as usize);
    let mut peaks = Vec::with_capacity(g.p as usize);
    for (s, mut ev) in per_stage.into_iter().enumerate() {
        ev.sort_by_key(|a| (a.time, a.alloc));
        let mut act = Q::ZERO;
        let mut buf = Q::ZERO;
        let mut chunk_act = vec![Q::ZERO; g.v as usize];
        let mut chunk_peak = vec![Q::ZERO; g.v as usize];
        let (mut pa, mut pb, mut pt) = (Q::ZERO, Q::ZERO, Q::ZERO);
        let mut points = vec![MemoryPoint {
            time: Q::ZERO,
            activation: Q::ZERO,
            buffer: Q::ZERO,
            model_state: ms,
        }];
        let mut k = 0;
        while k < ev.len() {
            let now = ev[k].time;
            while k < ev.len() && ev[k].time == now {
                act += ev[k].act;
                buf += ev[k].buf;
                chunk_act[(ev[k].chunk - 1) as usize] += ev[k].act;
                k += 1;
            }
            pa = pa.max(act);
            pb = pb.max(buf);
            pt = pt.max(act + buf);
            for (pk, a) in chunk_peak.iter_mut().zip(&chunk_act) {
                *pk = (*pk).max(*a);
            }
            let pt_now = MemoryPoint {
                time: now,
                activation: act * blk,
                buffer: buf * blk,
                model_state: ms,
            };
            match points.last_mut() {
                Some(last) if last.time == now => *last = pt_now,
                _ => points.push(pt_now),
            }
        }
        stages.push(StageMemory {
            stage: s as u32,
            points,
        });
        peaks.push(StagePeaks {
            stage: s as u32,
            activation: pa * blk,
            buffer: pb * blk,
            activation_plus_buffer: pt * blk,
            model_state: ms,
            activation_blocks: pa,
            activation_plus_buffer_blocks: pt,
            chunk_blocks: chunk_peak,
        });
    }
    (
        MemoryTimeline {
            act_block: blk,
            stages,
        },
        peaks,
    )
}

/// Stage-0 forward and backward intervals of the median micro-batch
/// `ceil(m/2)`: the wait between chunk 1 and chunk 2 beyond the pure transit
/// through the other `p-1` stages and `p` hops.
///
/// `fwd = F(0,2).start - F(0,1).end - (p-1)*f - p*L` and
/// `bwd = B(0,1).start - B(0,2).end - (p-1)*g - p*L`.
pub fn measure_intervals(tl: &Timeline) -> Result<(Q, Q), DomainError> {
    if tl.v != 2 {
        return Err(DomainError::new(format!(
            "intervals need v = 2, got v = {}",
            tl.v
        )));
    }
    let i = tl.m.div_ceil(2);
    let ix = tl.lookup();
    let get = |id: TaskId| {
        ix.get(&id)
            .copied()
            .ok_or_else(|| DomainError::new(format!("timeline lacks {id}")))
    };
    let f1 = get(TaskId::fwd(0, 1, i))?;
    let f2 = get(TaskId::fwd(0, 2, i))?;
    let b2 = get(TaskId::bwd(0, 2, i))?;
    let b1 = get(TaskId::bwd(0, 1, i))?;
    let f = f1.1 - f1.0;
    let g = b2.1 - b2.0;
    let hops = i64::from(tl.p);
    let rest = i64::from(tl.p) - 1;
    let fwd = f2.0 - f1.1 - f * rest - tl.latency * hops;
    let bwd = b1.0 - b2.1 - g * rest - tl.latency * hops;
    Ok((fwd, bwd))
}

/// Useful work over total stage time: recomputation and recompute-induced
/// backward inflation count as overhead.
pub fn mfu_proxy(rep: &SimReport) -> Q {
    if rep.total_time.is_zero() {
        return Q::ZERO;
    }
    rep.useful_time / (rep.total_time * i64::from(rep.p))
}

/// Number of tasks of a given kind in a timeline.
pub fn count_kind(tl: &Timeline, kind: TaskKind) -> usize {
    tl.entries.iter().filter(|e| e.id.kind == kind).count()
}
