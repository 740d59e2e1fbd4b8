//! Schedule generators for 1F1B, Interleave-1F1B and T-Pipe.
//!
//! 1F1B and Interleave-1F1B are emitted as fixed per-stage issue orders.
//! T-Pipe is built as a modulo schedule: a one-micro-batch template placed on
//! a slot grid whose forward and backward slots alternate with period
//! `v*(f+g)`, then replicated once per micro-batch and issued in plan order
//! with [`tpipe_priority`] breaking ties.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::graph::{GraphMeta, Pattern, PatternSlot, TaskGraph};
use crate::rational::Q;
use crate::task::{tpipe_cmp, Task, TaskId, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    OneFOneB,
    Interleave1F1B,
    TPipe,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::OneFOneB => "1f1b",
            StrategyKind::Interleave1F1B => "interleave",
            StrategyKind::TPipe => "tpipe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy {0:?} (expected 1f1b, interleave or tpipe)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<StrategyKind, UnknownStrategy> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "1f1b" | "onefoneb" => Ok(StrategyKind::OneFOneB),
            "interleave" | "interleave1f1b" | "interleaved" => Ok(StrategyKind::Interleave1F1B),
            "tpipe" => Ok(StrategyKind::TPipe),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("strategy {strategy} is incompatible with v={v}: {reason}")]
    IncompatibleStrategy {
        strategy: StrategyKind,
        v: u32,
        reason: &'static str,
    },
    #[error("strategy {strategy} needs m to be a multiple of p, got m={m} p={p}")]
    UnevenMicrobatches {
        strategy: StrategyKind,
        p: u32,
        m: u32,
    },
}

/// How recomputation reshapes tasks. The default leaves every task as is.
#[derive(Debug, Clone, Default)]
pub(crate) struct Shape {
    /// `(stage, chunk)` pairs with a standalone recompute task.
    pub standalone: HashSet<(u32, u32)>,
    /// `(stage, chunk)` pairs whose recomputation is fused into the backward.
    pub fused: HashSet<(u32, u32)>,
    /// Uniform layer-grouped recomputation ratio applied to every backward.
    pub std_ratio: Q,
}

impl Shape {
    fn keep(&self, s: u32, c: u32) -> Q {
        if self.standalone.contains(&(s, c)) || self.fused.contains(&(s, c)) {
            Q::ZERO
        } else {
            Q::ONE - self.std_ratio
        }
    }

    /// Builds a task with its duration and memory effects.
    pub fn task(&self, id: TaskId, f: Q, g: Q) -> Task {
        let key = (id.stage, id.chunk);
        match id.kind {
            TaskKind::Forward => {
                let mut t = Task::new(id, f);
                t.act_alloc = self.keep(id.stage, id.chunk);
                t
            }
            TaskKind::Recompute => {
                let mut t = Task::new(id, f);
                t.useful = Q::ZERO;
                t.buf_alloc = Q::ONE;
                t
            }
            TaskKind::Backward => {
                let mut t = Task::new(id, g);
                t.act_release = self.keep(id.stage, id.chunk);
                if self.standalone.contains(&key) {
                    t.buf_release = Q::ONE;
                } else if self.fused.contains(&key) {
                    t.duration += f;
                    t.buf_alloc = Q::ONE;
                    t.buf_release = Q::ONE;
                } else if !self.std_ratio.is_zero() {
                    t.duration += self.std_ratio * f;
                    t.buf_alloc = Q::ONE;
                    t.buf_release = Q::ONE;
                }
                t
            }
            _ => Task::new(id, Q::ZERO),
        }
    }
}

/// Picks the task a T-Pipe stage issues first among `ready`.
///
/// Backward before forward; among backwards the deeper chunk, then the lower
/// micro-batch; among forwards the lower micro-batch, then the lower chunk.
///
/// # Panics
/// Panics if `ready` is empty.
pub fn tpipe_priority(ready: &[TaskId]) -> TaskId {
    *ready
        .iter()
        .min_by(|a, b| tpipe_cmp(a, b))
        .expect("ready set is nonempty")
}

fn meta(cfg: &PipelineConfig, strategy: StrategyKind) -> GraphMeta {
    GraphMeta {
        strategy,
        p: cfg.p,
        v: cfg.v,
        m: cfg.m,
        f_dur: cfg.t_unit(),
        b_dur: cfg.b_block(),
        latency: cfg.p2p_latency,
    }
}

/// Builds the base task graph of a strategy, without recomputation.
pub fn build_schedule(
    cfg: &PipelineConfig,
    strategy: StrategyKind,
) -> Result<TaskGraph, SchedError> {
    match strategy {
        StrategyKind::OneFOneB if cfg.v != 1 => Err(SchedError::IncompatibleStrategy {
            strategy,
            v: cfg.v,
            reason: "1F1B runs one chunk per stage",
        }),
        StrategyKind::Interleave1F1B | StrategyKind::TPipe if cfg.v < 2 => {
            Err(SchedError::IncompatibleStrategy {
                strategy,
                v: cfg.v,
                reason: "chunked schedules need v >= 2",
            })
        }
        StrategyKind::Interleave1F1B if !cfg.m.is_multiple_of(cfg.p) => {
            Err(SchedError::UnevenMicrobatches {
                strategy,
                p: cfg.p,
                m: cfg.m,
            })
        }
        StrategyKind::OneFOneB => Ok(one_f_one_b(meta(cfg, strategy))),
        StrategyKind::Interleave1F1B => Ok(interleave(meta(cfg, strategy))),
        StrategyKind::TPipe => {
            let meta = meta(cfg, strategy);
            let pattern = tpipe_pattern(meta.p, meta.v, meta.f_dur, meta.b_dur, meta.latency);
            let phases = (0..meta.p)
                .map(|s| (meta.f_dur + meta.latency) * i64::from(s))
                .collect::<Vec<_>>();
            Ok(realize(meta, &pattern, &phases, &Shape::default()))
        }
    }
}

pub(crate) fn all_tasks(meta: GraphMeta, shape: &Shape) -> Vec<Task> {
    let mut tasks = Vec::new();
    for s in 0..meta.p {
        for c in 1..=meta.v {
            for i in 1..=meta.m {
                tasks.push(shape.task(TaskId::fwd(s, c, i), meta.f_dur, meta.b_dur));
                if shape.standalone.contains(&(s, c)) {
                    tasks.push(shape.task(TaskId::rec(s, c, i), meta.f_dur, meta.b_dur));
                }
                tasks.push(shape.task(TaskId::bwd(s, c, i), meta.f_dur, meta.b_dur));
            }
        }
    }
    tasks
}

fn one_f_one_b(meta: GraphMeta) -> TaskGraph {
    let (p, m) = (meta.p, meta.m);
    let orders = (0..p)
        .map(|s| {
            let warm = (p - s - 1).min(m);
            let mut o = Vec::with_capacity(2 * m as usize);
            o.extend((1..=warm).map(|i| TaskId::fwd(s, 1, i)));
            for k in 1..=(m - warm) {
                o.push(TaskId::fwd(s, 1, warm + k));
                o.push(TaskId::bwd(s, 1, k));
            }
            o.extend((m - warm + 1..=m).map(|i| TaskId::bwd(s, 1, i)));
            o
        })
        .collect();
    TaskGraph::assemble(
        meta,
        all_tasks(meta, &Shape::default()),
        orders,
        HashMap::new(),
        None,
    )
}

/// Virtual micro-batch sequence of the interleaved schedule: groups of `p`
/// micro-batches pass through every chunk before the next group starts.
fn interleave_sequence(p: u32, m: u32, chunks: &[u32]) -> Vec<(u32, u32)> {
    let mut seq = Vec::with_capacity((m as usize) * chunks.len());
    let mut first = 1;
    while first <= m {
        let last = (first + p - 1).min(m);
        for &c in chunks {
            seq.extend((first..=last).map(|i| (c, i)));
        }
        first = last + 1;
    }
    seq
}

fn interleave(meta: GraphMeta) -> TaskGraph {
    let (p, m, v) = (meta.p, meta.m, meta.v);
    let up: Vec<u32> = (1..=v).collect();
    let down: Vec<u32> = (1..=v).rev().collect();
    let fseq = interleave_sequence(p, m, &up);
    let bseq = interleave_sequence(p, m, &down);
    let total = (m * v) as usize;
    let orders = (0..p)
        .map(|s| {
            let warm = (((p - s - 1) * 2 + (v - 1) * p) as usize).min(total);
            let mut o = Vec::with_capacity(2 * total);
            o.extend(fseq[..warm].iter().map(|&(c, i)| TaskId::fwd(s, c, i)));
            for k in 0..total - warm {
                let (c, i) = fseq[warm + k];
                o.push(TaskId::fwd(s, c, i));
                let (c, i) = bseq[k];
                o.push(TaskId::bwd(s, c, i));
            }
            o.extend(
                bseq[total - warm..]
                    .iter()
                    .map(|&(c, i)| TaskId::bwd(s, c, i)),
            );
            o
        })
        .collect();
    TaskGraph::assemble(
        meta,
        all_tasks(meta, &Shape::default()),
        orders,
        HashMap::new(),
        None,
    )
}

/// One-micro-batch T-Pipe template on the slot grid.
///
/// Stage `s` has phase `s*(f+L)`. Within a period `v*(f+g)` forward slots sit
/// at `j*(f+g)` and backward slots at `f + j*(f+g)`. Chunk 1 runs straight
/// down the pipeline in forward slot 0; deeper forwards and then all
/// backwards (deepest chunk first) each take the earliest free slot of their
/// kind at or after the moment their inputs arrive.
pub fn tpipe_template(p: u32, v: u32, f: Q, g: Q, lat: Q) -> (HashMap<TaskId, Q>, Q) {
    let period = (f + g) * i64::from(v);
    let phase = |s: u32| (f + lat) * i64::from(s);
    let mut used: HashSet<(u32, TaskKind, u32)> = HashSet::new();
    let mut at: HashMap<TaskId, Q> = HashMap::new();
    let place = |used: &mut HashSet<(u32, TaskKind, u32)>, kind: TaskKind, s: u32, ready: Q| {
        let base = phase(s)
            + if kind == TaskKind::Forward {
                Q::ZERO
            } else {
                f
            };
        let mut best: Option<(Q, u32)> = None;
        for j in 0..v {
            if used.contains(&(s, kind, j)) {
                continue;
            }
            let mut st = base + (f + g) * i64::from(j);
            if st < ready {
                st += period * ((ready - st) / period).ceil();
            }
            if best.is_none_or(|(b, _)| st < b) {
                best = Some((st, j));
            }
        }
        let (st, j) = best.expect("a free slot remains for every task");
        used.insert((s, kind, j));
        st
    };
    let mut ready = Q::ZERO;
    for c in 1..=v {
        for s in 0..p {
            let t = if c == 1 {
                used.insert((s, TaskKind::Forward, 0));
                phase(s)
            } else {
                place(&mut used, TaskKind::Forward, s, ready)
            };
            at.insert(TaskId::fwd(s, c, 1), t);
            ready = t + f + lat;
        }
    }
    ready = at[&TaskId::fwd(p - 1, v, 1)] + f;
    for c in (1..=v).rev() {
        for s in (0..p).rev() {
            let r = ready.max(at[&TaskId::fwd(s, c, 1)] + f);
            let t = place(&mut used, TaskKind::Backward, s, r);
            at.insert(TaskId::bwd(s, c, 1), t);
            ready = t + g + lat;
        }
    }
    (at, period)
}

/// The T-Pipe template as a periodic pattern with stage phases `s*(f+L)`.
pub fn tpipe_pattern(p: u32, v: u32, f: Q, g: Q, lat: Q) -> Pattern {
    let (at, period) = tpipe_template(p, v, f, g, lat);
    let slots = (0..p)
        .map(|s| {
            let phase = (f + lat) * i64::from(s);
            let mut row: Vec<PatternSlot> = at
                .iter()
                .filter(|(id, _)| id.stage == s)
                .map(|(id, &t)| {
                    let rel = t - phase;
                    let round = (rel / period).floor();
                    PatternSlot {
                        kind: id.kind,
                        chunk: id.chunk,
                        round,
                        offset: rel - period * round,
                        duration: if id.kind == TaskKind::Forward { f } else { g },
                    }
                })
                .collect();
            row.sort_by_key(|a| a.offset);
            row
        })
        .collect();
    Pattern {
        p,
        v,
        period,
        latency: lat,
        slots,
    }
}

/// Replicates a solved pattern for every micro-batch and derives issue
/// orders, stage-0 forward releases and tasks.
///
/// The whole plan is shifted so that the first deeper-chunk forward at stage 0
/// is planned no later than the moment chunk 1 of micro-batch 1 could reach
/// it through an idle pipeline.
pub(crate) fn realize(meta: GraphMeta, pat: &Pattern, phases: &[Q], shape: &Shape) -> TaskGraph {
    let mut plan: HashMap<TaskId, Q> = HashMap::new();
    for (s, row) in pat.slots.iter().enumerate() {
        for x in row {
            for i in 1..=meta.m {
                let id = TaskId::new(x.kind, s as u32, x.chunk, i);
                let t = phases[s] + pat.period * (x.round + i64::from(i) - 1) + x.offset;
                plan.insert(id, t);
            }
        }
    }
    let shift = if meta.v >= 2 {
        let arrival = plan[&TaskId::fwd(0, 1, 1)] + (meta.f_dur + meta.latency) * i64::from(meta.p);
        (arrival - plan[&TaskId::fwd(0, 2, 1)]).min(Q::ZERO)
    } else {
        Q::ZERO
    };
    for t in plan.values_mut() {
        *t += shift;
    }
    let tasks = all_tasks(meta, shape);
    let orders = (0..meta.p)
        .map(|s| {
            let mut o: Vec<TaskId> = tasks
                .iter()
                .map(|t| t.id)
                .filter(|id| id.stage == s)
                .collect();
            o.sort_by(|a, b| match plan[a].cmp(&plan[b]) {
                Ordering::Equal => tpipe_cmp(a, b),
                ord => ord,
            });
            o
        })
        .collect();
    let releases = plan
        .iter()
        .filter(|(id, _)| id.stage == 0 && id.kind == TaskKind::Forward)
        .map(|(&id, &t)| (id, t.max(Q::ZERO)))
        .collect();
    TaskGraph::assemble(meta, tasks, orders, releases, Some(pat.clone()))
}
