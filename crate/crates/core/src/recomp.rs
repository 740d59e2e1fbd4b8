//! Recomputation transforms: uniform layer-grouped recomputation and
//! block-wise shallow-first recomputation with a delayed deeper chunk.
//!
//! On a graph that carries a periodic pattern the transform rewrites the
//! pattern: every stage keeps its cyclic task order, durations change
//! (a recomputed backward becomes a recompute block followed by the
//! backward, or one fused block), offsets are packed back to back, chunks
//! beyond the first are postponed by `k` periods, and the stage phases are
//! solved again. A dependency cycle with positive weight is a conflict.

use std::collections::HashSet;

use serde::Serialize;

use crate::config::{Grouping, PipelineConfig, RecomputeMode, RecomputePolicy};
use crate::error::DomainError;
use crate::graph::{validate_graph, ConflictReport, Pattern, PatternSlot, TaskGraph};
use crate::rational::Q;
use crate::sched::{all_tasks, build_schedule, realize, SchedError, Shape, StrategyKind};
use crate::task::{TaskId, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecompError {
    #[error("block-wise recomputation needs v >= 2, got v = {0}")]
    IncompatibleStrategy(u32),
    #[error("recompute mode {0:?} is not handled by this transform")]
    WrongMode(RecomputeMode),
    #[error("dependency conflict remains at k = {k}: {} violated edge(s), first {}", report.len(), report.conflicts.first().map(|c| c.detail.as_str()).unwrap_or(""))]
    ConflictUnresolvable { k: u32, report: ConflictReport },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Where the delay `k` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySource {
    Computed,
    Override,
    NotApplicable,
}

/// What a recomputation transform did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecompPlan {
    pub mode: RecomputeMode,
    pub grouping: Grouping,
    pub ratio: Q,
    /// `(stage, chunk)` pairs whose activations are discarded after forward.
    pub selected: Vec<(u32, u32)>,
    /// Periods by which chunks beyond the first are postponed.
    pub k: u32,
    pub k_source: DelaySource,
    /// Extra activation blocks per stage reserved for regenerated activations.
    pub buffer_blocks: Vec<Q>,
    /// Steady-state period after the transform, for patterned schedules.
    pub period: Option<Q>,
    pub notes: Vec<String>,
}

impl RecompPlan {
    fn empty(mode: RecomputeMode, p: u32) -> RecompPlan {
        RecompPlan {
            mode,
            grouping: Grouping::Block,
            ratio: Q::ZERO,
            selected: Vec::new(),
            k: 0,
            k_source: DelaySource::NotApplicable,
            buffer_blocks: vec![Q::ZERO; p as usize],
            period: None,
            notes: Vec::new(),
        }
    }
}

/// Minimal `k >= 0` with
/// `(3 + 6*ceil((p-3)/6) - p) - (ceil((p-1)/2) - ceil((p-3)/6) - 1) + 7k >= 0`.
pub fn delay_rounds(p: u32) -> Result<u32, DomainError> {
    if p < 3 {
        return Err(DomainError::new(format!(
            "delay rounds need p >= 3, got {p}"
        )));
    }
    let p = i64::from(p);
    let a = Q::new(p - 3, 6).ceil();
    let interval = 3 + 6 * a - p;
    let delta = Q::new(p - 1, 2).ceil() - a - 1;
    let need = delta - interval;
    Ok(if need <= 0 {
        0
    } else {
        Q::new(need, 7).ceil() as u32
    })
}

/// Rewrites a pattern for new task shapes and a deeper-chunk delay of `k`.
pub(crate) fn restretch(base: &Pattern, shape: &Shape, k: u32, f: Q, g: Q) -> Pattern {
    let mut rows = Vec::with_capacity(base.slots.len());
    let mut period = Q::ZERO;
    for (s, row) in base.slots.iter().enumerate() {
        let s = s as u32;
        let mut out = Vec::with_capacity(row.len() + base.v as usize);
        let mut off = Q::ZERO;
        for x in row {
            let round = x.round + if x.chunk >= 2 { i64::from(k) } else { 0 };
            if x.kind == TaskKind::Backward && shape.standalone.contains(&(s, x.chunk)) {
                out.push(PatternSlot {
                    kind: TaskKind::Recompute,
                    chunk: x.chunk,
                    round,
                    offset: off,
                    duration: f,
                });
                off += f;
            }
            let duration = shape
                .task(TaskId::new(x.kind, s, x.chunk, 1), f, g)
                .duration;
            out.push(PatternSlot {
                kind: x.kind,
                chunk: x.chunk,
                round,
                offset: off,
                duration,
            });
            off += duration;
        }
        period = period.max(off);
        rows.push(out);
    }
    Pattern {
        p: base.p,
        v: base.v,
        period,
        latency: base.latency,
        slots: rows,
    }
}

/// Applies a new shape while keeping the graph's issue orders; recompute
/// tasks go right before their backward.
fn reshape_in_place(g: &TaskGraph, shape: &Shape, pattern: Option<Pattern>) -> TaskGraph {
    let meta = g.meta();
    let tasks = all_tasks(meta, shape);
    let orders = (0..g.p)
        .map(|s| {
            let mut o = Vec::new();
            for id in g.order_ids(s) {
                if id.kind == TaskKind::Backward && shape.standalone.contains(&(id.stage, id.chunk))
                {
                    o.push(TaskId::rec(id.stage, id.chunk, id.microbatch));
                }
                o.push(id);
            }
            o
        })
        .collect();
    let releases = g
        .tasks
        .iter()
        .zip(&g.releases)
        .filter(|(_, r)| !r.is_zero())
        .map(|(t, r)| (t.id, *r))
        .collect();
    TaskGraph::assemble(meta, tasks, orders, releases, pattern)
}

/// Applies a shape: on patterned graphs the pattern is rewritten and, when
/// feasible, realized afresh; otherwise the old orders are kept and any
/// conflict is left for [`validate_graph`] to report.
fn transform(g: &TaskGraph, shape: &Shape, k: u32) -> (TaskGraph, Option<Q>) {
    match &g.pattern {
        Some(base) => {
            let pat = restretch(base, shape, k, g.f_dur, g.b_dur);
            let period = Some(pat.period);
            match pat.solve() {
                Ok(phases) => (realize(g.meta(), &pat, &phases, shape), period),
                Err(_) => (reshape_in_place(g, shape, Some(pat)), period),
            }
        }
        None => (reshape_in_place(g, shape, None), None),
    }
}

/// Uniform layer-grouped recomputation: every backward grows by
/// `ratio * f`, forwards keep `1 - ratio` of their block, and one buffer
/// block is held during each backward. Expects a graph without
/// recomputation.
pub fn apply_standard_recompute(g: &TaskGraph, ratio: Q) -> TaskGraph {
    if ratio.is_zero() {
        return g.clone();
    }
    let shape = Shape {
        std_ratio: ratio,
        ..Shape::default()
    };
    transform(g, &shape, 0).0
}

fn blockwise_shape(g: &TaskGraph, policy: &RecomputePolicy) -> (Shape, Vec<(u32, u32)>) {
    let n = policy.selected_chunk_count(g.v);
    let selected: Vec<(u32, u32)> = (0..g.p)
        .flat_map(|s| (1..=n).map(move |c| (s, c)))
        .collect();
    let set: HashSet<(u32, u32)> = selected.iter().copied().collect();
    let shape = match policy.grouping {
        Grouping::Block => Shape {
            standalone: set,
            ..Shape::default()
        },
        Grouping::Layer => Shape {
            fused: set,
            ..Shape::default()
        },
    };
    (shape, selected)
}

fn choose_k(g: &TaskGraph, policy: &RecomputePolicy) -> Result<(u32, DelaySource), DomainError> {
    if g.pattern.is_none() {
        return Ok((0, DelaySource::NotApplicable));
    }
    match policy.delay_rounds_override {
        Some(k) => Ok((k, DelaySource::Override)),
        None if g.p < 3 => Ok((0, DelaySource::NotApplicable)),
        None => Ok((delay_rounds(g.p)?, DelaySource::Computed)),
    }
}

/// Builds the block-wise recomputed graph at delay `k` without checking it.
///
/// Use [`validate_graph`] on the result to see conflicts.
pub fn trecomp_graph(g: &TaskGraph, policy: &RecomputePolicy, k: u32) -> TaskGraph {
    let (shape, selected) = blockwise_shape(g, policy);
    if selected.is_empty() {
        return g.clone();
    }
    transform(g, &shape, k).0
}

/// Shallow-first block-wise recomputation.
///
/// Selected chunks discard their activations after forward and regenerate
/// them in a standalone recompute block issued right before the backward,
/// with no cross-stage edges. On patterned schedules the deeper chunks are
/// postponed by `k` periods. A conflict that survives is returned, not
/// patched.
pub fn apply_trecomp(
    g: &TaskGraph,
    policy: &RecomputePolicy,
) -> Result<(TaskGraph, RecompPlan), RecompError> {
    match policy.mode {
        RecomputeMode::None => return Ok((g.clone(), RecompPlan::empty(RecomputeMode::None, g.p))),
        RecomputeMode::StandardLayerGrouped => {
            return Err(RecompError::WrongMode(RecomputeMode::StandardLayerGrouped))
        }
        RecomputeMode::BlockWiseTemporal => {}
    }
    if g.v < 2 {
        return Err(RecompError::IncompatibleStrategy(g.v));
    }
    let (shape, selected) = blockwise_shape(g, policy);
    let mut plan = RecompPlan::empty(policy.mode, g.p);
    plan.grouping = policy.grouping;
    plan.ratio = policy.ratio;
    if selected.is_empty() {
        return Ok((g.clone(), plan));
    }
    let (k, src) = choose_k(g, policy)?;
    let (graph, period) = transform(g, &shape, k);
    let report = validate_graph(&graph);
    if !report.is_empty() {
        return Err(RecompError::ConflictUnresolvable { k, report });
    }
    let n = policy.selected_chunk_count(g.v);
    plan.buffer_blocks = vec![Q::ONE; g.p as usize];
    plan.selected = selected;
    plan.k = k;
    plan.k_source = src;
    plan.period = period;
    if g.pattern.is_none() {
        plan.notes.push(
            "schedule has no periodic pattern: recompute issued right before each backward, no delay"
                .to_string(),
        );
    } else if !(g.v == 2 && n == 1) {
        plan.notes.push(format!(
            "delay rounds are derived for v = 2 with chunk 1 recomputed; applied as-is with v = {} and {} chunk(s) recomputed",
            g.v, n
        ));
    }
    Ok((graph, plan))
}

/// Errors from [`build_pipeline`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Recomp(#[from] RecompError),
}

/// Builds a strategy's graph and applies the configured recomputation.
pub fn build_pipeline(
    cfg: &PipelineConfig,
    strategy: StrategyKind,
) -> Result<(TaskGraph, Option<RecompPlan>), BuildError> {
    let base = build_schedule(cfg, strategy)?;
    let Some(policy) = &cfg.recompute else {
        return Ok((base, None));
    };
    match policy.mode {
        RecomputeMode::None => Ok((base, None)),
        RecomputeMode::StandardLayerGrouped => {
            let g = apply_standard_recompute(&base, policy.ratio);
            let report = validate_graph(&g);
            if !report.is_empty() {
                return Err(RecompError::ConflictUnresolvable { k: 0, report }.into());
            }
            let mut plan = RecompPlan::empty(policy.mode, cfg.p);
            plan.grouping = Grouping::Layer;
            plan.ratio = policy.ratio;
            if !policy.ratio.is_zero() {
                plan.selected = (0..cfg.p)
                    .flat_map(|s| (1..=cfg.v).map(move |c| (s, c)))
                    .collect();
                plan.buffer_blocks = vec![Q::ONE; cfg.p as usize];
            }
            plan.period = g.pattern.as_ref().map(|p| p.period);
            Ok((g, Some(plan)))
        }
        RecomputeMode::BlockWiseTemporal => {
            let (g, plan) = apply_trecomp(&base, policy)?;
            Ok((g, Some(plan)))
        }
    }
}
