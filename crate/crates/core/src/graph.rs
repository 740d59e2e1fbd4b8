//! Task graphs, periodic patterns and dependency validation.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::Serialize;

use crate::rational::Q;
use crate::sched::StrategyKind;
use crate::task::{Task, TaskId, TaskKind};

/// Data-flow predecessors of a task.
///
/// `recomputed` says whether `(stage, chunk)` carries a standalone recompute
/// task, in which case the backward waits on it instead of the forward.
pub fn data_preds(id: TaskId, p: u32, v: u32, recomputed: bool) -> Vec<TaskId> {
    let TaskId {
        stage: s,
        chunk: c,
        microbatch: i,
        kind,
    } = id;
    match kind {
        TaskKind::Forward => {
            if s > 0 {
                vec![TaskId::fwd(s - 1, c, i)]
            } else if c > 1 {
                vec![TaskId::fwd(p - 1, c - 1, i)]
            } else {
                vec![]
            }
        }
        TaskKind::Recompute => vec![TaskId::fwd(s, c, i)],
        TaskKind::Backward => {
            let mut d = vec![if recomputed {
                TaskId::rec(s, c, i)
            } else {
                TaskId::fwd(s, c, i)
            }];
            if s + 1 < p {
                d.push(TaskId::bwd(s + 1, c, i));
            } else if c < v {
                d.push(TaskId::bwd(0, c + 1, i));
            }
            d
        }
        _ => vec![],
    }
}

/// One task slot of a periodic per-stage pattern.
///
/// In steady state the task of micro-batch `i` in this slot starts at
/// `phase[stage] + period * (round + i - 1) + offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatternSlot {
    pub kind: TaskKind,
    pub chunk: u32,
    pub round: i64,
    pub offset: Q,
    pub duration: Q,
}

/// A modulo schedule: every stage repeats the same slot sequence each period,
/// shifted by a per-stage phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pattern {
    pub p: u32,
    pub v: u32,
    pub period: Q,
    pub latency: Q,
    /// Slots per stage, sorted by offset.
    pub slots: Vec<Vec<PatternSlot>>,
}

struct PhaseEdge {
    from: usize,
    to: usize,
    weight: Q,
    pred: TaskId,
    succ: TaskId,
}

impl Pattern {
    fn slot(&self, stage: u32, kind: TaskKind, chunk: u32) -> Option<&PatternSlot> {
        self.slots[stage as usize]
            .iter()
            .find(|x| x.kind == kind && x.chunk == chunk)
    }

    fn recomputed(&self, stage: u32, chunk: u32) -> bool {
        self.slot(stage, TaskKind::Recompute, chunk).is_some()
    }

    /// Relative start of a slot within its stage frame.
    fn rel(&self, x: &PatternSlot) -> Q {
        self.period * x.round + x.offset
    }

    fn edges(&self) -> Vec<PhaseEdge> {
        let mut out = Vec::new();
        for (s, slots) in self.slots.iter().enumerate() {
            for x in slots {
                let succ = TaskId::new(x.kind, s as u32, x.chunk, 1);
                let rec = self.recomputed(s as u32, x.chunk);
                for pred in data_preds(succ, self.p, self.v, rec) {
                    let Some(y) = self.slot(pred.stage, pred.kind, pred.chunk) else {
                        continue;
                    };
                    let lat = if pred.stage == succ.stage {
                        Q::ZERO
                    } else {
                        self.latency
                    };
                    out.push(PhaseEdge {
                        from: pred.stage as usize,
                        to: s,
                        weight: self.rel(y) + y.duration + lat - self.rel(x),
                        pred,
                        succ,
                    });
                }
            }
        }
        out
    }

    /// Finds the earliest stage phases (stage 0 at zero) satisfying every
    /// dependency, or returns the dependency edges that form a conflict.
    pub fn solve(&self) -> Result<Vec<Q>, Vec<Conflict>> {
        let n = self.p as usize;
        let edges = self.edges();
        let mut bad = Vec::new();
        for e in edges.iter().filter(|e| e.from == e.to) {
            if e.weight > Q::ZERO {
                bad.push(phase_conflict(e));
            }
        }
        if !bad.is_empty() {
            return Err(bad);
        }
        let mut dist: Vec<Option<Q>> = vec![None; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[0] = Some(Q::ZERO);
        let mut last = None;
        for _ in 0..=n {
            last = None;
            for (k, e) in edges.iter().enumerate() {
                if e.from == e.to {
                    continue;
                }
                if let Some(d) = dist[e.from] {
                    let cand = d + e.weight;
                    if dist[e.to].is_none_or(|cur| cand > cur) {
                        dist[e.to] = Some(cand);
                        via[e.to] = Some(k);
                        last = Some(e.to);
                    }
                }
            }
            if last.is_none() {
                break;
            }
        }
        if let Some(mut x) = last {
            for _ in 0..n {
                x = edges[via[x].expect("relaxed node has a predecessor")].from;
            }
            let start = x;
            let mut cycle = Vec::new();
            loop {
                let e = &edges[via[x].expect("cycle node has a predecessor")];
                cycle.push(phase_conflict(e));
                x = e.from;
                if x == start {
                    break;
                }
            }
            cycle.reverse();
            return Err(cycle);
        }
        Ok(dist.into_iter().map(|d| d.unwrap_or(Q::ZERO)).collect())
    }
}

fn phase_conflict(e: &PhaseEdge) -> Conflict {
    Conflict {
        kind: ConflictKind::Phase,
        stage: e.succ.stage,
        pred: e.pred,
        succ: e.succ,
        detail: format!(
            "periodic placement needs {} of slack from {} to {}",
            e.weight, e.pred, e.succ
        ),
    }
}

/// How a dependency is violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConflictKind {
    /// A same-stage predecessor is issued after its successor.
    OrderViolation,
    /// The edge lies on a cycle of dependencies and issue orders.
    Cycle,
    /// The edge lies on a positive cycle of the periodic placement constraints.
    Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub stage: u32,
    pub pred: TaskId,
    pub succ: TaskId,
    pub detail: String,
}

/// Every violated edge found by [`validate_graph`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.conflicts.len()
    }
}

/// Tasks, dependencies and per-stage issue orders for one iteration.
#[derive(Debug, Clone, Serialize)]
pub struct TaskGraph {
    pub strategy: StrategyKind,
    pub p: u32,
    pub v: u32,
    pub m: u32,
    /// Forward duration of one block.
    pub f_dur: Q,
    /// Backward duration of one block before any recomputation.
    pub b_dur: Q,
    pub latency: Q,
    pub tasks: Vec<Task>,
    /// Predecessor indices per task.
    pub preds: Vec<Vec<usize>>,
    /// Issue order per stage, as task indices.
    pub stage_order: Vec<Vec<usize>>,
    /// Earliest start per task.
    pub releases: Vec<Q>,
    /// Periodic pattern the orders were derived from, if any.
    pub pattern: Option<Pattern>,
    #[serde(skip)]
    index: HashMap<TaskId, usize>,
}

/// Shape parameters shared by every graph builder.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GraphMeta {
    pub strategy: StrategyKind,
    pub p: u32,
    pub v: u32,
    pub m: u32,
    pub f_dur: Q,
    pub b_dur: Q,
    pub latency: Q,
}

impl TaskGraph {
    /// Builds a graph from tasks and per-stage orders of task ids, deriving
    /// data-flow edges.
    pub(crate) fn assemble(
        meta: GraphMeta,
        tasks: Vec<Task>,
        orders: Vec<Vec<TaskId>>,
        releases: HashMap<TaskId, Q>,
        pattern: Option<Pattern>,
    ) -> TaskGraph {
        let index: HashMap<TaskId, usize> =
            tasks.iter().enumerate().map(|(k, t)| (t.id, k)).collect();
        let recomputed: HashSet<(u32, u32, u32)> = tasks
            .iter()
            .filter(|t| t.id.kind == TaskKind::Recompute)
            .map(|t| (t.id.stage, t.id.chunk, t.id.microbatch))
            .collect();
        let preds = tasks
            .iter()
            .map(|t| {
                let rec = recomputed.contains(&(t.id.stage, t.id.chunk, t.id.microbatch));
                data_preds(t.id, meta.p, meta.v, rec)
                    .into_iter()
                    .filter_map(|d| index.get(&d).copied())
                    .collect()
            })
            .collect();
        let stage_order = orders
            .into_iter()
            .map(|o| o.into_iter().map(|id| index[&id]).collect())
            .collect();
        let rel = tasks
            .iter()
            .map(|t| releases.get(&t.id).copied().unwrap_or(Q::ZERO))
            .collect();
        TaskGraph {
            strategy: meta.strategy,
            p: meta.p,
            v: meta.v,
            m: meta.m,
            f_dur: meta.f_dur,
            b_dur: meta.b_dur,
            latency: meta.latency,
            tasks,
            preds,
            stage_order,
            releases: rel,
            pattern,
            index,
        }
    }

    pub(crate) fn meta(&self) -> GraphMeta {
        GraphMeta {
            strategy: self.strategy,
            p: self.p,
            v: self.v,
            m: self.m,
            f_dur: self.f_dur,
            b_dur: self.b_dur,
            latency: self.latency,
        }
    }

    /// Index of a task by id.
    pub fn find(&self, id: TaskId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.find(id).map(|k| &self.tasks[k])
    }

    /// Ids in issue order for one stage.
    pub fn order_ids(&self, stage: u32) -> Vec<TaskId> {
        self.stage_order[stage as usize]
            .iter()
            .map(|&k| self.tasks[k].id)
            .collect()
    }

    /// Delay added on the edge `pred -> succ`.
    pub fn edge_latency(&self, pred: usize, succ: usize) -> Q {
        if self.tasks[pred].id.stage == self.tasks[succ].id.stage {
            Q::ZERO
        } else {
            self.latency
        }
    }

    pub fn count(&self, kind: TaskKind) -> usize {
        self.tasks.iter().filter(|t| t.id.kind == kind).count()
    }

    /// Every dependency edge as `(pred, succ)` index pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.preds
            .iter()
            .enumerate()
            .flat_map(|(s, ps)| ps.iter().map(move |&p| (p, s)))
    }
}

/// Checks acyclicity of dependencies plus issue orders, order consistency on
/// each stage and, when the graph carries a periodic pattern, feasibility of
/// that pattern.
pub fn validate_graph(g: &TaskGraph) -> ConflictReport {
    let n = g.tasks.len();
    let mut conflicts = Vec::new();
    let mut pos = vec![usize::MAX; n];
    for order in &g.stage_order {
        for (k, &t) in order.iter().enumerate() {
            pos[t] = k;
        }
    }
    for (pr, su) in g.edges() {
        let (a, b) = (g.tasks[pr].id, g.tasks[su].id);
        if a.stage == b.stage && pos[pr] > pos[su] {
            conflicts.push(Conflict {
                kind: ConflictKind::OrderViolation,
                stage: a.stage,
                pred: a,
                succ: b,
                detail: format!("{b} is issued before its predecessor {a}"),
            });
        }
    }

    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (pr, su) in g.edges() {
        succs[pr].push(su);
        indeg[su] += 1;
    }
    for order in &g.stage_order {
        for w in order.windows(2) {
            succs[w[0]].push(w[1]);
            indeg[w[1]] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&k| indeg[k] == 0).collect();
    let mut seen = 0;
    while let Some(k) = queue.pop_front() {
        seen += 1;
        for &s in &succs[k] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    if seen < n {
        for (pr, su) in g.edges() {
            if indeg[pr] > 0 && indeg[su] > 0 {
                let (a, b) = (g.tasks[pr].id, g.tasks[su].id);
                conflicts.push(Conflict {
                    kind: ConflictKind::Cycle,
                    stage: b.stage,
                    pred: a,
                    succ: b,
                    detail: format!("{a} -> {b} lies on a cycle of dependencies and issue orders"),
                });
            }
        }
    }

    if let Some(pat) = &g.pattern {
        if let Err(mut c) = pat.solve() {
            conflicts.append(&mut c);
        }
    }
    ConflictReport { conflicts }
}
