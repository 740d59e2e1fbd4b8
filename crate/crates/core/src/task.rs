//! Task identities and per-task costs.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rational::Q;

/// What a task does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Forward,
    Backward,
    Recompute,
    GradOffload,
    OptimizerStepHost,
    WeightUpload,
    OptimizerStepDevice,
}

impl TaskKind {
    /// Single-letter tag used in renderings and dumps.
    pub fn letter(self) -> char {
        match self {
            TaskKind::Forward => 'F',
            TaskKind::Backward => 'B',
            TaskKind::Recompute => 'R',
            TaskKind::GradOffload => 'O',
            TaskKind::OptimizerStepHost => 'H',
            TaskKind::WeightUpload => 'U',
            TaskKind::OptimizerStepDevice => 'D',
        }
    }
}

/// Unique identity of a task: stage is 0-based, chunk and micro-batch 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub stage: u32,
    pub chunk: u32,
    pub microbatch: u32,
    pub kind: TaskKind,
}

impl TaskId {
    pub fn new(kind: TaskKind, stage: u32, chunk: u32, microbatch: u32) -> TaskId {
        TaskId {
            stage,
            chunk,
            microbatch,
            kind,
        }
    }

    pub fn fwd(stage: u32, chunk: u32, microbatch: u32) -> TaskId {
        TaskId::new(TaskKind::Forward, stage, chunk, microbatch)
    }

    pub fn bwd(stage: u32, chunk: u32, microbatch: u32) -> TaskId {
        TaskId::new(TaskKind::Backward, stage, chunk, microbatch)
    }

    pub fn rec(stage: u32, chunk: u32, microbatch: u32) -> TaskId {
        TaskId::new(TaskKind::Recompute, stage, chunk, microbatch)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(s={},c={},i={})",
            self.kind.letter(),
            self.stage,
            self.chunk,
            self.microbatch
        )
    }
}

/// A task with its duration and memory effects, all in activation blocks.
///
/// Activation is allocated at the end of a forward (`act_alloc`) and freed at
/// the end of the consuming backward (`act_release`). Buffer memory is taken
/// at the start of a task (`buf_alloc`) and returned at the end of a task
/// (`buf_release`), possibly a different one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub duration: Q,
    /// Part of `duration` that counts as model work (excludes recomputation).
    pub useful: Q,
    pub act_alloc: Q,
    pub act_release: Q,
    pub buf_alloc: Q,
    pub buf_release: Q,
}

impl Task {
    pub fn new(id: TaskId, duration: Q) -> Task {
        Task {
            id,
            duration,
            useful: duration,
            act_alloc: Q::ZERO,
            act_release: Q::ZERO,
            buf_alloc: Q::ZERO,
            buf_release: Q::ZERO,
        }
    }
}

/// The T-Pipe issue preference between two tasks on one stage.
///
/// Backward before forward. Among backwards the deeper chunk goes first,
/// then the lower micro-batch. Among forwards the lower micro-batch goes
/// first, then the lower chunk. A recompute ranks with its backward but
/// just ahead of it.
pub fn tpipe_cmp(a: &TaskId, b: &TaskId) -> Ordering {
    tpipe_key(a).cmp(&tpipe_key(b))
}

fn tpipe_key(t: &TaskId) -> (u8, i64, i64, u8) {
    match t.kind {
        TaskKind::Backward => (0, -i64::from(t.chunk), i64::from(t.microbatch), 1),
        TaskKind::Recompute => (0, -i64::from(t.chunk), i64::from(t.microbatch), 0),
        TaskKind::Forward => (1, i64::from(t.microbatch), i64::from(t.chunk), 0),
        _ => (2, i64::from(t.microbatch), i64::from(t.chunk), t.kind as u8),
    }
}
