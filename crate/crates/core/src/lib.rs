//! Deterministic pipeline-parallel schedule simulator.
//!
//! Builds task graphs for 1F1B, Interleave-1F1B and T-Pipe, transforms them
//! with recomputation, executes them with exact rational time, profiles
//! memory, plans optimizer-state offload and evaluates closed-form
//! predictions for cross-checking.

pub mod analytic;
pub mod config;
pub mod error;
pub mod graph;
pub mod offload;
pub mod rational;
pub mod recomp;
pub mod sched;
pub mod sim;
pub mod task;

pub use analytic::AnalyticReport;
pub use config::{
    derived_units, load_config, ConfigError, Grouping, OffloadPolicy, PipelineConfig,
    RecomputeMode, RecomputePolicy,
};
pub use error::DomainError;
pub use graph::{validate_graph, Conflict, ConflictKind, ConflictReport, Pattern, TaskGraph};
pub use offload::{plan_offload, OffloadPlan};
pub use rational::Q;
pub use recomp::{
    apply_standard_recompute, apply_trecomp, build_pipeline, delay_rounds, BuildError, RecompError,
    RecompPlan,
};
pub use sched::{build_schedule, tpipe_priority, SchedError, StrategyKind};
pub use sim::{
    measure_intervals, mfu_proxy, simulate, DeadlockError, MemoryTimeline, SimOutput, SimReport,
    Timeline,
};
pub use task::{Task, TaskId, TaskKind};
