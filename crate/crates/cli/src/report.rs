//! One simulation run with its analytic cross-checks and output artifacts.

use std::path::Path;

use pipesim::analytic::AnalyticReport;
use pipesim::offload::{measured_offload_idle, measured_upload_idle};
use pipesim::sim::model_state_on_device;
use pipesim::{
    build_pipeline, mfu_proxy, plan_offload, simulate, MemoryTimeline, OffloadPlan, PipelineConfig,
    RecompPlan, RecomputeMode, SimReport, StrategyKind, Timeline, Q,
};
use serde::Serialize;

use crate::error::CliError;
use crate::fsio::write_atomic;

/// Agreement between a closed form and the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub quantity: String,
    pub analytic: Q,
    pub simulated: Q,
    /// `"match"` or `"divergence"`.
    pub status: &'static str,
}

impl Check {
    fn new(quantity: &str, analytic: Q, simulated: Q) -> Check {
        Check {
            quantity: quantity.to_string(),
            analytic,
            simulated,
            status: if analytic == simulated {
                "match"
            } else {
                "divergence"
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub strategy: StrategyKind,
    pub sim: SimReport,
    pub mfu_proxy: Q,
    pub analytic: AnalyticReport,
    pub recompute: Option<RecompPlan>,
    pub offload: Option<OffloadPlan>,
    pub checks: Vec<Check>,
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: RunReport,
    pub timeline: Timeline,
    pub memory: MemoryTimeline,
}

/// The default strategy for a chunk count.
pub fn default_strategy(cfg: &PipelineConfig) -> StrategyKind {
    if cfg.v >= 2 {
        StrategyKind::TPipe
    } else {
        StrategyKind::OneFOneB
    }
}

/// Builds, validates and simulates one configuration.
pub fn run(cfg: &PipelineConfig, strategy: StrategyKind) -> Result<Run, CliError> {
    let (graph, recompute) = build_pipeline(cfg, strategy)?;
    let report = pipesim::validate_graph(&graph);
    if !report.is_empty() {
        let first = &report.conflicts[0];
        return Err(CliError::Conflict(format!(
            "dependency conflict: {} violated edge(s), first {} -> {} at stage {}",
            report.len(),
            first.pred,
            first.succ,
            first.stage
        )));
    }
    let out = simulate(&graph, cfg)?;
    let analytic = AnalyticReport::for_config(cfg, strategy);
    let offload = cfg
        .offload
        .as_ref()
        .map(|_| plan_offload(cfg, &out.timeline));
    let checks = checks(cfg, strategy, &out.report, &out.timeline, &analytic);
    Ok(Run {
        report: RunReport {
            config: cfg.clone(),
            strategy,
            mfu_proxy: mfu_proxy(&out.report),
            sim: out.report,
            analytic,
            recompute,
            offload,
            checks,
        },
        timeline: out.timeline,
        memory: out.memory,
    })
}

fn checks(
    cfg: &PipelineConfig,
    strategy: StrategyKind,
    sim: &SimReport,
    tl: &Timeline,
    an: &AnalyticReport,
) -> Vec<Check> {
    let mut out = Vec::new();
    let s0 = &sim.peaks[0];
    let units_regime = cfg.bwd_fwd_ratio == Q::int(2) && cfg.p2p_latency.is_zero();
    if an.exact_regime {
        if let Some(t) = &an.tpipe_time {
            out.push(Check::new(
                "total_time_units",
                t.total,
                sim.total_time_units,
            ));
            out.push(Check::new("bubble_ratio", t.bubble_ratio, sim.bubble_ratio));
        }
        if let Some(pk) = &an.tpipe_peaks {
            out.push(Check::new(
                "stage0_chunk1_blocks",
                Q::int(pk.chunk1_blocks),
                s0.chunk_blocks[0],
            ));
            out.push(Check::new(
                "stage0_chunk2_blocks",
                Q::int(pk.chunk2_blocks),
                s0.chunk_blocks[1],
            ));
        }
        if let (Some(f), Some(b), Some(iv)) =
            (an.fwd_interval, an.bwd_interval, sim.intervals_units)
        {
            out.push(Check::new("fwd_interval_units", Q::int(f), iv.fwd_interval));
            out.push(Check::new("bwd_interval_units", Q::int(b), iv.bwd_interval));
        }
        if let Some(tr) = &an.trecomp {
            let one_chunk = cfg
                .recompute
                .as_ref()
                .is_some_and(|r| r.selected_chunk_count(cfg.v) == 1);
            if one_chunk {
                out.push(Check::new(
                    "trecomp_total_time_units",
                    tr.total_time,
                    sim.total_time_units,
                ));
                out.push(Check::new(
                    "trecomp_stage0_blocks_with_buffer",
                    Q::int(tr.blocks_with_buffer),
                    s0.activation_plus_buffer_blocks,
                ));
            }
        }
        if cfg.offload.is_some() && cfg.v == 2 {
            if let (Ok(a), Some(m)) = (
                pipesim::offload::available_offload_time(cfg.p, cfg.t_bwd()),
                measured_offload_idle(tl, 0, 2),
            ) {
                out.push(Check::new("stage0_offload_idle", a, m));
            }
            if let (Ok(a), Some(m)) = (
                pipesim::offload::available_upload_time(cfg.p, cfg.t_fwd),
                measured_upload_idle(tl, 0, 2),
            ) {
                out.push(Check::new("stage0_upload_idle", a, m));
            }
        }
    }
    if strategy != StrategyKind::TPipe
        && cfg.recompute_mode() == RecomputeMode::None
        && cfg.m >= cfg.p
        && units_regime
    {
        if let Some(b) = an.baseline_stage0_peak {
            out.push(Check::new(
                "stage0_peak_activation",
                b * cfg.m_a,
                s0.activation,
            ));
        }
    }
    out
}

/// Headline metrics of a run, shared by `compare` and `sweep`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Metrics {
    /// Iteration time in the config's own time scale.
    pub total_time: Q,
    pub total_time_units: Q,
    pub bubble_ratio: Q,
    pub mfu_proxy: Q,
    /// Stage-0 activation plus buffer, in `m_a`.
    pub peak_stage0: Q,
    /// Largest activation plus buffer over all stages, in `m_a`.
    pub peak_max: Q,
    pub model_state_on_device: Q,
}

impl Metrics {
    pub fn of(cfg: &PipelineConfig, r: &RunReport) -> Metrics {
        Metrics {
            total_time: r.sim.total_time,
            total_time_units: r.sim.total_time_units,
            bubble_ratio: r.sim.bubble_ratio,
            mfu_proxy: r.mfu_proxy,
            peak_stage0: r.sim.peaks[0].activation_plus_buffer,
            peak_max: r
                .sim
                .peaks
                .iter()
                .map(|p| p.activation_plus_buffer)
                .max()
                .unwrap_or(Q::ZERO),
            model_state_on_device: model_state_on_device(cfg),
        }
    }
}

/// Writes `report.json`, `timeline.json` and `memory.csv` into `dir`.
pub fn write_run(run: &Run, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut report = serde_json::to_vec_pretty(&run.report)?;
    report.push(b'\n');
    write_atomic(&dir.join("report.json"), &report)?;
    let mut tl = serde_json::to_vec_pretty(&run.timeline)?;
    tl.push(b'\n');
    write_atomic(&dir.join("timeline.json"), &tl)?;
    write_atomic(&dir.join("memory.csv"), &memory_csv(&run.memory)?)?;
    Ok(())
}

/// Memory timeline as CSV with columns `time,stage,category,value`.
pub fn memory_csv(mem: &MemoryTimeline) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "stage", "category", "value"])?;
    for (t, s, cat, v) in mem.rows() {
        w.write_record([t.to_string(), s.to_string(), cat.to_string(), v.to_string()])?;
    }
    w.into_inner()
        .map_err(|e| CliError::Other(format!("csv flush failed: {e}")))
}

/// Text table of the analytic report.
pub fn analytic_text(r: &AnalyticReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("strategy".into(), r.strategy.to_string()),
        ("p / m / v".into(), format!("{} / {} / {}", r.p, r.m, r.v)),
        ("exact_regime".into(), r.exact_regime.to_string()),
    ];
    if let Some(t) = &r.tpipe_time {
        rows.push(("total_time_units".into(), t.total.to_string()));
        rows.push((
            "warmup / steady / cooldown".into(),
            format!("{} / {} / {}", t.warmup, t.steady, t.cooldown),
        ));
        rows.push(("bubble_ratio".into(), t.bubble_ratio.to_string()));
    }
    if let Some(pk) = &r.tpipe_peaks {
        rows.push((
            "chunk1 / chunk2 blocks".into(),
            format!("{} / {}", pk.chunk1_blocks, pk.chunk2_blocks),
        ));
        rows.push(("peak_fraction".into(), pk.total_fraction.to_string()));
    }
    if let (Some(f), Some(b)) = (r.fwd_interval, r.bwd_interval) {
        rows.push(("fwd / bwd interval".into(), format!("{f} / {b}")));
    }
    if let Some(k) = r.delay_rounds {
        rows.push(("delay_rounds".into(), k.to_string()));
    }
    if let Some(t) = &r.trecomp {
        rows.push(("trecomp life_chunk2".into(), t.life_chunk2.to_string()));
        rows.push((
            "trecomp blocks (+buffer)".into(),
            t.blocks_with_buffer.to_string(),
        ));
        rows.push((
            "trecomp storage_fraction".into(),
            t.storage_fraction.to_string(),
        ));
        rows.push(("trecomp total_time_units".into(), t.total_time.to_string()));
    }
    if let Some(b) = r.baseline_stage0_peak {
        rows.push(("stage0 peak fraction".into(), b.to_string()));
    }
    if let Some(o) = &r.offload {
        rows.push((
            "offload available / required".into(),
            format!("{} / {}", o.available_offload, o.required_offload),
        ));
        rows.push((
            "upload available / required".into(),
            format!("{} / {}", o.available_upload, o.required_upload),
        ));
        rows.push((
            "feasible offload / upload".into(),
            format!("{} / {}", o.feasible_offload, o.feasible_upload),
        ));
    }
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<w$}  {v}\n"))
        .collect()
}

/// Closed-form feasibility alongside the planner's measured windows.
pub fn offload_feasibility_text(cfg: &PipelineConfig, run: &Run) -> String {
    let mut s = String::new();
    let p = cfg.p;
    let two_p = 2 * i64::from(p);
    let (t_step, t_upload) = cfg
        .offload
        .as_ref()
        .map(|o| (o.t_step, o.t_upload))
        .unwrap_or((Q::ZERO, Q::ZERO));
    s.push_str(&format!(
        "p = {p}, t_fwd = {}, t_bwd = {}\n",
        cfg.t_fwd,
        cfg.t_bwd()
    ));
    s.push_str(&format!("t_step = {t_step}, t_upload = {t_upload}\n"));
    match (
        pipesim::offload::offload_conditions(p, t_step, t_upload, cfg.t_fwd, cfg.t_bwd()),
        pipesim::offload::available_offload_time(p, cfg.t_bwd()),
        pipesim::offload::available_upload_time(p, cfg.t_fwd),
    ) {
        (Ok((fo, fu)), Ok(ao), Ok(au)) => {
            s.push_str(&format!(
                "offload: required {} <= available {} : {}\n",
                t_step / two_p,
                ao,
                if fo { "feasible" } else { "infeasible" }
            ));
            s.push_str(&format!(
                "upload:  required {} <= available {} : {}\n",
                t_upload / two_p,
                au,
                if fu { "feasible" } else { "infeasible" }
            ));
        }
        _ => s.push_str("closed-form windows need p >= 2\n"),
    }
    if let Some(plan) = &run.report.offload {
        for c in &plan.per_chunk {
            s.push_str(&format!(
                "chunk {}: binding stage {}, offload available {} required {}, upload available {} required {}, overlap {}\n",
                c.chunk,
                c.binding_stage,
                c.offload_available,
                c.offload_required,
                c.upload_available,
                c.upload_required,
                c.achieved_overlap
            ));
        }
        s.push_str(&format!(
            "model_state_saving = {}, hardware_agnostic = {}\n",
            plan.model_state_saving, plan.hardware_agnostic
        ));
        for n in &plan.notes {
            s.push_str(&format!("note: {n}\n"));
        }
    }
    s
}
