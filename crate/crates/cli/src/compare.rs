//! Side-by-side metrics and memory-capacity comparison of several runs.

use std::path::{Path, PathBuf};

use pipesim::{load_config, PipelineConfig, StrategyKind, Q};
use serde::Serialize;

use crate::error::CliError;
use crate::model::ModelSpec;
use crate::report::{run, Metrics};

/// One configuration to compare.
#[derive(Debug, Clone)]
pub struct Entry {
    pub label: String,
    pub config: PipelineConfig,
    pub strategy: StrategyKind,
}

impl Entry {
    pub fn from_path(path: &Path, strategy: StrategyKind) -> Result<Entry, CliError> {
        let config = load_config(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "config".into());
        Ok(Entry {
            label: format!("{stem}:{strategy}"),
            config,
            strategy,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub label: String,
    pub strategy: StrategyKind,
    pub p: u32,
    pub m: u32,
    pub v: u32,
    pub recompute: String,
    pub offloaded_chunks: usize,
    pub metrics: Metrics,
    pub max_layers: Option<i64>,
}

/// Metric used to order rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    PeakMem,
    Bubble,
    TotalTime,
    MfuProxy,
}

impl std::str::FromStr for Metric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Metric, CliError> {
        match s {
            "peak_mem" => Ok(Metric::PeakMem),
            "bubble" => Ok(Metric::Bubble),
            "total_time" => Ok(Metric::TotalTime),
            "mfu_proxy" => Ok(Metric::MfuProxy),
            _ => Err(CliError::Usage(format!(
                "unknown metric {s:?} (expected peak_mem, bubble, total_time or mfu_proxy)"
            ))),
        }
    }
}

impl Metric {
    fn key(self, m: &Metrics) -> Q {
        match self {
            Metric::PeakMem => m.peak_max,
            Metric::Bubble => m.bubble_ratio,
            Metric::TotalTime => m.total_time,
            Metric::MfuProxy => m.mfu_proxy,
        }
    }
}

/// Memory budget for the capacity column.
#[derive(Debug, Clone)]
pub struct Capacity {
    pub model: ModelSpec,
    /// Per-device budget in bytes.
    pub budget_bytes: Q,
}

/// Largest layer count whose per-device memory fits the budget.
///
/// Per layer a device holds `state/p * on_device` of model states and
/// `act * peak` of activations, where `peak` is the simulated peak in units of
/// `m_a`. Both terms scale linearly in the layer count.
pub fn max_layers(cap: &Capacity, p: u32, metrics: &Metrics) -> i64 {
    let per_layer = cap.model.state_bytes_per_layer() / i64::from(p)
        * metrics.model_state_on_device
        + cap.model.act_bytes_per_layer() * metrics.peak_max;
    if per_layer <= Q::ZERO {
        return i64::MAX;
    }
    (cap.budget_bytes / per_layer).floor()
}

fn recompute_label(cfg: &PipelineConfig) -> String {
    match &cfg.recompute {
        None => "none".into(),
        Some(r) => format!("{:?}:{}:{:?}", r.mode, r.ratio, r.grouping),
    }
}

/// Runs every entry and returns one row each, in input order unless a
/// metric is given (then ascending by that metric, stable).
pub fn compare(
    entries: &[Entry],
    capacity: Option<&Capacity>,
    metric: Option<Metric>,
) -> Result<Vec<Row>, CliError> {
    if entries.len() < 2 {
        return Err(CliError::Usage("compare needs at least two configs".into()));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let r = run(&e.config, e.strategy)?;
        let metrics = Metrics::of(&e.config, &r.report);
        rows.push(Row {
            label: e.label.clone(),
            strategy: e.strategy,
            p: e.config.p,
            m: e.config.m,
            v: e.config.v,
            recompute: recompute_label(&e.config),
            offloaded_chunks: e
                .config
                .offload
                .as_ref()
                .map(|o| o.chunks_offloaded.len())
                .unwrap_or(0),
            max_layers: capacity.map(|c| max_layers(c, e.config.p, &metrics)),
            metrics,
        });
    }
    if let Some(m) = metric {
        rows.sort_by_key(|r| m.key(&r.metrics));
    }
    Ok(rows)
}

/// Fixed CSV layout of [`compare`] rows.
pub fn rows_csv(rows: &[Row]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "strategy",
        "p",
        "m",
        "v",
        "recompute",
        "offloaded_chunks",
        "total_time",
        "total_time_units",
        "bubble_ratio",
        "mfu_proxy",
        "peak_stage0",
        "peak_max",
        "model_state_on_device",
        "max_layers",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.strategy.to_string(),
            r.p.to_string(),
            r.m.to_string(),
            r.v.to_string(),
            r.recompute.clone(),
            r.offloaded_chunks.to_string(),
            r.metrics.total_time.to_string(),
            r.metrics.total_time_units.to_string(),
            r.metrics.bubble_ratio.to_string(),
            r.metrics.mfu_proxy.to_string(),
            r.metrics.peak_stage0.to_string(),
            r.metrics.peak_max.to_string(),
            r.metrics.model_state_on_device.to_string(),
            r.max_layers.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| CliError::Other(format!("csv flush failed: {e}")))
}

/// Pairs config paths with strategies; a single strategy applies to all.
pub fn pair_entries(
    configs: &[PathBuf],
    strategies: &[StrategyKind],
) -> Result<Vec<Entry>, CliError> {
    let strat = |k: usize, cfg: &PipelineConfig| match strategies.len() {
        0 => Ok(crate::report::default_strategy(cfg)),
        1 => Ok(strategies[0]),
        n if n == configs.len() => Ok(strategies[k]),
        _ => Err(CliError::Usage(
            "give one --strategy, or exactly one per --config".into(),
        )),
    };
    configs
        .iter()
        .enumerate()
        .map(|(k, path)| {
            let cfg = load_config(path)?;
            Entry::from_path(path, strat(k, &cfg)?)
        })
        .collect()
}
