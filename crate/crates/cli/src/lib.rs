//! Command implementations behind the `pipesim` binary.

pub mod compare;
pub mod error;
pub mod fsio;
pub mod model;
pub mod render;
pub mod report;
pub mod sweep;

use std::path::Path;

use pipesim::{load_config, AnalyticReport, PipelineConfig, StrategyKind, Timeline};

pub use error::CliError;
use fsio::write_atomic;

fn strategy_for(cfg: &PipelineConfig, strategy: Option<StrategyKind>) -> StrategyKind {
    strategy.unwrap_or_else(|| report::default_strategy(cfg))
}

/// Writes text to `out`, or returns it for printing when `out` is absent.
fn emit(text: String, out: Option<&Path>) -> Result<Option<String>, CliError> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

/// Simulates a config and writes `report.json`, `timeline.json` and
/// `memory.csv` into `out_dir`.
pub fn cmd_simulate(
    config: &Path,
    strategy: Option<StrategyKind>,
    out_dir: &Path,
) -> Result<report::Run, CliError> {
    let cfg = load_config(config)?;
    let run = report::run(&cfg, strategy_for(&cfg, strategy))?;
    report::write_run(&run, out_dir)?;
    Ok(run)
}

/// Renders a timeline file.
pub fn cmd_render(
    timeline: &Path,
    format: render::Format,
    out: Option<&Path>,
) -> Result<Option<String>, CliError> {
    let text = std::fs::read_to_string(timeline)?;
    let tl: Timeline = serde_json::from_str(&text)?;
    emit(render::render(&tl, format)?, out)
}

/// Compares configs; returns the CSV table.
pub fn cmd_compare(
    entries: &[compare::Entry],
    capacity: Option<&compare::Capacity>,
    metric: Option<compare::Metric>,
    out: Option<&Path>,
) -> Result<Option<String>, CliError> {
    let rows = compare::compare(entries, capacity, metric)?;
    let csv = compare::rows_csv(&rows)?;
    emit(String::from_utf8_lossy(&csv).into_owned(), out)
}

/// Runs a sweep file; returns the CSV table unless written to a file.
pub fn cmd_sweep(
    spec: &Path,
    workers: usize,
    out: Option<&Path>,
) -> Result<Option<String>, CliError> {
    let text = std::fs::read_to_string(spec)?;
    let spec: sweep::SweepSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed sweep spec: {e}")))?;
    let rows = sweep::run_sweep(&spec, workers)?;
    let csv = String::from_utf8_lossy(&sweep::sweep_csv(&spec, &rows)?).into_owned();
    let target = out
        .map(Path::to_path_buf)
        .or_else(|| spec.out.as_ref().map(Into::into));
    emit(csv, target.as_deref())
}

/// Prints the closed-form report of a config as JSON or a text table.
pub fn cmd_analytic(
    config: &Path,
    strategy: Option<StrategyKind>,
    format: &str,
) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let r = AnalyticReport::for_config(&cfg, strategy_for(&cfg, strategy));
    match format {
        "json" => Ok(serde_json::to_string_pretty(&r)? + "\n"),
        "text" => Ok(report::analytic_text(&r)),
        other => Err(CliError::Usage(format!(
            "unknown format {other:?} (expected json or text)"
        ))),
    }
}

/// Prints closed-form offload feasibility and the measured placement.
pub fn cmd_offload_feasibility(
    config: &Path,
    strategy: Option<StrategyKind>,
) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let run = report::run(&cfg, strategy_for(&cfg, strategy))?;
    Ok(report::offload_feasibility_text(&cfg, &run))
}

/// Dumps the task graph of a config as JSON.
pub fn cmd_sched_dump(
    config: &Path,
    strategy: Option<StrategyKind>,
    out: Option<&Path>,
) -> Result<Option<String>, CliError> {
    let cfg = load_config(config)?;
    let (g, _) = pipesim::build_pipeline(&cfg, strategy_for(&cfg, strategy))?;
    emit(serde_json::to_string_pretty(&g)? + "\n", out)
}
