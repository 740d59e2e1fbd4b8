//! `pipesim` command-line entry point.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipesim::{StrategyKind, Q};
use pipesim_cli::compare::{pair_entries, Capacity, Metric};
use pipesim_cli::model::ModelSpec;
use pipesim_cli::render::Format;
use pipesim_cli::{
    cmd_analytic, cmd_compare, cmd_offload_feasibility, cmd_render, cmd_sched_dump, cmd_simulate,
    cmd_sweep, CliError,
};

/// Deterministic pipeline-parallel schedule simulator.
///
/// Runs are fully deterministic; TPIPE_SIM_SEEDLESS=1 is accepted and has no
/// further effect.
#[derive(Parser)]
#[command(name = "pipesim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a config and write report.json, timeline.json and memory.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a timeline.json as an SVG or text Gantt chart.
    Render {
        timeline: PathBuf,
        #[arg(long, default_value = "svg")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare configs; --strategy pairs with --config by position.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long = "strategy")]
        strategies: Vec<StrategyKind>,
        /// Sort rows by peak_mem, bubble, total_time or mfu_proxy.
        #[arg(long)]
        metric: Option<String>,
        /// Model description for the max-layers column.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Per-device memory budget in GB (10^9 bytes).
        #[arg(long)]
        budget_gb: Option<Q>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep file concurrently.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the closed-form report of a config.
    Analytic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Offload planning.
    Offload {
        #[command(subcommand)]
        cmd: OffloadCmd,
    },
    /// Schedule inspection.
    Sched {
        #[command(subcommand)]
        cmd: SchedCmd,
    },
}

#[derive(Subcommand)]
enum OffloadCmd {
    /// Print closed-form feasibility next to the measured placement.
    Feasibility {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
}

#[derive(Subcommand)]
enum SchedCmd {
    /// Dump the task graph as JSON.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes to stdout, ignoring a closed pipe.
fn print(out: Option<String>) {
    if let Some(s) = out {
        let _ = std::io::stdout().write_all(s.as_bytes());
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            strategy,
            out,
        } => {
            let run = cmd_simulate(&config, strategy, &out)?;
            print(Some(format!(
                "{} total_time={} T_unit bubble_ratio={} -> {}\n",
                run.report.strategy,
                run.report.sim.total_time_units,
                run.report.sim.bubble_ratio,
                out.display()
            )));
        }
        Cmd::Render {
            timeline,
            format,
            out,
        } => {
            print(cmd_render(
                &timeline,
                format.parse::<Format>()?,
                out.as_deref(),
            )?);
        }
        Cmd::Compare {
            configs,
            strategies,
            metric,
            model,
            budget_gb,
            out,
        } => {
            let entries = pair_entries(&configs, &strategies)?;
            let capacity = match (model, budget_gb) {
                (Some(m), Some(gb)) => Some(Capacity {
                    model: ModelSpec::load(&m)?,
                    budget_bytes: gb * 1_000_000_000,
                }),
                (None, None) => None,
                _ => {
                    return Err(CliError::Usage(
                        "--model and --budget-gb go together".into(),
                    ))
                }
            };
            let metric = metric.map(|m| m.parse::<Metric>()).transpose()?;
            print(cmd_compare(
                &entries,
                capacity.as_ref(),
                metric,
                out.as_deref(),
            )?);
        }
        Cmd::Sweep { spec, workers, out } => print(cmd_sweep(&spec, workers, out.as_deref())?),
        Cmd::Analytic {
            config,
            strategy,
            format,
        } => print(Some(cmd_analytic(&config, strategy, &format)?)),
        Cmd::Offload {
            cmd: OffloadCmd::Feasibility { config, strategy },
        } => print(Some(cmd_offload_feasibility(&config, strategy)?)),
        Cmd::Sched {
            cmd:
                SchedCmd::Dump {
                    config,
                    strategy,
                    out,
                },
        } => print(cmd_sched_dump(&config, strategy, out.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
