//! Parameter sweeps over config fields, run concurrently.

use std::collections::BTreeMap;

use pipesim::{PipelineConfig, StrategyKind};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;
use crate::report::{default_strategy, run, Metrics};

pub const DEFAULT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    #[default]
    Cross,
    Zip,
}

/// A sweep description.
///
/// `vary` maps a config field (dotted for nested fields, e.g.
/// `recompute.ratio`, or `strategy`) to the values it takes.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: Value,
    #[serde(default)]
    pub strategy: Option<String>,
    pub vary: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub mode: SweepMode,
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default)]
    pub out: Option<String>,
}

/// One point of the sweep: the assigned values in `vary` key order.
pub type Point = Vec<(String, Value)>;

impl SweepSpec {
    /// Expands the sweep into points, enforcing nonempty lists and the cap.
    pub fn points(&self) -> Result<Vec<Point>, CliError> {
        if self.vary.is_empty() {
            return Err(CliError::Usage(
                "sweep needs at least one varied field".into(),
            ));
        }
        if let Some((k, _)) = self.vary.iter().find(|(_, v)| v.is_empty()) {
            return Err(CliError::Usage(format!("sweep field `{k}` has no values")));
        }
        let cap = self.cap.unwrap_or(DEFAULT_CAP);
        let count = match self.mode {
            SweepMode::Cross => self
                .vary
                .values()
                .try_fold(1usize, |acc, v| acc.checked_mul(v.len()))
                .unwrap_or(usize::MAX),
            SweepMode::Zip => {
                let n = self.vary.values().next().map(Vec::len).unwrap_or(0);
                if self.vary.values().any(|v| v.len() != n) {
                    return Err(CliError::Usage(
                        "zip sweep needs equally long value lists".into(),
                    ));
                }
                n
            }
        };
        if count > cap {
            return Err(CliError::Usage(format!(
                "sweep has {count} runs, above the cap of {cap}"
            )));
        }
        let keys: Vec<&String> = self.vary.keys().collect();
        let mut out = Vec::with_capacity(count);
        match self.mode {
            SweepMode::Zip => {
                for k in 0..count {
                    out.push(
                        keys.iter()
                            .map(|f| ((*f).clone(), self.vary[*f][k].clone()))
                            .collect(),
                    );
                }
            }
            SweepMode::Cross => {
                let mut idx = vec![0usize; keys.len()];
                for _ in 0..count {
                    out.push(
                        keys.iter()
                            .zip(&idx)
                            .map(|(f, &i)| ((*f).clone(), self.vary[*f][i].clone()))
                            .collect(),
                    );
                    for d in (0..keys.len()).rev() {
                        idx[d] += 1;
                        if idx[d] < self.vary[keys[d]].len() {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn set_path(doc: &mut Value, path: &str, val: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("sweep path `{path}` crosses a non-object")))?;
        if n + 1 == parts.len() {
            obj.insert((*part).to_string(), val);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Outcome of one sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: Point,
    pub strategy: Option<StrategyKind>,
    pub result: Result<Metrics, String>,
}

fn run_point(spec: &SweepSpec, point: &Point) -> SweepRow {
    let mut strategy_name = spec.strategy.clone();
    let mut doc = spec.base.clone();
    let mut err = None;
    for (k, v) in point {
        if k == "strategy" {
            strategy_name = v.as_str().map(str::to_string);
        } else if let Err(e) = set_path(&mut doc, k, v.clone()) {
            err = Some(e.to_string());
        }
    }
    let outcome = (|| -> Result<(StrategyKind, Metrics), String> {
        if let Some(e) = err {
            return Err(e);
        }
        let cfg = PipelineConfig::from_json(&doc.to_string()).map_err(|e| e.to_string())?;
        let strategy = match &strategy_name {
            Some(s) => s
                .parse()
                .map_err(|e: pipesim::sched::UnknownStrategy| e.to_string())?,
            None => default_strategy(&cfg),
        };
        let r = run(&cfg, strategy).map_err(|e| e.to_string())?;
        Ok((strategy, Metrics::of(&cfg, &r.report)))
    })();
    match outcome {
        Ok((s, m)) => SweepRow {
            point: point.clone(),
            strategy: Some(s),
            result: Ok(m),
        },
        Err(e) => SweepRow {
            point: point.clone(),
            strategy: None,
            result: Err(e),
        },
    }
}

/// Runs every point on a pool of `workers` threads; rows keep point order.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>, CliError> {
    let points = spec.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(pool.install(|| points.par_iter().map(|pt| run_point(spec, pt)).collect()))
}

/// CSV with one column per varied field followed by the metrics.
pub fn sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = spec.vary.keys().cloned().collect();
    header.extend(
        [
            "strategy",
            "total_time",
            "total_time_units",
            "bubble_ratio",
            "mfu_proxy",
            "peak_stage0",
            "peak_max",
            "model_state_on_device",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r
            .point
            .iter()
            .map(|(_, v)| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        rec.push(r.strategy.map(|s| s.to_string()).unwrap_or_default());
        match &r.result {
            Ok(m) => {
                for q in [
                    m.total_time,
                    m.total_time_units,
                    m.bubble_ratio,
                    m.mfu_proxy,
                    m.peak_stage0,
                    m.peak_max,
                    m.model_state_on_device,
                ] {
                    rec.push(q.to_string());
                }
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Other(format!("csv flush failed: {e}")))
}
