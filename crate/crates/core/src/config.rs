//! Pipeline configuration: JSON ingestion, validation and derived units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rational::Q;

/// Errors raised while loading or validating a configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// The offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Recomputation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecomputeMode {
    None,
    StandardLayerGrouped,
    BlockWiseTemporal,
}

/// How shallow-first recomputation is attached to the backward pass.
///
/// `Block` issues a standalone recompute task with no cross-stage edges.
/// `Layer` fuses recomputation into the backward task, which then waits for
/// the upstream gradient before regenerating anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Block,
    Layer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecomputePolicy {
    pub mode: RecomputeMode,
    pub ratio: Q,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_rounds_override: Option<u32>,
    #[serde(default)]
    pub grouping: Grouping,
}

impl RecomputePolicy {
    /// Number of chunks fully recomputed under shallow-first selection:
    /// `ratio * v` rounded to nearest, ties toward more recomputation.
    pub fn selected_chunk_count(&self, v: u32) -> u32 {
        let x = self.ratio * i64::from(v) + Q::new(1, 2);
        x.floor().clamp(0, i64::from(v)) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadPolicy {
    pub t_step: Q,
    pub t_upload: Q,
    pub chunks_offloaded: Vec<u32>,
}

/// A validated pipeline configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub p: u32,
    pub m: u32,
    pub v: u32,
    pub bwd_fwd_ratio: Q,
    pub t_fwd: Q,
    pub m_a: Q,
    pub p2p_latency: Q,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recompute: Option<RecomputePolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offload: Option<OffloadPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecompute {
    mode: RecomputeMode,
    #[serde(default)]
    ratio: Option<Q>,
    #[serde(default)]
    delay_rounds_override: Option<i64>,
    #[serde(default)]
    grouping: Option<Grouping>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOffload {
    #[serde(default)]
    t_step: Option<Q>,
    #[serde(default)]
    t_upload: Option<Q>,
    #[serde(default)]
    chunks_offloaded: Option<Vec<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    p: i64,
    m: i64,
    #[serde(default)]
    v: Option<i64>,
    #[serde(default)]
    bwd_fwd_ratio: Option<Q>,
    #[serde(default)]
    t_fwd: Option<Q>,
    #[serde(default)]
    m_a: Option<Q>,
    #[serde(default)]
    p2p_latency: Option<Q>,
    #[serde(default)]
    recompute: Option<RawRecompute>,
    #[serde(default)]
    offload: Option<RawOffload>,
}

fn positive_int(field: &str, x: i64) -> Result<u32, ConfigError> {
    if x < 1 {
        return Err(ConfigError::invalid(
            field,
            format!("must be >= 1, got {x}"),
        ));
    }
    u32::try_from(x).map_err(|_| ConfigError::invalid(field, "too large"))
}

impl PipelineConfig {
    /// A config with defaults: ratio 2, `t_fwd = v*p` (so one time unit per
    /// forward block), `m_a = 1`, no latency, no recompute and no offload.
    pub fn new(p: u32, m: u32, v: u32) -> PipelineConfig {
        PipelineConfig {
            p,
            m,
            v,
            bwd_fwd_ratio: Q::int(2),
            t_fwd: Q::int(i64::from(v) * i64::from(p)),
            m_a: Q::ONE,
            p2p_latency: Q::ZERO,
            recompute: None,
            offload: None,
        }
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<PipelineConfig, ConfigError> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg = PipelineConfig::from_raw(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_raw(raw: RawConfig) -> Result<PipelineConfig, ConfigError> {
        let p = positive_int("p", raw.p)?;
        let m = positive_int("m", raw.m)?;
        let v = positive_int("v", raw.v.unwrap_or(1))?;
        let mut cfg = PipelineConfig::new(p, m, v);
        if let Some(r) = raw.bwd_fwd_ratio {
            cfg.bwd_fwd_ratio = r;
        }
        if let Some(t) = raw.t_fwd {
            cfg.t_fwd = t;
        }
        if let Some(x) = raw.m_a {
            cfg.m_a = x;
        }
        if let Some(l) = raw.p2p_latency {
            cfg.p2p_latency = l;
        }
        if let Some(r) = raw.recompute {
            let k = match r.delay_rounds_override {
                Some(k) if k < 0 => {
                    return Err(ConfigError::invalid(
                        "recompute.delay_rounds_override",
                        "must be nonnegative",
                    ))
                }
                Some(k) => Some(u32::try_from(k).map_err(|_| {
                    ConfigError::invalid("recompute.delay_rounds_override", "too large")
                })?),
                None => None,
            };
            let ratio = match (r.mode, r.ratio) {
                (_, Some(x)) => x,
                (RecomputeMode::None, None) => Q::ZERO,
                (_, None) => return Err(ConfigError::invalid("recompute.ratio", "missing")),
            };
            cfg.recompute = Some(RecomputePolicy {
                mode: r.mode,
                ratio,
                delay_rounds_override: k,
                grouping: r.grouping.unwrap_or_default(),
            });
        }
        if let Some(o) = raw.offload {
            let chunks = match o.chunks_offloaded {
                Some(cs) => cs
                    .into_iter()
                    .map(|c| {
                        u32::try_from(c).map_err(|_| {
                            ConfigError::invalid("offload.chunks_offloaded", "negative chunk")
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![v],
            };
            cfg.offload = Some(OffloadPolicy {
                t_step: o.t_step.unwrap_or(Q::ZERO),
                t_upload: o.t_upload.unwrap_or(Q::ZERO),
                chunks_offloaded: chunks,
            });
        }
        Ok(cfg)
    }

    /// Checks every invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p < 1 {
            return Err(ConfigError::invalid("p", "must be >= 1"));
        }
        if self.m < 1 {
            return Err(ConfigError::invalid("m", "must be >= 1"));
        }
        if self.v < 1 {
            return Err(ConfigError::invalid("v", "must be >= 1"));
        }
        if self.bwd_fwd_ratio <= Q::ZERO {
            return Err(ConfigError::invalid("bwd_fwd_ratio", "must be > 0"));
        }
        if self.t_fwd <= Q::ZERO {
            return Err(ConfigError::invalid("t_fwd", "must be > 0"));
        }
        if self.m_a <= Q::ZERO {
            return Err(ConfigError::invalid("m_a", "must be > 0"));
        }
        if self.p2p_latency < Q::ZERO {
            return Err(ConfigError::invalid("p2p_latency", "must be >= 0"));
        }
        if let Some(r) = &self.recompute {
            if r.ratio < Q::ZERO || r.ratio > Q::ONE {
                return Err(ConfigError::invalid(
                    "recompute.ratio",
                    "must lie in [0, 1]",
                ));
            }
            if r.mode == RecomputeMode::BlockWiseTemporal && self.v < 2 {
                return Err(ConfigError::invalid(
                    "recompute.mode",
                    "BlockWiseTemporal needs at least two chunks per stage",
                ));
            }
        }
        if let Some(o) = &self.offload {
            if o.t_step < Q::ZERO {
                return Err(ConfigError::invalid("offload.t_step", "must be >= 0"));
            }
            if o.t_upload < Q::ZERO {
                return Err(ConfigError::invalid("offload.t_upload", "must be >= 0"));
            }
            if let Some(c) = o.chunks_offloaded.iter().find(|&&c| c < 1 || c > self.v) {
                return Err(ConfigError::invalid(
                    "offload.chunks_offloaded",
                    format!("chunk {c} outside 1..={}", self.v),
                ));
            }
        }
        Ok(())
    }

    /// Serializes to the same JSON schema accepted by [`load_config`].
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `T_unit = t_fwd / (v*p)`: duration of one forward block.
    pub fn t_unit(&self) -> Q {
        self.t_fwd / (i64::from(self.v) * i64::from(self.p))
    }

    /// `m_a / (v*p)`: activation memory of one block.
    pub fn act_block(&self) -> Q {
        self.m_a / (i64::from(self.v) * i64::from(self.p))
    }

    /// Backward duration of one block.
    pub fn b_block(&self) -> Q {
        self.t_unit() * self.bwd_fwd_ratio
    }

    /// Whole-network backward time.
    pub fn t_bwd(&self) -> Q {
        self.t_fwd * self.bwd_fwd_ratio
    }

    pub fn recompute_mode(&self) -> RecomputeMode {
        self.recompute
            .as_ref()
            .map(|r| r.mode)
            .unwrap_or(RecomputeMode::None)
    }
}

/// Reads, parses and validates a JSON config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PipelineConfig::from_json(&text)
}

/// Returns `(t_unit, act_block)`.
pub fn derived_units(cfg: &PipelineConfig) -> (Q, Q) {
    (cfg.t_unit(), cfg.act_block())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_applied() {
        let cfg = PipelineConfig::from_json(r#"{"p":8,"m":8,"v":2}"#).unwrap();
        assert_eq!(cfg.bwd_fwd_ratio, Q::int(2));
        assert_eq!(cfg.t_unit(), cfg.t_fwd / 16);
        assert_eq!(cfg.t_unit(), Q::ONE);
        assert_eq!(cfg.p2p_latency, Q::ZERO);
    }

    #[test]
    fn zero_stage_count_names_field() {
        let err = PipelineConfig::from_json(r#"{"p":0,"m":8,"v":2}"#).unwrap_err();
        assert_eq!(err.field(), Some("p"));
    }

    #[test]
    fn shallow_first_selection_of_half_ratio_is_one_chunk() {
        let cfg = PipelineConfig::from_json(
            r#"{"p":8,"m":8,"v":2,"recompute":{"mode":"BlockWiseTemporal","ratio":"1/2"}}"#,
        )
        .unwrap();
        let r = cfg.recompute.unwrap();
        assert_eq!(r.selected_chunk_count(2), 1);
        assert_eq!(r.grouping, Grouping::Block);
    }

    #[test]
    fn selection_rounds_ties_up() {
        let pol = |ratio| RecomputePolicy {
            mode: RecomputeMode::BlockWiseTemporal,
            ratio,
            delay_rounds_override: None,
            grouping: Grouping::Block,
        };
        assert_eq!(pol(Q::new(1, 4)).selected_chunk_count(2), 1);
        assert_eq!(pol(Q::new(1, 5)).selected_chunk_count(2), 0);
        assert_eq!(pol(Q::new(1, 6)).selected_chunk_count(3), 1);
        assert_eq!(pol(Q::ONE).selected_chunk_count(4), 4);
    }

    #[test]
    fn blockwise_needs_two_chunks() {
        let err = PipelineConfig::from_json(
            r#"{"p":4,"m":4,"v":1,"recompute":{"mode":"BlockWiseTemporal","ratio":1}}"#,
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("recompute.mode"));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            PipelineConfig::from_json("{p:"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"p":2,"m":2,"bogus":1}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn offload_defaults_to_deepest_chunk() {
        let cfg =
            PipelineConfig::from_json(r#"{"p":4,"m":4,"v":3,"offload":{"t_step":"5/2"}}"#).unwrap();
        let o = cfg.offload.unwrap();
        assert_eq!(o.chunks_offloaded, vec![3]);
        assert_eq!(o.t_step, Q::new(5, 2));
        assert_eq!(o.t_upload, Q::ZERO);
    }

    #[test]
    fn derived_units_examples() {
        let mut c = PipelineConfig::new(8, 8, 2);
        c.t_fwd = Q::int(16);
        assert_eq!(derived_units(&c), (Q::ONE, Q::new(1, 16)));
        let mut c = PipelineConfig::new(1, 1, 1);
        c.t_fwd = Q::ONE;
        assert_eq!(derived_units(&c), (Q::ONE, Q::ONE));
        let mut c = PipelineConfig::new(4, 1, 2);
        c.t_fwd = Q::int(8);
        assert_eq!(derived_units(&c), (Q::ONE, Q::new(1, 8)));
    }
}
