//! Converts a model and host description into config scalars.
//!
//! The cost model is deliberately simple:
//! - parameters per layer are `12 * hidden^2`;
//! - activation bytes per micro-batch are
//!   `layers * seq_len * micro_batch * hidden * act_bytes_coeff`;
//! - model-state bytes are `params * state_bytes_per_param`;
//! - forward time is `2 * params * tokens / device_flops`;
//! - the offload step is `params * grad_bytes_per_param / host_bandwidth +
//!   params / host_throughput`;
//! - the upload is `params * upload_bytes_per_param / host_bandwidth`.

use std::path::Path;

use pipesim::Q;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: i64,
    pub hidden: i64,
    pub seq_len: i64,
    /// Sequences per micro-batch.
    pub micro_batch: i64,
    /// Tokens processed per training iteration.
    pub iteration_tokens: i64,
    /// Activation bytes per token, hidden unit and layer.
    pub act_bytes_coeff: i64,
    /// Weights, gradients and optimizer states per parameter.
    pub state_bytes_per_param: i64,
    pub grad_bytes_per_param: i64,
    pub upload_bytes_per_param: i64,
    /// Bytes per time unit over the host link.
    pub host_bandwidth: Q,
    /// Parameters updated per time unit by the host optimizer.
    pub host_throughput: Q,
    /// Device FLOPs per time unit.
    pub device_flops: Q,
}

/// Scalars derived from a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelScalars {
    pub params: i64,
    pub m_a_bytes: Q,
    pub model_state_bytes: Q,
    pub iteration_activation_bytes: Q,
    pub t_fwd: Q,
    pub t_step: Q,
    pub t_upload: Q,
    pub provenance: String,
}

impl ModelSpec {
    pub fn load(path: &Path) -> Result<ModelSpec, CliError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let ints = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("seq_len", self.seq_len),
            ("micro_batch", self.micro_batch),
            ("iteration_tokens", self.iteration_tokens),
            ("act_bytes_coeff", self.act_bytes_coeff),
            ("state_bytes_per_param", self.state_bytes_per_param),
            ("grad_bytes_per_param", self.grad_bytes_per_param),
            ("upload_bytes_per_param", self.upload_bytes_per_param),
        ];
        for (name, x) in ints {
            if x <= 0 {
                return Err(CliError::Usage(format!(
                    "model field `{name}` must be positive"
                )));
            }
        }
        for (name, x) in [
            ("host_bandwidth", self.host_bandwidth),
            ("host_throughput", self.host_throughput),
            ("device_flops", self.device_flops),
        ] {
            if x <= Q::ZERO {
                return Err(CliError::Usage(format!(
                    "model field `{name}` must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn params_per_layer(&self) -> i64 {
        12 * self.hidden * self.hidden
    }

    /// Activation bytes of one layer for one micro-batch.
    pub fn act_bytes_per_layer(&self) -> Q {
        Q::int(self.seq_len * self.micro_batch * self.hidden) * self.act_bytes_coeff
    }

    /// Model-state bytes of one layer.
    pub fn state_bytes_per_layer(&self) -> Q {
        Q::int(self.params_per_layer()) * self.state_bytes_per_param
    }
}

/// Derives `m_a`, a forward-time hint, `t_step` and `t_upload`.
pub fn model_to_config(spec: &ModelSpec) -> Result<ModelScalars, CliError> {
    spec.validate()?;
    let params = spec.params_per_layer() * spec.layers;
    let pq = Q::int(params);
    let tokens = spec.seq_len * spec.micro_batch;
    let m_a_bytes = spec.act_bytes_per_layer() * spec.layers;
    let iteration_activation_bytes =
        Q::int(spec.layers * spec.iteration_tokens * spec.hidden) * spec.act_bytes_coeff;
    Ok(ModelScalars {
        params,
        m_a_bytes,
        model_state_bytes: pq * spec.state_bytes_per_param,
        iteration_activation_bytes,
        t_fwd: pq * (2 * tokens) / spec.device_flops,
        t_step: pq * spec.grad_bytes_per_param / spec.host_bandwidth + pq / spec.host_throughput,
        t_upload: pq * spec.upload_bytes_per_param / spec.host_bandwidth,
        provenance: format!(
            "derived from model `{}`: params = 12*hidden^2*layers; activations = layers*seq_len*micro_batch*hidden*act_bytes_coeff; \
             t_step = params*grad_bytes/bandwidth + params/throughput; t_upload = params*upload_bytes/bandwidth",
            spec.name
        ),
    })
}
