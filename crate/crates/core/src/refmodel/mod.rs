//! Toy-scale reference decoder kernel and compute accounting: parameter
//! count with an explicit assumption ledger, FLOPs-per-token itemization,
//! and model-FLOPs-utilization arithmetic.

pub mod kernel;

pub use kernel::{
    block_forward, layer_norm, partial_rope, Activation, BlockWeights, KernelError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    LayerNormWithBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasPolicy {
    QkvOnly,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: u64,
    pub layers: u64,
    pub heads: u64,
    pub seq_len: u64,
    /// Tokenizer vocabulary size.
    pub vocab: u64,
    /// FFN inner size (gated: three projections of this width).
    pub ffn_inner: u64,
    /// Leading fraction of each head's dims that get rotary rotation.
    pub rotary_fraction: f64,
    pub rotary_base: f64,
    pub tie_embeddings: bool,
    pub norm: NormKind,
    pub bias_policy: BiasPolicy,
}

impl ModelConfig {
    pub fn head_dim(&self) -> u64 {
        self.hidden / self.heads
    }

    /// Number of rotated dims per head: round(fraction x head_dim).
    pub fn rotary_dims(&self) -> u64 {
        (self.rotary_fraction * self.head_dim() as f64).round() as u64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden % self.heads != 0 {
            return Err(ModelError::Invalid("hidden not divisible by heads".into()));
        }
        if !(self.rotary_fraction > 0.0 && self.rotary_fraction <= 1.0) {
            return Err(ModelError::Invalid("rotary_fraction outside (0, 1]".into()));
        }
        if self.rotary_dims() % 2 != 0 {
            return Err(ModelError::OddRotaryDims(self.rotary_dims()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("rotated dim count {0} is odd; pairwise rotation needs an even count")]
    OddRotaryDims(u64),
    #[error("peak FLOPs rate must be positive")]
    NonPositivePeak,
}

/// The published 3B configuration.
pub fn reference_3b_config() -> ModelConfig {
    ModelConfig {
        hidden: 2560,
        layers: 32,
        heads: 32,
        seq_len: 16_384,
        vocab: 50_257,
        ffn_inner: 6912,
        rotary_fraction: 0.25,
        rotary_base: 10_000.0,
        tie_embeddings: false,
        norm: NormKind::LayerNormWithBias,
        bias_policy: BiasPolicy::QkvOnly,
    }
}

/// Counting conventions used by [`param_count`]. The frozen defaults are
/// the unique set found to reproduce the published 2,795,443,200 total
/// for the [`reference_3b_config`] shape; they are echoed in every breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountAssumptions {
    /// Embedding matrices are padded to this many rows (0 = use vocab).
    pub embedding_rows: u64,
    /// Whether Q/K/V projection biases enter the ledger. The weights do
    /// exist under the QkvOnly bias policy; the published total counts
    /// matrix parameters only.
    pub count_attention_biases: bool,
    pub include_final_norm: bool,
    /// Gated FFN: three hidden x ffn_inner projections instead of two.
    pub gated_ffn: bool,
}

impl Default for CountAssumptions {
    fn default() -> Self {
        CountAssumptions {
            embedding_rows: 50_304,
            count_attention_biases: false,
            include_final_norm: true,
            gated_ffn: true,
        }
    }
}

/// Itemized parameter ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub assumptions: CountAssumptions,
    pub embeddings: u64,
    pub lm_head: u64,
    pub per_layer_attention: u64,
    pub per_layer_ffn: u64,
    pub per_layer_norms: u64,
    pub final_norm: u64,
    pub total: u64,
}

impl std::fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "parameter ledger")?;
        writeln!(f, "  embeddings           {:>15}", self.embeddings)?;
        writeln!(f, "  lm head              {:>15}", self.lm_head)?;
        writeln!(f, "  attention (x layer)  {:>15}", self.per_layer_attention)?;
        writeln!(f, "  ffn (x layer)        {:>15}", self.per_layer_ffn)?;
        writeln!(f, "  norms (x layer)      {:>15}", self.per_layer_norms)?;
        writeln!(f, "  final norm           {:>15}", self.final_norm)?;
        writeln!(f, "  total                {:>15}", self.total)?;
        writeln!(
            f,
            "  assumptions: embedding rows {}, attention biases {}, final norm {}, gated ffn {}",
            self.assumptions.embedding_rows,
            if self.assumptions.count_attention_biases { "counted" } else { "excluded" },
            if self.assumptions.include_final_norm { "included" } else { "excluded" },
            self.assumptions.gated_ffn,
        )
    }
}

/// Exact parameter count under the declared assumptions.
pub fn param_count(c: &ModelConfig, a: CountAssumptions) -> ParamBreakdown {
    let h = c.hidden;
    let rows = if a.embedding_rows == 0 { c.vocab } else { a.embedding_rows };
    let embeddings = rows * h;
    let lm_head = if c.tie_embeddings { 0 } else { rows * h };
    let mut attention = 4 * h * h; // q, k, v, out projections
    if a.count_attention_biases {
        attention += 3 * h;
    }
    let ffn = if a.gated_ffn { 3 * h * c.ffn_inner } else { 2 * h * c.ffn_inner };
    let norms = 2 * (2 * h); // two LayerNorms, weight + bias each
    let final_norm = if a.include_final_norm { 2 * h } else { 0 };
    let total = embeddings + lm_head + c.layers * (attention + ffn + norms) + final_norm;
    ParamBreakdown {
        assumptions: a,
        embeddings,
        lm_head,
        per_layer_attention: attention,
        per_layer_ffn: ffn,
        per_layer_norms: norms,
        final_norm,
        total,
    }
}

/// FLOPs-per-token itemization: the standard 6N matmul term plus the
/// quadratic attention term 12 x layers x hidden x seq_len.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub six_n: f64,
    pub attention: f64,
    pub total: f64,
}

pub fn flops_per_token(c: &ModelConfig, params: u64) -> FlopsBreakdown {
    let six_n = 6.0 * params as f64;
    let attention = 12.0 * (c.layers * c.hidden * c.seq_len) as f64;
    FlopsBreakdown {
        six_n,
        attention,
        total: six_n + attention,
    }
}

/// Model FLOPs utilization in percent.
pub fn mfu(achieved_flops_rate: f64, peak_flops_rate: f64) -> Result<f64, ModelError> {
    if peak_flops_rate <= 0.0 {
        return Err(ModelError::NonPositivePeak);
    }
    Ok(100.0 * achieved_flops_rate / peak_flops_rate)
}
