//! Architecture hyperparameters for GPT-NeoX style decoders.
//!
//! The loader accepts both the field names used by this crate and the ones
//! found in published `config.json` files (`hidden_size`, `rotary_pct`,
//! nested `rope_parameters`, ...).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Exact erf-based GELU.
    Gelu,
    /// Tanh approximation.
    GeluTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rotary_pct: f32,
    pub rotary_base: f32,
    pub layernorm_eps: f32,
    pub parallel_residual: bool,
    pub tie_embeddings: bool,
    pub intermediate_size: usize,
    pub activation: Activation,
}

#[derive(Debug, Deserialize)]
struct RopeParameters {
    partial_rotary_factor: Option<f32>,
    rope_theta: Option<f32>,
}

/// Superset of the accepted spellings; resolved into [`ModelConfig`].
#[derive(Debug, Deserialize)]
struct RawConfig {
    #[serde(alias = "num_hidden_layers")]
    n_layers: Option<usize>,
    #[serde(alias = "hidden_size")]
    hidden_dim: Option<usize>,
    #[serde(alias = "num_attention_heads")]
    n_heads: Option<usize>,
    head_dim: Option<usize>,
    vocab_size: Option<usize>,
    #[serde(alias = "max_position_embeddings")]
    max_seq_len: Option<usize>,
    #[serde(alias = "partial_rotary_factor")]
    rotary_pct: Option<f32>,
    #[serde(alias = "rotary_emb_base", alias = "rope_theta")]
    rotary_base: Option<f32>,
    rope_parameters: Option<RopeParameters>,
    #[serde(alias = "layer_norm_eps")]
    layernorm_eps: Option<f32>,
    #[serde(alias = "use_parallel_residual")]
    parallel_residual: Option<bool>,
    #[serde(alias = "tie_word_embeddings")]
    tie_embeddings: Option<bool>,
    intermediate_size: Option<usize>,
    hidden_act: Option<String>,
    activation: Option<Activation>,
    model_type: Option<String>,
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing field `{name}`")))
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::json("model config", e))?;
        if let Some(kind) = raw.model_type.as_deref() {
            if kind != "gpt_neox" {
                return Err(Error::InvalidConfig(format!(
                    "unsupported model_type `{kind}` (only gpt_neox)"
                )));
            }
        }
        let n_layers = required(raw.n_layers, "n_layers")?;
        let hidden_dim = required(raw.hidden_dim, "hidden_dim")?;
        let n_heads = required(raw.n_heads, "n_heads")?;
        if n_heads == 0 {
            return Err(Error::InvalidConfig("n_heads must be positive".into()));
        }
        let head_dim = raw.head_dim.unwrap_or(hidden_dim / n_heads);
        let rope = raw.rope_parameters.as_ref();
        let rotary_pct = raw
            .rotary_pct
            .or_else(|| rope.and_then(|r| r.partial_rotary_factor))
            .unwrap_or(1.0);
        let rotary_base = raw
            .rotary_base
            .or_else(|| rope.and_then(|r| r.rope_theta))
            .unwrap_or(10_000.0);
        let activation = match (raw.activation, raw.hidden_act.as_deref()) {
            (Some(a), _) => a,
            (None, None | Some("gelu")) => Activation::Gelu,
            (None, Some("gelu_new" | "gelu_fast" | "gelu_pytorch_tanh")) => Activation::GeluTanh,
            (None, Some(other)) => {
                return Err(Error::InvalidConfig(format!(
                    "unsupported activation `{other}`"
                )))
            }
        };
        let config = ModelConfig {
            n_layers,
            hidden_dim,
            n_heads,
            head_dim,
            vocab_size: required(raw.vocab_size, "vocab_size")?,
            max_seq_len: required(raw.max_seq_len, "max_seq_len")?,
            rotary_pct,
            rotary_base,
            layernorm_eps: raw.layernorm_eps.unwrap_or(1e-5),
            parallel_residual: raw.parallel_residual.unwrap_or(true),
            tie_embeddings: raw.tie_embeddings.unwrap_or(false),
            intermediate_size: raw.intermediate_size.unwrap_or(4 * hidden_dim),
            activation,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_layers < 1 {
            return fail("n_layers must be at least 1".into());
        }
        if self.n_heads * self.head_dim != self.hidden_dim {
            return fail(format!(
                "hidden_dim {} != n_heads {} x head_dim {}",
                self.hidden_dim, self.n_heads, self.head_dim
            ));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2".into());
        }
        if !(self.layernorm_eps > 0.0) {
            return fail("layernorm_eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rotary_pct) {
            return fail(format!("rotary_pct {} outside [0, 1]", self.rotary_pct));
        }
        if self.rotary_dims() % 2 != 0 {
            return fail("rotary dimension count must be even".into());
        }
        if self.max_seq_len == 0 || self.intermediate_size == 0 {
            return fail("max_seq_len and intermediate_size must be positive".into());
        }
        Ok(())
    }

    /// Number of leading dimensions of each head that receive rotary embedding.
    pub fn rotary_dims(&self) -> usize {
        (self.head_dim as f32 * self.rotary_pct) as usize
    }
}
