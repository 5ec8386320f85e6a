//! Model loading, tokenization, forward passes and steered generation.

mod config;
mod model;
mod steering;
mod tokenizer;
mod types;
mod weights;

pub use config::{Activation, ModelConfig};
pub use model::{argmax, GptNeoX, KvCache};
pub use steering::{ResolvedSteering, SteeringPlan, SteeringSummary, SteeringVector};
pub use tokenizer::{TextCodec, Tokenizer};
pub use types::{
    Capture, DecodeConfig, DecodeStrategy, ForwardResult, HiddenStateRecord, LayerSelection,
    LogitsMode, TokenSequence,
};
pub use weights::{load_checkpoint, LayerNormParams, LayerWeights, Linear, ModelWeights};

use crate::error::Result;

/// The surface the concept, evaluation and analysis code needs from a model.
///
/// Implementations must be shareable across threads; every call owns its own
/// mutable decoding state.
pub trait LanguageModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn n_layers(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;
    fn codec(&self) -> &dyn TextCodec;

    fn forward(
        &self,
        tokens: &TokenSequence,
        steering: Option<&SteeringPlan>,
        capture: &Capture,
    ) -> Result<ForwardResult>;

    /// Autoregressive continuation (new tokens only). The default recomputes
    /// the whole prefix each step; real models override it with a cache.
    fn generate(
        &self,
        prompt: &TokenSequence,
        cfg: &DecodeConfig,
        steering: Option<&SteeringPlan>,
    ) -> Result<TokenSequence> {
        model::check_generation_budget(prompt.len(), cfg, self.max_seq_len())?;
        let mut sampler = model::Sampler::new(cfg.strategy)?;
        let mut context = prompt.clone();
        let mut out = TokenSequence::default();
        while out.len() < cfg.max_new_tokens {
            let result = self.forward(&context, steering, &Capture::last_logits())?;
            let logits = result
                .last_logits()
                .map(|row| row.to_vec())
                .unwrap_or_default();
            let next = sampler.next(&logits)?;
            out.push(next);
            context.push(next);
            if cfg.stop_token == Some(next) {
                break;
            }
        }
        Ok(out)
    }

    /// Final layer norm followed by the unembedding: state -> logits.
    fn unembed(&self, state: &[f32]) -> Result<Vec<f32>>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn n_layers(&self) -> usize {
        (**self).n_layers()
    }
    fn hidden_dim(&self) -> usize {
        (**self).hidden_dim()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_seq_len(&self) -> usize {
        (**self).max_seq_len()
    }
    fn codec(&self) -> &dyn TextCodec {
        (**self).codec()
    }
    fn forward(
        &self,
        tokens: &TokenSequence,
        steering: Option<&SteeringPlan>,
        capture: &Capture,
    ) -> Result<ForwardResult> {
        (**self).forward(tokens, steering, capture)
    }
    fn generate(
        &self,
        prompt: &TokenSequence,
        cfg: &DecodeConfig,
        steering: Option<&SteeringPlan>,
    ) -> Result<TokenSequence> {
        (**self).generate(prompt, cfg, steering)
    }
    fn unembed(&self, state: &[f32]) -> Result<Vec<f32>> {
        (**self).unembed(state)
    }
}
