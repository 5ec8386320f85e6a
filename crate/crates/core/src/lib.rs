//! Concept transplantation between decoder-only language models.
//!
//! The crate covers the whole pipeline:
//!
//! - [`runtime`]: load GPT-NeoX checkpoints, tokenize, run forward passes
//!   with last-token state capture, and generate with residual-stream
//!   steering.
//! - [`concept`]: refine per-layer concept vectors from paired examples, fit
//!   least-squares maps between two models' hidden spaces, and reformulate
//!   vectors through them.
//! - [`eval`]: emotion token/logit accuracy, multiple-choice likelihood
//!   accuracy, perplexity, classifier-scored completions and strength search.
//! - [`analysis`]: PCA displacement data and unembedding token-shift tables.

pub mod analysis;
pub mod concept;
pub mod error;
pub mod eval;
pub mod runtime;
pub mod tensor_file;

pub use error::{Error, Result};
pub use runtime::{
    Capture, DecodeConfig, ForwardResult, GptNeoX, HiddenStateRecord, LanguageModel,
    ModelConfig, ModelWeights, SteeringPlan, TokenSequence,
};
