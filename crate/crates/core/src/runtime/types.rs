use std::ops::Deref;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn extend_from_slice(&mut self, ids: &[u32]) {
        self.0.extend_from_slice(ids);
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    /// Checks every id against the vocabulary and the length against the
    /// context window.
    pub fn validate(&self, vocab_size: usize, max_seq_len: usize) -> Result<()> {
        if self.0.len() > max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.0.len(),
                max: max_seq_len,
            });
        }
        if let Some(&id) = self.0.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: vocab_size,
            });
        }
        Ok(())
    }
}

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

impl FromIterator<u32> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

/// Post-block residual value of one token at one layer. Layers are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStateRecord {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    None,
    All,
    /// 1-based layer indices.
    Layers(Vec<usize>),
}

impl LayerSelection {
    pub fn contains(&self, layer: usize) -> bool {
        match self {
            LayerSelection::None => false,
            LayerSelection::All => true,
            LayerSelection::Layers(list) => list.contains(&layer),
        }
    }
}

/// Which rows of the logits matrix to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitsMode {
    #[default]
    All,
    Last,
    Skip,
}

/// What a forward pass records besides logits.
#[derive(Debug, Clone, Default)]
pub struct Capture {
    /// Layers whose last-token state is recorded.
    pub layers: LayerSelection,
    /// Keep every position's state at every layer.
    pub full_states: bool,
    pub logits: LogitsMode,
}

impl Capture {
    pub fn logits_only() -> Self {
        Capture::default()
    }

    pub fn last_logits() -> Self {
        Capture {
            logits: LogitsMode::Last,
            ..Capture::default()
        }
    }

    /// Last-token states at every layer, no logits.
    pub fn states() -> Self {
        Capture {
            layers: LayerSelection::All,
            full_states: false,
            logits: LogitsMode::Skip,
        }
    }

    pub fn states_and_last_logits() -> Self {
        Capture {
            layers: LayerSelection::All,
            full_states: false,
            logits: LogitsMode::Last,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// One row per computed position (all positions, the last one, or none
    /// depending on [`LogitsMode`]).
    pub logits: Array2<f32>,
    pub captured: Vec<HiddenStateRecord>,
    /// Per-layer `t x d` states, index 0 holding layer 1.
    pub full_states: Option<Vec<Array2<f32>>>,
}

impl ForwardResult {
    pub fn last_logits(&self) -> Option<ArrayView1<'_, f32>> {
        let rows = self.logits.nrows();
        (rows > 0).then(|| self.logits.row(rows - 1))
    }

    pub fn state(&self, layer: usize) -> Option<&HiddenStateRecord> {
        self.captured.iter().find(|r| r.layer == layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    Temperature { temperature: f32, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub max_new_tokens: usize,
    /// Generation stops after emitting this id.
    #[serde(default)]
    pub stop_token: Option<u32>,
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Greedy,
            max_new_tokens,
            stop_token: None,
        }
    }
}
