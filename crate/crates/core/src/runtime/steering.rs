//! Residual-stream steering: which layers receive which vectors, and how hard.
//!
//! At block `k` the runtime adds `sum_i alpha_i * v_i^k` to every position's
//! post-block residual value. Entries whose strength is zero are dropped
//! entirely so an all-zero plan is a bitwise no-op.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub label: String,
    /// Overrides the plan's default strength when set.
    pub alpha: Option<f32>,
    /// 1-based layer -> direction.
    pub layers: BTreeMap<usize, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub default_alpha: f32,
    vectors: Vec<SteeringVector>,
}

/// Echo of a plan for reports; omits the vector payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSummary {
    pub label: String,
    pub alpha: f32,
    pub layers: Vec<usize>,
    pub norms: Vec<f32>,
}

impl SteeringPlan {
    pub fn new(default_alpha: f32) -> Self {
        SteeringPlan {
            default_alpha,
            vectors: Vec::new(),
        }
    }

    /// Plan with one vector injected at one layer.
    pub fn single(layer: usize, vector: Vec<f32>, alpha: f32) -> Self {
        let mut plan = SteeringPlan::new(alpha);
        plan.vectors.push(SteeringVector {
            label: "vector".into(),
            alpha: None,
            layers: BTreeMap::from([(layer, vector)]),
        });
        plan
    }

    /// Adds a vector; a layer may appear only once per vector.
    pub fn add_vector(
        &mut self,
        label: impl Into<String>,
        layers: impl IntoIterator<Item = (usize, Vec<f32>)>,
        alpha: Option<f32>,
    ) -> Result<()> {
        let label = label.into();
        let mut map = BTreeMap::new();
        for (layer, v) in layers {
            if map.insert(layer, v).is_some() {
                return Err(Error::InvalidInput(format!(
                    "layer {layer} appears twice in steering vector `{label}`"
                )));
            }
        }
        self.vectors.push(SteeringVector { label, alpha, layers: map });
        Ok(())
    }

    pub fn vectors(&self) -> &[SteeringVector] {
        &self.vectors
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.iter().all(|v| v.layers.is_empty())
    }

    /// Same directions, every strength replaced by `alpha`.
    pub fn with_alpha(&self, alpha: f32) -> Self {
        SteeringPlan {
            default_alpha: alpha,
            vectors: self
                .vectors
                .iter()
                .map(|v| SteeringVector {
                    alpha: None,
                    ..v.clone()
                })
                .collect(),
        }
    }

    pub fn summary(&self) -> Vec<SteeringSummary> {
        self.vectors
            .iter()
            .map(|v| SteeringSummary {
                label: v.label.clone(),
                alpha: v.alpha.unwrap_or(self.default_alpha),
                layers: v.layers.keys().copied().collect(),
                norms: v
                    .layers
                    .values()
                    .map(|x| x.iter().map(|a| a * a).sum::<f32>().sqrt())
                    .collect(),
            })
            .collect()
    }

    /// Validates against a model shape and folds the plan into one offset
    /// per layer.
    pub fn resolve(&self, n_layers: usize, hidden_dim: usize) -> Result<ResolvedSteering> {
        let mut offsets: Vec<Option<Vec<f32>>> = vec![None; n_layers];
        for vector in &self.vectors {
            let alpha = vector.alpha.unwrap_or(self.default_alpha);
            if !alpha.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "steering strength {alpha} for `{}` is not finite",
                    vector.label
                )));
            }
            for (&layer, v) in &vector.layers {
                if layer == 0 || layer > n_layers {
                    return Err(Error::InvalidInput(format!(
                        "steering layer {layer} outside [1, {n_layers}]"
                    )));
                }
                if v.len() != hidden_dim {
                    return Err(Error::DimensionMismatch {
                        what: format!("steering vector `{}` at layer {layer}", vector.label),
                        expected: hidden_dim,
                        found: v.len(),
                    });
                }
                if alpha == 0.0 {
                    continue;
                }
                match &mut offsets[layer - 1] {
                    slot @ None => *slot = Some(v.iter().map(|x| alpha * x).collect()),
                    Some(acc) => acc.iter_mut().zip(v).for_each(|(a, x)| *a += alpha * x),
                }
            }
        }
        Ok(ResolvedSteering { offsets })
    }
}

/// Per-layer additive offsets (index 0 = layer 1).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolvedSteering {
    offsets: Vec<Option<Vec<f32>>>,
}

impl ResolvedSteering {
    pub fn offset(&self, layer_index: usize) -> Option<&[f32]> {
        self.offsets.get(layer_index).and_then(|o| o.as_deref())
    }

    pub fn is_noop(&self) -> bool {
        self.offsets.iter().all(Option::is_none)
    }
}
