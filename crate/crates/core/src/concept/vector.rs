use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{ExamplePairSet, PromptTemplate};
use crate::error::{Error, Result};
use crate::runtime::{Capture, LanguageModel, SteeringPlan, TokenSequence};

/// Per-layer concept directions of one model (1-based layer keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub concept: String,
    pub source_model: String,
    pub template_id: String,
    pub n_pairs: usize,
    pub layers: BTreeMap<usize, Vec<f32>>,
}

impl ConceptVector {
    pub fn dim(&self) -> usize {
        self.layers.values().next().map_or(0, Vec::len)
    }

    pub fn layer(&self, k: usize) -> Option<&[f32]> {
        self.layers.get(&k).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concept.trim().is_empty() {
            return Err(Error::Validation("concept vector has no concept label".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Validation(format!("concept `{}` has no layers", self.concept)));
        }
        let d = self.dim();
        for (&k, v) in &self.layers {
            if k == 0 {
                return Err(Error::Validation("layer indices are 1-based".into()));
            }
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    what: format!("layer {k} of concept `{}`", self.concept),
                    expected: d,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} of concept `{}`", self.concept)));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f32) -> Self {
        ConceptVector {
            layers: self
                .layers
                .iter()
                .map(|(&k, v)| (k, v.iter().map(|x| c * x).collect()))
                .collect(),
            ..self.clone()
        }
    }

    /// Euclidean norm per layer.
    pub fn norms(&self) -> BTreeMap<usize, f32> {
        self.layers
            .iter()
            .map(|(&k, v)| (k, v.iter().map(|x| x * x).sum::<f32>().sqrt()))
            .collect()
    }

    /// Steering plan injecting the selected layers at strength `alpha`.
    /// `None` selects every stored layer.
    pub fn steering(&self, layers: Option<&[usize]>, alpha: f32) -> Result<SteeringPlan> {
        let chosen: Vec<(usize, Vec<f32>)> = match layers {
            None => self.layers.iter().map(|(&k, v)| (k, v.clone())).collect(),
            Some(list) => list
                .iter()
                .map(|k| {
                    self.layers.get(k).map(|v| (*k, v.clone())).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "concept `{}` has no vector for layer {k}",
                            self.concept
                        ))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut plan = SteeringPlan::new(alpha);
        plan.add_vector(self.concept.clone(), chosen, None)?;
        Ok(plan)
    }
}

/// Encodes `text` and returns the last token's post-block state at every
/// layer (index 0 = layer 1).
pub fn last_token_states<M: LanguageModel + ?Sized>(model: &M, text: &str) -> Result<Vec<Vec<f32>>> {
    steered_last_token_states(model, text, None)
}

/// [`last_token_states`] with `steering` applied during the forward pass.
pub fn steered_last_token_states<M: LanguageModel + ?Sized>(
    model: &M,
    text: &str,
    steering: Option<&SteeringPlan>,
) -> Result<Vec<Vec<f32>>> {
    let ids = encode_nonempty(model, text)?;
    let result = model.forward(&ids, steering, &Capture::states())?;
    Ok(result.captured.into_iter().map(|r| r.vector).collect())
}

pub(crate) fn encode_nonempty<M: LanguageModel + ?Sized>(model: &M, text: &str) -> Result<TokenSequence> {
    let ids = model.codec().encode(text)?;
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("text {text:?} encodes to no tokens")));
    }
    ids.validate(model.vocab_size(), model.max_seq_len())?;
    Ok(ids)
}

/// Mean difference of last-token states between positive and negative
/// examples, at every layer.
///
/// Pair differences are taken in f32 and summed in f64 in pair order, so the
/// result does not depend on scheduling and swapping the two sides negates it
/// exactly.
pub fn refine_concept<M: LanguageModel + ?Sized>(
    model: &M,
    pairs: &ExamplePairSet,
    template: &PromptTemplate,
) -> Result<ConceptVector> {
    pairs.validate()?;
    let diffs = pairs
        .pairs
        .par_iter()
        .map(|pair| {
            let pos = last_token_states(model, &template.render_positive(&pair.positive))?;
            let neg = last_token_states(model, &template.render_negative(&pair.negative))?;
            Ok(pos
                .iter()
                .zip(&neg)
                .map(|(p, n)| p.iter().zip(n).map(|(a, b)| a - b).collect::<Vec<f32>>())
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let n = diffs.len();
    let (l, d) = (model.n_layers(), model.hidden_dim());
    let mut sums = vec![vec![0.0f64; d]; l];
    for per_pair in &diffs {
        for (acc, diff) in sums.iter_mut().zip(per_pair) {
            acc.iter_mut().zip(diff).for_each(|(s, &x)| *s += f64::from(x));
        }
    }
    let layers = sums
        .into_iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s.into_iter().map(|x| (x / n as f64) as f32).collect()))
        .collect();
    let vector = ConceptVector {
        concept: pairs.concept.clone(),
        source_model: model.model_id().to_string(),
        template_id: pairs.template_id.clone(),
        n_pairs: n,
        layers,
    };
    vector.validate()?;
    Ok(vector)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
