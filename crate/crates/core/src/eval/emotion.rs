use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::vector::encode_nonempty;
use crate::concept::{ExamplePairSet, PromptTemplate};
use crate::error::{Error, Result};
use crate::eval::report::{Aggregate, EvalReport, ItemRecord};
use crate::eval::read_jsonl;
use crate::runtime::{argmax, Capture, DecodeConfig, LanguageModel, SteeringPlan, TextCodec};

pub const EMOTIONS: [&str; 6] = ["happiness", "sadness", "anger", "fear", "surprise", "disgust"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionItem {
    pub scenario: String,
    pub label: String,
}

/// Token ids that count as "the model said this label".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTokens {
    pub label: String,
    /// First token of `" label"`; used for the logit comparison.
    pub canonical: u32,
    pub aliases: Vec<u32>,
}

impl LabelTokens {
    pub fn matches(&self, id: u32) -> bool {
        self.canonical == id || self.aliases.contains(&id)
    }
}

#[derive(Debug, Clone)]
pub struct EmotionTask {
    pub items: Vec<EmotionItem>,
    pub few_shot_prefix: String,
    pub template: PromptTemplate,
    pub labels: Vec<LabelTokens>,
}

fn first_token(codec: &dyn TextCodec, text: &str) -> Result<Option<u32>> {
    Ok(codec.encode(text)?.first().copied())
}

impl EmotionTask {
    /// Resolves label tokens with `codec`. Each label's canonical token is the
    /// first token of `" label"`; `"label"`, `" Label"`, `"Label"` and any
    /// `extra_aliases` contribute alias ids. An alias id claimed by more than
    /// one label is dropped from all of them; colliding canonical ids are an
    /// error.
    pub fn new(
        codec: &dyn TextCodec,
        items: Vec<EmotionItem>,
        few_shot_prefix: impl Into<String>,
        template: PromptTemplate,
        extra_aliases: &BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("emotion task has no scenarios".into()));
        }
        for item in &items {
            if !EMOTIONS.contains(&item.label.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "unknown emotion label `{}`",
                    item.label
                )));
            }
        }
        let mut labels = Vec::new();
        for label in EMOTIONS {
            let canonical = first_token(codec, &format!(" {label}"))?
                .ok_or_else(|| Error::Tokenizer(format!("label `{label}` encodes to nothing")))?;
            let mut forms = vec![label.to_string(), capitalize(&format!(" {label}")), capitalize(label)];
            forms.extend(extra_aliases.get(label).cloned().unwrap_or_default());
            let mut aliases = Vec::new();
            for form in forms {
                if let Some(id) = first_token(codec, &form)? {
                    if id != canonical && !aliases.contains(&id) {
                        aliases.push(id);
                    }
                }
            }
            labels.push(LabelTokens {
                label: label.to_string(),
                canonical,
                aliases,
            });
        }
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if i != j && labels[i].canonical == labels[j].canonical {
                    return Err(Error::Tokenizer(format!(
                        "labels `{}` and `{}` share their first token",
                        labels[i].label, labels[j].label
                    )));
                }
            }
        }
        let claimed: Vec<Vec<u32>> = labels
            .iter()
            .map(|l| {
                let mut all = l.aliases.clone();
                all.push(l.canonical);
                all
            })
            .collect();
        for (i, l) in labels.iter_mut().enumerate() {
            l.aliases.retain(|id| {
                claimed
                    .iter()
                    .enumerate()
                    .all(|(j, other)| j == i || !other.contains(id))
            });
        }
        Ok(EmotionTask {
            items,
            few_shot_prefix: few_shot_prefix.into(),
            template,
            labels,
        })
    }

    pub fn items_from_jsonl(path: &Path) -> Result<Vec<EmotionItem>> {
        read_jsonl(path)
    }

    pub fn label(&self, name: &str) -> Result<&LabelTokens> {
        self.labels
            .iter()
            .find(|l| l.label == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown emotion `{name}`")))
    }

    pub fn prompt(&self, scenario: &str) -> String {
        format!("{}{}", self.few_shot_prefix, self.template.render(scenario))
    }

    /// Indices of scenarios whose true label differs from `target`.
    pub fn negative_items(&self, target: &str) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].label != target)
            .collect()
    }
}

fn capitalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut done = false;
    for c in s.chars() {
        if !done && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

/// Contrast pairs for `concept`. Positives are the first `n` scenarios
/// labelled `concept`, in order; negatives are `n` scenarios drawn without
/// replacement from the other labels.
pub fn emotion_pairs(
    items: &[EmotionItem],
    concept: &str,
    n: usize,
    seed: u64,
    template_id: &str,
) -> Result<ExamplePairSet> {
    let positive: Vec<String> = items
        .iter()
        .filter(|i| i.label == concept)
        .take(n)
        .map(|i| i.scenario.clone())
        .collect();
    let mut others: Vec<String> = items
        .iter()
        .filter(|i| i.label != concept)
        .map(|i| i.scenario.clone())
        .collect();
    if positive.len() < n || others.len() < n {
        return Err(Error::InvalidInput(format!(
            "need {n} scenarios for `{concept}` and {n} others, found {} and {}",
            positive.len(),
            others.len()
        )));
    }
    others.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    others.truncate(n);
    ExamplePairSet::from_texts(concept, template_id, &positive, &others)
}

/// Few-shot block of `Scenario: ...\nThe emotion of the above scenario is
/// label\n\n` entries.
pub fn few_shot_prefix(template: &PromptTemplate, shots: &[EmotionItem]) -> String {
    shots
        .iter()
        .map(|s| format!("{} {}\n\n", template.render(&s.scenario), s.label))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionEvalOptions {
    /// Tokens generated while looking for the first non-whitespace token.
    pub max_new_tokens: usize,
}

impl Default for EmotionEvalOptions {
    fn default() -> Self {
        EmotionEvalOptions { max_new_tokens: 4 }
    }
}

/// Token and logit accuracy for `target` on the negative scenarios.
///
/// Token accuracy: the first generated token whose text is not pure
/// whitespace is one of the target's ids. Logit accuracy: among the six
/// canonical ids, the target's has the largest next-token logit.
pub fn emotion_eval<M: LanguageModel + ?Sized>(
    model: &M,
    task: &EmotionTask,
    target: &str,
    steering: Option<&SteeringPlan>,
    options: EmotionEvalOptions,
) -> Result<EvalReport> {
    let target_tokens = task.label(target)?;
    let target_index = task.labels.iter().position(|l| l.label == target).expect("label found");
    let indices = task.negative_items(target);
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!("no scenarios outside `{target}`")));
    }
    let canonical: Vec<u32> = task.labels.iter().map(|l| l.canonical).collect();
    let decode = DecodeConfig::greedy(options.max_new_tokens);
    let items = indices
        .par_iter()
        .map(|&i| {
            let item = &task.items[i];
            let ids = encode_nonempty(model, &task.prompt(&item.scenario))?;
            let forward = model.forward(&ids, steering, &Capture::last_logits())?;
            let logits = forward.last_logits().expect("last row requested");
            let six: Vec<f32> = canonical.iter().map(|&c| logits[c as usize]).collect();
            let predicted = argmax(&six);

            let generated = model.generate(&ids, &decode, steering)?;
            let mut first = None;
            for &id in generated.iter() {
                let text = model.codec().decode_lossy(&[id])?;
                if !text.trim().is_empty() {
                    first = Some((id, text));
                    break;
                }
            }
            let token_hit = first.as_ref().is_some_and(|(id, _)| target_tokens.matches(*id));
            let logit_hit = predicted == target_index;
            Ok(ItemRecord {
                index: i,
                scores: BTreeMap::from([
                    ("token_hit".to_string(), f64::from(u8::from(token_hit))),
                    ("logit_hit".to_string(), f64::from(u8::from(logit_hit))),
                ]),
                detail: serde_json::json!({
                    "label": item.label,
                    "first_token": first.as_ref().map(|(id, _)| id),
                    "first_text": first.as_ref().map(|(_, t)| t),
                    "logit_prediction": task.labels[predicted].label,
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::new("emotion", vec![model.model_id().to_string()], items);
    report.add_metric("token_acc", Aggregate::mean("token_hit"))?;
    report.add_metric("logit_acc", Aggregate::mean("logit_hit"))?;
    report.extra.insert("target".into(), target.into());
    if let Some(plan) = steering {
        report.steering = plan.summary();
        report.alpha = Some(plan.default_alpha);
    }
    Ok(report)
}
