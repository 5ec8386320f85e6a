use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::PromptTemplate;
use crate::error::{Error, Result};
use crate::eval::report::{Aggregate, EvalReport, ItemRecord};
use crate::eval::{log_softmax, read_jsonl};
use crate::runtime::{Capture, LanguageModel, SteeringPlan, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McItem {
    pub question: String,
    pub choices: Vec<String>,
    pub correct: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceScoring {
    /// Mean log-likelihood per choice token.
    #[default]
    Mean,
    /// Total log-likelihood of the choice tokens.
    Sum,
}

#[derive(Debug, Clone)]
pub struct McTask {
    pub items: Vec<McItem>,
    pub template: PromptTemplate,
    /// Text placed between the rendered question and each choice.
    pub separator: String,
    pub scoring: ChoiceScoring,
}

impl McTask {
    pub fn new(items: Vec<McItem>, template: PromptTemplate) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("multiple-choice task has no items".into()));
        }
        for (i, item) in items.iter().enumerate() {
            if item.choices.len() < 2 {
                return Err(Error::InvalidInput(format!("item {i} has fewer than two choices")));
            }
            if item.correct >= item.choices.len() {
                return Err(Error::InvalidInput(format!(
                    "item {i} marks choice {} correct out of {}",
                    item.correct,
                    item.choices.len()
                )));
            }
        }
        Ok(McTask {
            items,
            template,
            separator: " ".into(),
            scoring: ChoiceScoring::Mean,
        })
    }

    pub fn items_from_jsonl(path: &Path) -> Result<Vec<McItem>> {
        read_jsonl(path)
    }
}

/// Log-likelihood of each choice continuation given the rendered question.
pub fn choice_scores<M: LanguageModel + ?Sized>(
    model: &M,
    task: &McTask,
    item: &McItem,
    steering: Option<&SteeringPlan>,
) -> Result<Vec<f64>> {
    let context = model.codec().encode(&task.template.render(&item.question))?;
    if context.is_empty() {
        return Err(Error::InvalidInput("question encodes to no tokens".into()));
    }
    item.choices
        .iter()
        .map(|choice| {
            let tail = model.codec().encode(&format!("{}{choice}", task.separator))?;
            if tail.is_empty() {
                return Err(Error::InvalidInput(format!("choice {choice:?} encodes to no tokens")));
            }
            let mut ids: TokenSequence = context.clone();
            ids.extend_from_slice(&tail);
            let logits = model.forward(&ids, steering, &Capture::logits_only())?.logits;
            let start = context.len();
            let mut total = 0.0;
            for (offset, &tok) in tail.iter().enumerate() {
                let row = logits.row(start + offset - 1);
                total += log_softmax(row.as_slice().expect("contiguous row"))[tok as usize];
            }
            Ok(match task.scoring {
                ChoiceScoring::Mean => total / tail.len() as f64,
                ChoiceScoring::Sum => total,
            })
        })
        .collect()
}

/// First index holding the maximum score.
pub fn pick(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn mc_eval<M: LanguageModel + ?Sized>(
    model: &M,
    task: &McTask,
    steering: Option<&SteeringPlan>,
) -> Result<EvalReport> {
    let items = task
        .items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let scores = choice_scores(model, task, item, steering)?;
            let predicted = pick(&scores);
            Ok(ItemRecord {
                index: i,
                scores: BTreeMap::from([(
                    "correct".to_string(),
                    f64::from(u8::from(predicted == item.correct)),
                )]),
                detail: serde_json::json!({
                    "choice_scores": scores,
                    "predicted": predicted,
                    "answer": item.correct,
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::new("mc", vec![model.model_id().to_string()], items);
    report.add_metric("accuracy", Aggregate::mean("correct"))?;
    report.extra.insert("scoring".into(), serde_json::to_value(task.scoring).expect("enum"));
    if let Some(plan) = steering {
        report.steering = plan.summary();
        report.alpha = Some(plan.default_alpha);
    }
    Ok(report)
}
