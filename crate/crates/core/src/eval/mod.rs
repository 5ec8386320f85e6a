//! Measurement protocols: emotion token/logit accuracy, multiple-choice
//! likelihood accuracy, perplexity, classifier-scored completions and
//! steering-strength search.

mod completion;
mod emotion;
mod grid;
mod mc;
mod perplexity;
mod report;

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub use completion::{
    completion_eval, Classifier, ClassifierVerdict, CompletionPrompt, HttpClassifier,
    LexiconClassifier, TOXIC_THRESHOLD,
};
pub use emotion::{
    emotion_eval, emotion_pairs, few_shot_prefix, EmotionEvalOptions, EmotionItem, EmotionTask, LabelTokens,
    EMOTIONS,
};
pub use grid::{alpha_grid_search, AlphaGrid, Direction, GridSearchResult};
pub use mc::{choice_scores, mc_eval, pick, ChoiceScoring, McItem, McTask};
pub use perplexity::{perplexity, sequence_nll};
pub use report::{Aggregate, EvalReport, ItemRecord, Metric};

/// Numerically stable log-softmax, in f64.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
    let log_sum = logits
        .iter()
        .map(|&x| (f64::from(x) - max).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|&x| f64::from(x) - max - log_sum).collect()
}

/// Reads JSON lines, skipping blank ones.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))
        })
        .collect()
}

/// Reads one text per non-empty line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}
