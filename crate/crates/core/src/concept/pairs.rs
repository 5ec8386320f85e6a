use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One contrastive example: the same situation phrased with and without the
/// concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePairSet {
    pub concept: String,
    pub template_id: String,
    pub pairs: Vec<ExamplePair>,
}

impl ExamplePairSet {
    pub fn new(
        concept: impl Into<String>,
        template_id: impl Into<String>,
        pairs: Vec<ExamplePair>,
    ) -> Result<Self> {
        let set = ExamplePairSet {
            concept: concept.into(),
            template_id: template_id.into(),
            pairs,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn from_texts(
        concept: impl Into<String>,
        template_id: impl Into<String>,
        positive: &[String],
        negative: &[String],
    ) -> Result<Self> {
        if positive.len() != negative.len() {
            return Err(Error::InvalidInput(format!(
                "{} positive examples but {} negative",
                positive.len(),
                negative.len()
            )));
        }
        let pairs = positive
            .iter()
            .zip(negative)
            .map(|(p, n)| ExamplePair {
                positive: p.clone(),
                negative: n.clone(),
            })
            .collect();
        Self::new(concept, template_id, pairs)
    }

    /// Reads JSON lines of `{"positive": .., "negative": ..}`. Blank lines
    /// are skipped.
    pub fn from_jsonl(
        path: &Path,
        concept: impl Into<String>,
        template_id: impl Into<String>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))
            })
            .collect::<Result<Vec<ExamplePair>>>()?;
        Self::new(concept, template_id, pairs)
    }

    pub fn to_jsonl(&self) -> String {
        self.pairs
            .iter()
            .map(|p| serde_json::to_string(p).expect("plain strings serialize") + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// First `n` pairs.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(
            self.concept.clone(),
            self.template_id.clone(),
            self.pairs.iter().take(n).cloned().collect(),
        )
    }

    /// Swaps the roles of positive and negative examples.
    pub fn swapped(&self) -> Self {
        ExamplePairSet {
            concept: self.concept.clone(),
            template_id: self.template_id.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| ExamplePair {
                    positive: p.negative.clone(),
                    negative: p.positive.clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidInput(format!(
                "pair set for `{}` is empty",
                self.concept
            )));
        }
        if self.concept.trim().is_empty() {
            return Err(Error::Validation("pair set has no concept label".into()));
        }
        Ok(())
    }
}

/// A prompt wrapper. `{text}` is replaced by the example; when `negative` is
/// set the two sides of a pair use different wrappers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub positive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
}

pub const PLACEHOLDER: &str = "{text}";

impl PromptTemplate {
    pub fn plain() -> Self {
        PromptTemplate {
            positive: PLACEHOLDER.into(),
            negative: None,
        }
    }

    pub fn symmetric(pattern: impl Into<String>) -> Self {
        PromptTemplate {
            positive: pattern.into(),
            negative: None,
        }
    }

    pub fn render_positive(&self, text: &str) -> String {
        self.positive.replace(PLACEHOLDER, text)
    }

    pub fn render_negative(&self, text: &str) -> String {
        self.negative
            .as_deref()
            .unwrap_or(&self.positive)
            .replace(PLACEHOLDER, text)
    }

    /// Same wrapper used for single texts (evaluation, fitting).
    pub fn render(&self, text: &str) -> String {
        self.render_positive(text)
    }
}

/// Named templates, as stored in `templates.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateSet(pub BTreeMap<String, PromptTemplate>);

impl TemplateSet {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Templates shipped with the crate.
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../../../data/templates.json"))
            .expect("bundled templates parse")
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate> {
        if id == "plain" {
            static PLAIN: std::sync::OnceLock<PromptTemplate> = std::sync::OnceLock::new();
            return Ok(PLAIN.get_or_init(PromptTemplate::plain));
        }
        self.0.get(id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown template `{id}` (known: plain, {})",
                self.0.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}
