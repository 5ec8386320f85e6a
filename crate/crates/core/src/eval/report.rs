use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::SteeringSummary;

/// How an aggregate is derived from the per-item score maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregate {
    /// Mean of `key` over the items that carry it.
    Mean { key: String },
    /// `exp(sum(nll) / sum(count))`.
    Perplexity { nll_key: String, count_key: String },
}

impl Aggregate {
    pub fn mean(key: &str) -> Self {
        Aggregate::Mean { key: key.into() }
    }

    pub fn compute(&self, items: &[ItemRecord]) -> Result<f64> {
        match self {
            Aggregate::Mean { key } => {
                let vals: Vec<f64> = items.iter().filter_map(|i| i.scores.get(key).copied()).collect();
                if vals.is_empty() {
                    return Err(Error::InvalidInput(format!("no item carries `{key}`")));
                }
                Ok(vals.iter().sum::<f64>() / vals.len() as f64)
            }
            Aggregate::Perplexity { nll_key, count_key } => {
                let (mut nll, mut count) = (0.0, 0.0);
                for item in items {
                    nll += item.scores.get(nll_key).copied().unwrap_or(0.0);
                    count += item.scores.get(count_key).copied().unwrap_or(0.0);
                }
                if count == 0.0 {
                    return Err(Error::InvalidInput("no scored tokens".into()));
                }
                Ok((nll / count).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub model_ids: Vec<String>,
    pub alpha: Option<f32>,
    pub steering: Vec<SteeringSummary>,
    pub metrics: Vec<Metric>,
    pub items: Vec<ItemRecord>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(task: impl Into<String>, model_ids: Vec<String>, items: Vec<ItemRecord>) -> Self {
        EvalReport {
            task: task.into(),
            model_ids,
            alpha: None,
            steering: Vec::new(),
            metrics: Vec::new(),
            items,
            extra: BTreeMap::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Computes and appends a metric from the items.
    pub fn add_metric(&mut self, name: &str, aggregate: Aggregate) -> Result<f64> {
        let value = aggregate.compute(&self.items)?;
        self.metrics.push(Metric {
            name: name.into(),
            value,
            aggregate,
        });
        Ok(value)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// Every aggregate must equal its recomputation from the item records.
    pub fn verify(&self) -> Result<()> {
        for m in &self.metrics {
            let again = m.aggregate.compute(&self.items)?;
            if again.to_bits() != m.value.to_bits() {
                return Err(Error::Validation(format!(
                    "metric `{}` is {} but items give {again}",
                    m.name, m.value
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("eval report", e))
    }
}
