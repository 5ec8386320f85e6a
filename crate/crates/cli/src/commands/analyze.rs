use std::path::PathBuf;

use clap::ValueEnum;
use rayon::prelude::*;
use serde_json::{json, Value};
use transplant_core::analysis::{centroids, pca_displacement, token_shift, PcaProjection};
use transplant_core::concept::{cosine, steered_last_token_states, PromptTemplate};
use transplant_core::eval::{read_jsonl, read_lines, EmotionItem};
use transplant_core::{GptNeoX, LanguageModel, SteeringPlan};

use super::{load_model, steering_plan};
use crate::artifact::{kind_dir, provenance, write_json};
use crate::config::RunConfig;
use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Pca,
    TokenShift,
}

/// Last-token state at `layer` for each text, unsteered and steered.
pub fn paired_states(
    model: &GptNeoX,
    texts: &[String],
    plan: &SteeringPlan,
    layer: usize,
) -> CliResult<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
    let pick = |steering: Option<&SteeringPlan>| -> CliResult<Vec<Vec<f32>>> {
        let states = texts
            .par_iter()
            .map(|t| steered_last_token_states(model, t, steering).map(|mut s| s.swap_remove(layer - 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(states)
    };
    Ok((pick(None)?, pick(Some(plan))?))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance of each other label's centroid to the target label's unsteered
/// centroid, before and after steering.
pub fn centroid_distances(projection: &PcaProjection, target: &str) -> CliResult<Vec<Value>> {
    let before = centroids(projection, false);
    let after = centroids(projection, true);
    let anchor = before
        .iter()
        .find(|(l, _)| l == target)
        .map(|(_, c)| c.clone())
        .ok_or_else(|| usage(format!("no items labelled `{target}`")))?;
    Ok(before
        .iter()
        .zip(&after)
        .filter(|((l, _), _)| l != target)
        .map(|((label, b), (_, a))| {
            json!({ "label": label, "before": distance(b, &anchor), "after": distance(a, &anchor) })
        })
        .collect())
}

/// Mean cosine between each projected arrow and the projected net offset.
pub fn mean_arrow_cosine(projection: &PcaProjection, offset: &[f32]) -> f64 {
    let dir: Vec<f32> = projection.project_direction(offset).iter().map(|&x| x as f32).collect();
    let total: f64 = projection
        .points
        .iter()
        .map(|p| {
            let arrow: Vec<f32> = p.arrow.iter().map(|&x| x as f32).collect();
            cosine(&arrow, &dir)
        })
        .sum();
    total / projection.points.len() as f64
}

fn pca(model: &GptNeoX, plan: &SteeringPlan, config: &RunConfig) -> CliResult<Value> {
    let items: Vec<EmotionItem> = read_jsonl(config.require(&config.items, "items")?)?;
    let template: PromptTemplate = config.templates()?.get(&config.template_or("emotion"))?.clone();
    let texts: Vec<String> = items.iter().map(|i| template.render(&i.scenario)).collect();
    let labels: Vec<String> = items.iter().map(|i| i.label.clone()).collect();
    let injected: Vec<usize> = {
        let mut l: Vec<usize> = plan.vectors().iter().flat_map(|v| v.layers.keys().copied()).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let layer = match config.capture_layer {
        Some(k) => k,
        None => *injected.first().ok_or_else(|| usage("steering plan has no layers"))?,
    };
    if layer == 0 || layer > model.n_layers() {
        return Err(usage(format!("--capture-layer {layer} outside 1..={}", model.n_layers())));
    }
    let (before, after) = paired_states(model, &texts, plan, layer)?;
    let projection = pca_displacement(
        &before,
        &after,
        &labels,
        config.components.unwrap_or(2),
        config.fit.unwrap_or_default(),
    )?;
    let resolved = plan.resolve(model.n_layers(), model.hidden_dim())?;
    let arrow_cosine = resolved.offset(layer - 1).map(|o| mean_arrow_cosine(&projection, o));
    let distances = match &config.target {
        Some(t) => Some(centroid_distances(&projection, t)?),
        None => None,
    };
    let named = |c: Vec<(String, Vec<f64>)>| -> Value {
        c.into_iter().map(|(l, x)| json!({ "label": l, "centroid": x })).collect()
    };
    Ok(json!({
        "kind": "pca",
        "capture_layer": layer,
        "injected_layers": injected,
        "mean_arrow_cosine": arrow_cosine,
        "centroids_before": named(centroids(&projection, false)),
        "centroids_after": named(centroids(&projection, true)),
        "centroid_distances": distances,
        "projection": projection,
    }))
}

fn shift(model: &GptNeoX, plan: &SteeringPlan, config: &RunConfig) -> CliResult<Value> {
    let sentences = read_lines(config.require(&config.items, "items")?)?;
    let template = config.templates()?.get(&config.template_or("plain"))?.clone();
    let texts: Vec<String> = sentences.iter().map(|s| template.render(s)).collect();
    let layer = config.capture_layer.unwrap_or(model.n_layers());
    let (before, after) = paired_states(model, &texts, plan, layer)?;
    let report = token_shift(model, &before, &after, config.k.unwrap_or(10))?;
    Ok(json!({ "kind": "token_shift", "capture_layer": layer, "report": report }))
}

pub fn run(kind: AnalysisKind, config: &RunConfig) -> CliResult<PathBuf> {
    let model = load_model(config.require(&config.tgt_model, "tgt-model")?)?;
    let plan = steering_plan(&model, config)?.ok_or_else(|| usage("analysis needs at least one --vector"))?;
    let (stem, mut value) = match kind {
        AnalysisKind::Pca => ("pca", pca(&model, &plan, config)?),
        AnalysisKind::TokenShift => ("token-shift", shift(&model, &plan, config)?),
    };
    value["provenance"] = provenance("analyze", config)?;
    write_json(&kind_dir(config, "analysis")?, stem, &value)
}
