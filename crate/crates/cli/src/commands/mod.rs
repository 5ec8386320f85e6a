mod analyze;
mod eval;
mod fit_map;
mod make_pairs;
mod refine;
mod transplant;

use std::path::Path;

use transplant_core::concept::{load_maps, load_vector, reformulate, ConceptVector, LinearMapSet};
use transplant_core::{GptNeoX, LanguageModel, SteeringPlan};

pub use analyze::{run as analyze, AnalysisKind};
pub use eval::{run as eval, TaskKind};
pub use fit_map::run as fit_map;
pub use make_pairs::run as make_pairs;
pub use refine::run as refine;
pub use transplant::run as transplant;

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

pub(crate) fn load_model(path: &Path) -> CliResult<GptNeoX> {
    log::info!("loading model from {}", path.display());
    Ok(GptNeoX::load(path)?)
}

/// Vector expressed in `model`'s space: as stored when it came from the same
/// model, otherwise reformulated through a matching map from `maps`.
pub(crate) fn vector_for(
    model: &dyn LanguageModel,
    vector: ConceptVector,
    maps: &[LinearMapSet],
) -> CliResult<ConceptVector> {
    let target = model.model_id();
    if vector.source_model == target {
        return Ok(vector);
    }
    let map = maps
        .iter()
        .find(|m| m.source_model == vector.source_model && m.target_model == target)
        .ok_or_else(|| {
            usage(format!(
                "vector `{}` comes from `{}` but the target is `{target}` and no map between them was given; \
                 run `transplant fit-map` for that pair and pass the result with --maps",
                vector.concept, vector.source_model
            ))
        })?;
    Ok(reformulate(&vector, map)?)
}

/// Steering plan over every configured vector, each at its own strength
/// (falling back to `--alpha`). `None` when no vectors are configured.
pub(crate) fn steering_plan(model: &dyn LanguageModel, config: &RunConfig) -> CliResult<Option<SteeringPlan>> {
    if config.vectors.is_empty() {
        return Ok(None);
    }
    let maps = config
        .maps
        .iter()
        .map(|p| load_maps(p))
        .collect::<Result<Vec<_>, _>>()?;
    let layers = config.layer_list()?;
    let mut plan = SteeringPlan::new(config.alpha());
    for spec in &config.vectors {
        let v = vector_for(model, load_vector(&spec.path)?, &maps)?;
        let one = v.steering(layers.as_deref(), spec.alpha.unwrap_or(config.alpha()))?;
        for sv in one.vectors() {
            plan.add_vector(sv.label.clone(), sv.layers.clone(), spec.alpha)?;
        }
    }
    Ok(Some(plan))
}
