use std::path::PathBuf;

use transplant_core::concept::store::{save_vector, vector_metadata};
use transplant_core::concept::{refine_concept, ExamplePairSet};

use super::load_model;
use crate::artifact::{kind_dir, provenance, save_addressed_tensors, unix_now};
use crate::config::RunConfig;
use crate::error::CliResult;

pub fn run(config: &RunConfig) -> CliResult<PathBuf> {
    let pairs_path = config.require(&config.pairs, "pairs")?;
    let concept = config.require(&config.concept, "concept")?;
    let template_id = config.template_or("plain");
    let template = config.templates()?.get(&template_id)?.clone();
    let mut pairs = ExamplePairSet::from_jsonl(pairs_path, concept.as_str(), template_id.as_str())?;
    if let Some(n) = config.n_pairs {
        pairs = pairs.truncated(n)?;
    }
    let model = load_model(config.require(&config.src_model, "src-model")?)?;
    log::info!("refining `{concept}` from {} pairs", pairs.len());
    let vector = refine_concept(&model, &pairs, &template)?;

    let mut meta = vector_metadata(&vector);
    meta.created = unix_now();
    meta.provenance = Some(provenance("refine", config)?);
    let dir = kind_dir(config, "vectors")?;
    save_addressed_tensors(&dir, concept, |p| save_vector(p, &vector, Some(meta)))
}
