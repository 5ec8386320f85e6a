use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transplant_core::concept::store::{map_metadata, save_maps};
use transplant_core::concept::{collect_paired_activations, fit_linear_map, LayerCorrespondence, DEFAULT_CUTOFF};
use transplant_core::eval::read_lines;
use transplant_core::LanguageModel;

use super::load_model;
use crate::artifact::{content_hash, kind_dir, provenance, save_addressed_tensors, unix_now};
use crate::config::RunConfig;
use crate::error::{usage, CliResult};

/// At most `n` lines; a seeded sample when the corpus is larger.
pub fn sample_corpus(mut lines: Vec<String>, n: usize, seed: u64) -> Vec<String> {
    if lines.len() > n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        lines.shuffle(&mut rng);
        lines.truncate(n);
    }
    lines
}

pub fn run(config: &RunConfig) -> CliResult<PathBuf> {
    let corpus_path = config.require(&config.corpus, "corpus")?;
    let lines = read_lines(corpus_path)?;
    if lines.is_empty() {
        return Err(usage(format!("corpus {} has no lines", corpus_path.display())));
    }
    let texts = sample_corpus(lines, config.n_samples.unwrap_or(2000), config.seed());
    let src = load_model(config.require(&config.src_model, "src-model")?)?;
    let tgt = load_model(config.require(&config.tgt_model, "tgt-model")?)?;
    let mut corr = LayerCorrespondence::proportional(src.n_layers(), tgt.n_layers());
    if let Some(layers) = config.layer_list()? {
        corr = corr.restrict(&layers)?;
    }
    let corpus_id = content_hash(corpus_path)?;
    log::info!("collecting activations for {} texts", texts.len());
    let corpus = collect_paired_activations(&src, &tgt, &texts, &corr, &corpus_id)?;
    let maps = fit_linear_map(&corpus, config.cutoff.unwrap_or(DEFAULT_CUTOFF))?;
    for (k, m) in &maps.layers {
        eprintln!(
            "layer {k} <- {}: residual {:.6e} (relative {:.6e}), rank {}",
            m.source_layer, m.residual, m.relative_residual, m.rank
        );
    }
    let mut meta = map_metadata(&maps);
    meta.created = unix_now();
    meta.provenance = Some(provenance("fit-map", config)?);
    let dir = kind_dir(config, "maps")?;
    let stem = format!("{}-to-{}", src.model_id(), tgt.model_id());
    save_addressed_tensors(&dir, &stem, |p| save_maps(p, &maps, Some(meta)))
}
