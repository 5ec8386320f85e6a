use std::path::PathBuf;

use transplant_core::eval::{emotion_pairs, read_jsonl, EmotionItem};

use crate::artifact::{kind_dir, write_addressed};
use crate::config::RunConfig;
use crate::error::CliResult;

pub fn run(config: &RunConfig) -> CliResult<PathBuf> {
    let scenarios = config.require(&config.scenarios, "scenarios")?;
    let concept = config.require(&config.concept, "concept")?;
    let items: Vec<EmotionItem> = read_jsonl(scenarios)?;
    let set = emotion_pairs(&items, concept, config.n_pairs.unwrap_or(200), config.seed(), "")?;
    let dir = kind_dir(config, "pairs")?;
    write_addressed(&dir, concept, "jsonl", set.to_jsonl().as_bytes())
}
