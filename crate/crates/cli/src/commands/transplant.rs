use transplant_core::concept::TemplateSet;
use transplant_core::{DecodeConfig, LanguageModel};

use super::{load_model, steering_plan};
use crate::config::RunConfig;
use crate::error::{usage, CliResult};

/// Greedy continuation of the rendered prompt under the configured steering.
pub fn run(config: &RunConfig) -> CliResult<String> {
    let prompt = config.require(&config.prompt, "prompt")?;
    if config.vectors.is_empty() {
        return Err(usage("transplant needs at least one --vector"));
    }
    let model = load_model(config.require(&config.tgt_model, "tgt-model")?)?;
    let templates: TemplateSet = config.templates()?;
    let text = templates.get(&config.template_or("plain"))?.render(prompt);
    let plan = steering_plan(&model, config)?;
    let ids = model.codec().encode(&text)?;
    let decode = DecodeConfig::greedy(config.max_new_tokens.unwrap_or(32));
    let generated = model.generate(&ids, &decode, plan.as_ref())?;
    Ok(model.codec().decode_lossy(&generated)?)
}
