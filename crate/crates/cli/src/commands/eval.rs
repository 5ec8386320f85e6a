use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use transplant_core::eval::{
    alpha_grid_search, completion_eval, emotion_eval, few_shot_prefix, mc_eval, perplexity, read_jsonl,
    read_lines, Classifier, CompletionPrompt, Direction, EmotionEvalOptions, EmotionItem, EmotionTask,
    EvalReport, HttpClassifier, LexiconClassifier, McItem, McTask,
};
use transplant_core::concept::PromptTemplate;
use transplant_core::{DecodeConfig, GptNeoX, LanguageModel, SteeringPlan};

use super::{load_model, steering_plan};
use crate::artifact::{kind_dir, provenance, write_json};
use crate::config::RunConfig;
use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    Emotion,
    Mc,
    Perplexity,
    Completion,
}

impl TaskKind {
    fn name(self) -> &'static str {
        match self {
            TaskKind::Emotion => "emotion",
            TaskKind::Mc => "mc",
            TaskKind::Perplexity => "perplexity",
            TaskKind::Completion => "completion",
        }
    }
}

enum Task {
    Emotion {
        task: EmotionTask,
        target: String,
        options: EmotionEvalOptions,
    },
    Mc(McTask),
    Perplexity(Vec<String>),
    Completion {
        prompts: Vec<CompletionPrompt>,
        template: PromptTemplate,
        classifier: Box<dyn Classifier>,
        decode: DecodeConfig,
    },
}

fn classifier(config: &RunConfig) -> CliResult<Box<dyn Classifier>> {
    if let Some(url) = &config.classifier_url {
        return Ok(Box::new(HttpClassifier::new(url.clone(), Duration::from_secs(30), 2)));
    }
    if let Some(path) = &config.lexicon {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read lexicon {}: {e}", path.display())))?;
        return Ok(Box::new(LexiconClassifier::from_text(&text)));
    }
    Err(usage("completion eval needs --classifier-url or a lexicon file"))
}

impl Task {
    fn build(kind: TaskKind, model: &GptNeoX, config: &RunConfig, items: &Path) -> CliResult<Self> {
        let templates = config.templates()?;
        Ok(match kind {
            TaskKind::Emotion => {
                let template = templates.get(&config.template_or("emotion"))?.clone();
                let shots: Vec<EmotionItem> = match &config.fewshot {
                    Some(p) => read_jsonl(p)?,
                    None => Vec::new(),
                };
                let prefix = few_shot_prefix(&template, &shots);
                let task = EmotionTask::new(
                    model.codec(),
                    EmotionTask::items_from_jsonl(items)?,
                    prefix,
                    template,
                    &BTreeMap::new(),
                )?;
                Task::Emotion {
                    task,
                    target: config.require(&config.target, "target")?.clone(),
                    options: EmotionEvalOptions {
                        max_new_tokens: config.max_new_tokens.unwrap_or(4),
                    },
                }
            }
            TaskKind::Mc => {
                let template = templates.get(&config.template_or("mc"))?.clone();
                let mut task = McTask::new(read_jsonl::<McItem>(items)?, template)?;
                if let Some(s) = config.scoring {
                    task.scoring = s;
                }
                Task::Mc(task)
            }
            TaskKind::Perplexity => Task::Perplexity(read_lines(items)?),
            TaskKind::Completion => Task::Completion {
                prompts: read_jsonl(items)?,
                template: templates.get(&config.template_or("completion"))?.clone(),
                classifier: classifier(config)?,
                decode: DecodeConfig::greedy(config.max_new_tokens.unwrap_or(32)),
            },
        })
    }

    fn evaluate(&self, model: &GptNeoX, steering: Option<&SteeringPlan>) -> CliResult<EvalReport> {
        Ok(match self {
            Task::Emotion { task, target, options } => emotion_eval(model, task, target, steering, *options)?,
            Task::Mc(task) => mc_eval(model, task, steering)?,
            Task::Perplexity(corpus) => perplexity(model, corpus, steering)?,
            Task::Completion {
                prompts,
                template,
                classifier,
                decode,
            } => completion_eval(model, prompts, template, steering, classifier.as_ref(), decode)?,
        })
    }

    /// Metric the strength search optimizes.
    fn objective(&self) -> (&'static str, Direction) {
        match self {
            Task::Emotion { .. } => ("token_acc", Direction::Maximize),
            Task::Mc(_) => ("accuracy", Direction::Maximize),
            Task::Perplexity(_) => ("perplexity", Direction::Minimize),
            Task::Completion { .. } => ("toxic_fraction", Direction::Minimize),
        }
    }
}

/// Runs one evaluation, with a strength search first when a grid is given,
/// and writes the report under `reports/`.
pub fn run(kind: TaskKind, config: &RunConfig) -> CliResult<PathBuf> {
    let items = config.require(&config.items, "items")?;
    let model = load_model(config.require(&config.tgt_model, "tgt-model")?)?;
    let plan = steering_plan(&model, config)?;
    let task = Task::build(kind, &model, config, items)?;
    let grid = config.grid()?;
    let mut report = match (&plan, grid) {
        (None, Some(_)) => return Err(usage("--alpha-grid needs at least one --vector")),
        (Some(plan), Some(grid)) => {
            let search = match &config.grid_items {
                Some(p) => Task::build(kind, &model, config, p)?,
                None => Task::build(kind, &model, config, items)?,
            };
            let (metric, direction) = search.objective();
            let result = alpha_grid_search(&grid, direction, |alpha| {
                let r = search
                    .evaluate(&model, Some(&plan.with_alpha(alpha)))
                    .map_err(|e| match e {
                        crate::error::CliError::Core(e) => e,
                        crate::error::CliError::Usage(m) => transplant_core::Error::InvalidInput(m),
                    })?;
                let value = r.metric(metric).expect("task reports its objective");
                log::info!("alpha {alpha}: {metric} = {value}");
                Ok(value)
            })?;
            let mut report = task.evaluate(&model, Some(&plan.with_alpha(result.best_alpha)))?;
            report.extra.insert("objective".into(), metric.into());
            report.extra.insert("best_alpha".into(), result.best_alpha.into());
            report
                .extra
                .insert("grid".into(), serde_json::to_value(&result).expect("grid result serializes"));
            report
        }
        (plan, None) => task.evaluate(&model, plan.as_ref())?,
    };
    report.config = provenance("eval", config)?;
    for m in &report.metrics {
        eprintln!("{} = {}", m.name, m.value);
    }
    let stem = match &task {
        Task::Emotion { target, .. } => format!("emotion-{target}"),
        _ => kind.name().to_string(),
    };
    let value = serde_json::to_value(&report).expect("report serializes");
    write_json(&kind_dir(config, "reports")?, &stem, &value)
}
