mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transplant_core::analysis::PcaFit;
use transplant_core::eval::ChoiceScoring;

use commands::{AnalysisKind, TaskKind};
use config::{RunConfig, VectorSpec};
use error::CliResult;

/// Refine concept vectors, map them between models and steer generation.
#[derive(Debug, Parser)]
#[command(name = "transplant", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Checkpoint directory of the model vectors are refined from.
    #[arg(long, global = true)]
    src_model: Option<PathBuf>,
    /// Checkpoint directory of the model being steered or evaluated.
    #[arg(long, global = true)]
    tgt_model: Option<PathBuf>,
    /// Default steering strength.
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f32>,
    /// Strength search grid, `lo:hi:step`.
    #[arg(long, global = true)]
    alpha_grid: Option<String>,
    /// `all`, `k`, `a-b` or a comma list of those.
    #[arg(long, global = true)]
    layers: Option<String>,
    /// Prompt template id.
    #[arg(long, global = true)]
    template: Option<String>,
    /// JSON file of extra templates, replacing the built-in set.
    #[arg(long, global = true)]
    templates_file: Option<PathBuf>,
    /// JSON lines of `{"positive", "negative"}`.
    #[arg(long, global = true)]
    pairs: Option<PathBuf>,
    /// Artifact root (default `artifacts`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Toxicity service taking `{"text"}` and answering `{"toxic_probability"}`.
    #[arg(long, global = true)]
    classifier_url: Option<String>,
    /// Steering vector file, optionally `PATH@ALPHA`. Repeatable.
    #[arg(long = "vector", global = true)]
    vectors: Vec<VectorSpec>,
    /// Map file from `fit-map`. Repeatable.
    #[arg(long = "maps", global = true)]
    maps: Vec<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a pair file from labelled scenarios.
    MakePairs {
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        concept: Option<String>,
        /// Number of pairs (default 200).
        #[arg(long = "n")]
        n_pairs: Option<usize>,
    },
    /// Refine a concept vector from a pair file.
    Refine {
        #[arg(long)]
        concept: Option<String>,
        /// Use only the first N pairs.
        #[arg(long = "n")]
        n_pairs: Option<usize>,
    },
    /// Fit per-layer linear maps from the source to the target hidden space.
    FitMap {
        /// Text file, one sentence per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Sentences sampled from the corpus (default 2000).
        #[arg(long)]
        n_samples: Option<usize>,
        /// Relative singular value cutoff.
        #[arg(long)]
        cutoff: Option<f64>,
    },
    /// Generate from the target model with the given vectors injected.
    Transplant {
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Evaluate the target model, optionally steered.
    Eval {
        #[arg(value_enum)]
        kind: TaskKind,
        /// Task items (JSON lines; plain lines for perplexity).
        #[arg(long)]
        items: Option<PathBuf>,
        /// Items used for the strength search instead of `--items`.
        #[arg(long)]
        grid_items: Option<PathBuf>,
        /// Emotion few-shot examples.
        #[arg(long)]
        fewshot: Option<PathBuf>,
        /// Emotion whose accuracy on the other scenarios is measured.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        /// Word list for the offline toxicity classifier.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_parser = parse_scoring)]
        scoring: Option<ChoiceScoring>,
    },
    /// Geometry and vocabulary diagnostics of steered states.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
        /// Labelled scenarios (pca) or sentences (token-shift).
        #[arg(long)]
        items: Option<PathBuf>,
        /// Layer whose states are compared.
        #[arg(long)]
        capture_layer: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long, value_parser = parse_fit)]
        fit: Option<PcaFit>,
        /// Label whose cluster the others are measured against.
        #[arg(long)]
        target: Option<String>,
        /// Tokens listed per sentence.
        #[arg(long)]
        k: Option<usize>,
    },
}

fn parse_scoring(s: &str) -> Result<ChoiceScoring, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected mean or sum, got `{s}`"))
}

fn parse_fit(s: &str) -> Result<PcaFit, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected joint, before or after, got `{s}`"))
}

impl Cli {
    /// Config file (if any) overlaid with every flag that was given.
    fn resolve(&self) -> CliResult<RunConfig> {
        let c = &self.common;
        let mut flags = RunConfig {
            src_model: c.src_model.clone(),
            tgt_model: c.tgt_model.clone(),
            alpha: c.alpha,
            alpha_grid: c.alpha_grid.clone(),
            layers: c.layers.clone(),
            template: c.template.clone(),
            templates_file: c.templates_file.clone(),
            pairs: c.pairs.clone(),
            out: c.out.clone(),
            seed: c.seed,
            classifier_url: c.classifier_url.clone(),
            vectors: c.vectors.clone(),
            maps: c.maps.clone(),
            ..Default::default()
        };
        match &self.command {
            Command::MakePairs { scenarios, concept, n_pairs } => {
                flags.scenarios = scenarios.clone();
                flags.concept = concept.clone();
                flags.n_pairs = *n_pairs;
            }
            Command::Refine { concept, n_pairs } => {
                flags.concept = concept.clone();
                flags.n_pairs = *n_pairs;
            }
            Command::FitMap { corpus, n_samples, cutoff } => {
                flags.corpus = corpus.clone();
                flags.n_samples = *n_samples;
                flags.cutoff = *cutoff;
            }
            Command::Transplant { prompt, max_new_tokens } => {
                flags.prompt = prompt.clone();
                flags.max_new_tokens = *max_new_tokens;
            }
            Command::Eval {
                items,
                grid_items,
                fewshot,
                target,
                max_new_tokens,
                lexicon,
                scoring,
                ..
            } => {
                flags.items = items.clone();
                flags.grid_items = grid_items.clone();
                flags.fewshot = fewshot.clone();
                flags.target = target.clone();
                flags.max_new_tokens = *max_new_tokens;
                flags.lexicon = lexicon.clone();
                flags.scoring = *scoring;
            }
            Command::Analyze {
                items,
                capture_layer,
                components,
                fit,
                target,
                k,
                ..
            } => {
                flags.items = items.clone();
                flags.capture_layer = *capture_layer;
                flags.components = *components;
                flags.fit = *fit;
                flags.target = target.clone();
                flags.k = *k;
            }
        }
        let base = match &c.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let config = base.overlay(&flags)?;
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = cli.resolve()?;
    match &cli.command {
        Command::MakePairs { .. } => println!("{}", commands::make_pairs(&config)?.display()),
        Command::Refine { .. } => println!("{}", commands::refine(&config)?.display()),
        Command::FitMap { .. } => println!("{}", commands::fit_map(&config)?.display()),
        Command::Transplant { .. } => println!("{}", commands::transplant(&config)?),
        Command::Eval { kind, .. } => println!("{}", commands::eval(*kind, &config)?.display()),
        Command::Analyze { kind, .. } => println!("{}", commands::analyze(*kind, &config)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
