use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use transplant_core::analysis::PcaFit;
use transplant_core::concept::TemplateSet;
use transplant_core::eval::{AlphaGrid, ChoiceScoring};

use crate::error::{usage, CliResult};

/// One steering vector and its own strength. Written on the command line as
/// `PATH` or `PATH@ALPHA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorSpec {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f32>,
}

impl FromStr for VectorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('@') {
            Some((path, alpha)) if !path.is_empty() => Ok(VectorSpec {
                path: path.into(),
                alpha: Some(alpha.parse().map_err(|_| format!("bad strength `{alpha}` in `{s}`"))?),
            }),
            _ => Ok(VectorSpec { path: s.into(), alpha: None }),
        }
    }
}

/// Everything a command may read. A JSON config file fills it first, then
/// any flag given on the command line replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub src_model: Option<PathBuf>,
    pub tgt_model: Option<PathBuf>,
    pub template: Option<String>,
    pub templates_file: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub concept: Option<String>,
    pub n_pairs: Option<usize>,
    pub alpha: Option<f32>,
    pub alpha_grid: Option<String>,
    pub layers: Option<String>,
    pub vectors: Vec<VectorSpec>,
    pub maps: Vec<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub n_samples: Option<usize>,
    pub cutoff: Option<f64>,
    pub items: Option<PathBuf>,
    pub grid_items: Option<PathBuf>,
    pub fewshot: Option<PathBuf>,
    pub target: Option<String>,
    pub prompt: Option<String>,
    pub max_new_tokens: Option<usize>,
    pub lexicon: Option<PathBuf>,
    pub classifier_url: Option<String>,
    pub scoring: Option<ChoiceScoring>,
    pub components: Option<usize>,
    pub fit: Option<PcaFit>,
    pub capture_layer: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(&self, flags: &RunConfig) -> CliResult<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let top = serde_json::to_value(flags).expect("config serializes");
        if let (Value::Object(b), Value::Object(t)) = (&mut base, top) {
            for (k, v) in t {
                let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
                if !unset {
                    b.insert(k, v);
                }
            }
        }
        serde_json::from_value(base).map_err(|e| usage(format!("bad option: {e}")))
    }

    /// Checks that every referenced path exists.
    pub fn validate(&self) -> CliResult<()> {
        let single = [
            ("src-model", &self.src_model),
            ("tgt-model", &self.tgt_model),
            ("templates-file", &self.templates_file),
            ("pairs", &self.pairs),
            ("scenarios", &self.scenarios),
            ("corpus", &self.corpus),
            ("items", &self.items),
            ("grid-items", &self.grid_items),
            ("fewshot", &self.fewshot),
            ("lexicon", &self.lexicon),
        ];
        for (flag, path) in single {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(usage(format!("--{flag}: {} does not exist", p.display())));
                }
            }
        }
        for v in &self.vectors {
            if !v.path.exists() {
                return Err(usage(format!("--vector: {} does not exist", v.path.display())));
            }
        }
        for m in &self.maps {
            if !m.exists() {
                return Err(usage(format!("--maps: {} does not exist", m.display())));
            }
        }
        if let Some(g) = &self.alpha_grid {
            g.parse::<AlphaGrid>().map_err(|e| usage(format!("--alpha-grid: {e}")))?;
        }
        if let Some(l) = &self.layers {
            parse_layers(l)?;
        }
        Ok(())
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| usage(format!("missing --{flag}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn alpha(&self) -> f32 {
        self.alpha.unwrap_or(1.0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("artifacts"))
    }

    pub fn grid(&self) -> CliResult<Option<AlphaGrid>> {
        self.alpha_grid
            .as_deref()
            .map(|g| g.parse().map_err(|e| usage(format!("--alpha-grid: {e}"))))
            .transpose()
    }

    /// `None` means every layer.
    pub fn layer_list(&self) -> CliResult<Option<Vec<usize>>> {
        match &self.layers {
            None => Ok(None),
            Some(s) => parse_layers(s),
        }
    }

    pub fn templates(&self) -> CliResult<TemplateSet> {
        match &self.templates_file {
            Some(p) => Ok(TemplateSet::from_file(p)?),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn template_or(&self, default: &str) -> String {
        self.template.clone().unwrap_or_else(|| default.to_string())
    }
}

/// `all`, `7`, `2-5`, or a comma list of either (`1,3,6-8`). 1-based.
pub fn parse_layers(s: &str) -> CliResult<Option<Vec<usize>>> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    let bad = || usage(format!("--layers: cannot parse `{s}`"));
    let mut set = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let k: usize = part.parse().map_err(|_| bad())?;
                (k, k)
            }
        };
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        set.extend(lo..=hi);
    }
    Ok(Some(set.into_iter().collect()))
}
