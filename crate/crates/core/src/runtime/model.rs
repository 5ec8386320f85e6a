//! GPT-NeoX forward pass: rotary attention, optional parallel residual,
//! per-layer steering offsets and an append-only key/value cache.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::runtime::weights::{LayerNormParams, LayerWeights, Linear};
use crate::runtime::{
    load_checkpoint, Activation, Capture, DecodeConfig, DecodeStrategy, ForwardResult,
    HiddenStateRecord, LanguageModel, LogitsMode, ModelConfig, ModelWeights, ResolvedSteering,
    SteeringPlan, TextCodec, TokenSequence, Tokenizer,
};

/// Cosine/sine table for the rotary dimensions of every position.
#[derive(Debug, Clone)]
struct RopeTable {
    half: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl RopeTable {
    fn new(config: &ModelConfig) -> Self {
        let dims = config.rotary_dims();
        let half = dims / 2;
        let inv_freq: Vec<f32> = (0..half)
            .map(|i| 1.0 / config.rotary_base.powf((2 * i) as f32 / dims as f32))
            .collect();
        let mut cos = Vec::with_capacity(config.max_seq_len * half);
        let mut sin = Vec::with_capacity(config.max_seq_len * half);
        for pos in 0..config.max_seq_len {
            for f in &inv_freq {
                let angle = f64::from(pos as f32 * f);
                cos.push(angle.cos() as f32);
                sin.push(angle.sin() as f32);
            }
        }
        RopeTable { half, cos, sin }
    }

    /// Rotates the first `2 * half` entries of `x` (rotate-half convention).
    fn apply(&self, x: &mut [f32], pos: usize) {
        let cos = &self.cos[pos * self.half..(pos + 1) * self.half];
        let sin = &self.sin[pos * self.half..(pos + 1) * self.half];
        for i in 0..self.half {
            let a = x[i];
            let b = x[i + self.half];
            x[i] = a * cos[i] - b * sin[i];
            x[i + self.half] = b * cos[i] + a * sin[i];
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    /// Row-major `positions x d`; head `h` occupies columns `h*hd..(h+1)*hd`.
    keys: Vec<f32>,
    values: Vec<f32>,
}

/// Incremental decoding state for one sequence.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<LayerCache>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A loaded GPT-NeoX model. Cheap to clone; weights are shared.
#[derive(Clone)]
pub struct GptNeoX {
    id: String,
    config: ModelConfig,
    weights: Arc<ModelWeights>,
    tokenizer: Arc<Tokenizer>,
    rope: Arc<RopeTable>,
}

impl std::fmt::Debug for GptNeoX {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GptNeoX")
            .field("id", &self.id)
            .field("config", &self.config)
            .finish()
    }
}

fn layer_norm(x: &Array2<f32>, p: &LayerNormParams, eps: f32) -> Array2<f32> {
    let d = x.ncols();
    let mut out = Array2::zeros(x.raw_dim());
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|&v| {
                let c = f64::from(v) - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + f64::from(eps)).sqrt();
        for (j, o) in dst.iter_mut().enumerate() {
            let norm = ((f64::from(row[j]) - mean) * inv) as f32;
            *o = norm * p.gamma[j] + p.beta[j];
        }
    }
    out
}

fn linear(x: &ArrayView2<f32>, layer: &Linear) -> Array2<f32> {
    let mut out = x.dot(&layer.weight.t());
    out += &layer.bias;
    out
}

fn gelu(x: f32, kind: Activation) -> f32 {
    match kind {
        Activation::Gelu => 0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2)),
        Activation::GeluTanh => {
            let c = (2.0f32 / std::f32::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
    }
}

impl GptNeoX {
    /// Loads config, tensors and `tokenizer.json` from a checkpoint directory.
    /// The model id is the directory name.
    pub fn load(dir: &Path) -> Result<Self> {
        let (config, weights) = load_checkpoint(dir)?;
        let tokenizer = Tokenizer::from_file(&dir.join("tokenizer.json"))?;
        let id = dir
            .canonicalize()
            .unwrap_or_else(|_| dir.to_path_buf())
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Self::from_parts(id, config, weights, tokenizer)
    }

    pub fn from_parts(
        id: impl Into<String>,
        config: ModelConfig,
        weights: ModelWeights,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "tokenizer has {} ids but the model vocabulary is {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        Ok(GptNeoX {
            id: id.into(),
            rope: Arc::new(RopeTable::new(&config)),
            config,
            weights: Arc::new(weights),
            tokenizer: Arc::new(tokenizer),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            layers: vec![LayerCache::default(); self.config.n_layers],
            len: 0,
        }
    }

    fn attention(
        &self,
        layer: &LayerWeights,
        normed: &Array2<f32>,
        cache: &mut LayerCache,
        past: usize,
    ) -> Array2<f32> {
        let t = normed.nrows();
        let d = self.config.hidden_dim;
        let hd = self.config.head_dim;
        let heads = self.config.n_heads;
        let qkv = linear(&normed.view(), &layer.qkv);

        let mut queries = Array2::<f32>::zeros((t, d));
        cache.keys.reserve(t * d);
        cache.values.reserve(t * d);
        for i in 0..t {
            let row = qkv.row(i);
            let row = row.as_slice().expect("contiguous row");
            let mut k_row = vec![0.0f32; d];
            let mut v_row = vec![0.0f32; d];
            let mut q_row = queries.row_mut(i);
            let q_row = q_row.as_slice_mut().expect("contiguous row");
            for h in 0..heads {
                let base = h * 3 * hd;
                let q = &mut q_row[h * hd..(h + 1) * hd];
                q.copy_from_slice(&row[base..base + hd]);
                self.rope.apply(q, past + i);
                let k = &mut k_row[h * hd..(h + 1) * hd];
                k.copy_from_slice(&row[base + hd..base + 2 * hd]);
                self.rope.apply(k, past + i);
                v_row[h * hd..(h + 1) * hd].copy_from_slice(&row[base + 2 * hd..base + 3 * hd]);
            }
            cache.keys.extend_from_slice(&k_row);
            cache.values.extend_from_slice(&v_row);
        }

        let scale = 1.0 / (hd as f32).sqrt();
        let mut context = Array2::<f32>::zeros((t, d));
        let mut scores = Vec::with_capacity(past + t);
        for i in 0..t {
            let visible = past + i + 1;
            let q_row = queries.row(i);
            let q_row = q_row.as_slice().expect("contiguous row");
            let mut out_row = context.row_mut(i);
            let out_row = out_row.as_slice_mut().expect("contiguous row");
            for h in 0..heads {
                let q = &q_row[h * hd..(h + 1) * hd];
                scores.clear();
                let mut max = f32::NEG_INFINITY;
                for j in 0..visible {
                    let k = &cache.keys[j * d + h * hd..j * d + (h + 1) * hd];
                    let s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut total = 0.0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out = &mut out_row[h * hd..(h + 1) * hd];
                for (j, p) in scores.iter().enumerate() {
                    let w = p / total;
                    let v = &cache.values[j * d + h * hd..j * d + (h + 1) * hd];
                    out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
                }
            }
        }
        linear(&context.view(), &layer.attn_out)
    }

    fn mlp(&self, layer: &LayerWeights, normed: &Array2<f32>) -> Array2<f32> {
        let mut hidden = linear(&normed.view(), &layer.mlp_in);
        let act = self.config.activation;
        hidden.mapv_inplace(|x| gelu(x, act));
        linear(&hidden.view(), &layer.mlp_out)
    }

    /// Runs `tokens` as the continuation of whatever `cache` already holds.
    /// Captured positions and logits rows refer to the new tokens only.
    pub fn forward_cached(
        &self,
        cache: &mut KvCache,
        tokens: &[u32],
        steering: Option<&ResolvedSteering>,
        capture: &Capture,
    ) -> Result<ForwardResult> {
        let cfg = &self.config;
        let t = tokens.len();
        if t == 0 {
            return Err(Error::InvalidInput("forward needs at least one token".into()));
        }
        let past = cache.len;
        if past + t > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: past + t,
                max: cfg.max_seq_len,
            });
        }
        TokenSequence::new(tokens.to_vec()).validate(cfg.vocab_size, usize::MAX)?;

        let w = &self.weights;
        let mut hidden = Array2::<f32>::zeros((t, cfg.hidden_dim));
        for (i, &id) in tokens.iter().enumerate() {
            hidden.row_mut(i).assign(&w.embedding.row(id as usize));
        }

        let mut captured = Vec::new();
        let mut full = capture.full_states.then(Vec::new);
        for (li, layer) in w.layers.iter().enumerate() {
            let normed = layer_norm(&hidden, &layer.input_ln, cfg.layernorm_eps);
            let attn = self.attention(layer, &normed, &mut cache.layers[li], past);
            hidden = if cfg.parallel_residual {
                let post = layer_norm(&hidden, &layer.post_attention_ln, cfg.layernorm_eps);
                let mut out = self.mlp(layer, &post);
                out += &attn;
                out += &hidden;
                out
            } else {
                let mut mid = attn;
                mid += &hidden;
                let post = layer_norm(&mid, &layer.post_attention_ln, cfg.layernorm_eps);
                let mut out = self.mlp(layer, &post);
                out += &mid;
                out
            };
            if let Some(offset) = steering.and_then(|s| s.offset(li)) {
                for mut row in hidden.rows_mut() {
                    row.iter_mut().zip(offset).for_each(|(h, o)| *h += o);
                }
            }
            if hidden.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {}", li + 1)));
            }
            if capture.layers.contains(li + 1) {
                captured.push(HiddenStateRecord {
                    layer: li + 1,
                    position: past + t - 1,
                    vector: hidden.row(t - 1).to_vec(),
                });
            }
            if let Some(states) = full.as_mut() {
                states.push(hidden.clone());
            }
        }
        cache.len += t;

        let rows = match capture.logits {
            LogitsMode::All => hidden.view(),
            LogitsMode::Last => hidden.slice(s![t - 1.., ..]),
            LogitsMode::Skip => hidden.slice(s![0..0, ..]),
        };
        let logits = if rows.nrows() == 0 {
            Array2::zeros((0, cfg.vocab_size))
        } else {
            let normed = layer_norm(&rows.to_owned(), &w.final_ln, cfg.layernorm_eps);
            normed.dot(&w.unembedding.t())
        };
        Ok(ForwardResult {
            logits,
            captured,
            full_states: full,
        })
    }

    fn resolve(&self, steering: Option<&SteeringPlan>) -> Result<Option<ResolvedSteering>> {
        steering
            .map(|plan| plan.resolve(self.config.n_layers, self.config.hidden_dim))
            .transpose()
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Picks the next token for one decoding step.
pub(crate) struct Sampler {
    strategy: DecodeStrategy,
    rng: Option<ChaCha8Rng>,
}

impl Sampler {
    pub(crate) fn new(strategy: DecodeStrategy) -> Result<Self> {
        let rng = match strategy {
            DecodeStrategy::Greedy => None,
            DecodeStrategy::Temperature { temperature, seed } => {
                if !(temperature > 0.0) || !temperature.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "sampling temperature must be positive, got {temperature}"
                    )));
                }
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
        };
        Ok(Sampler { strategy, rng })
    }

    pub(crate) fn next(&mut self, logits: &[f32]) -> Result<u32> {
        match (self.strategy, self.rng.as_mut()) {
            (DecodeStrategy::Temperature { temperature, .. }, Some(rng)) => {
                let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let weights: Vec<f64> = logits
                    .iter()
                    .map(|&l| f64::from((l - max) / temperature).exp())
                    .collect();
                let dist = WeightedIndex::new(&weights)
                    .map_err(|e| Error::NonFinite(format!("sampling distribution: {e}")))?;
                Ok(dist.sample(rng) as u32)
            }
            _ => Ok(argmax(logits) as u32),
        }
    }
}

pub(crate) fn check_generation_budget(
    prompt_len: usize,
    cfg: &DecodeConfig,
    max_seq_len: usize,
) -> Result<()> {
    if prompt_len == 0 {
        return Err(Error::InvalidInput("generation needs a non-empty prompt".into()));
    }
    if cfg.max_new_tokens == 0 {
        return Err(Error::InvalidInput("max_new_tokens must be at least 1".into()));
    }
    if prompt_len + cfg.max_new_tokens > max_seq_len {
        return Err(Error::SequenceTooLong {
            len: prompt_len + cfg.max_new_tokens,
            max: max_seq_len,
        });
    }
    Ok(())
}

impl LanguageModel for GptNeoX {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn codec(&self) -> &dyn TextCodec {
        self.tokenizer.as_ref()
    }

    fn forward(
        &self,
        tokens: &TokenSequence,
        steering: Option<&SteeringPlan>,
        capture: &Capture,
    ) -> Result<ForwardResult> {
        let resolved = self.resolve(steering)?;
        let mut cache = self.new_cache();
        self.forward_cached(&mut cache, tokens, resolved.as_ref(), capture)
    }

    fn generate(
        &self,
        prompt: &TokenSequence,
        cfg: &DecodeConfig,
        steering: Option<&SteeringPlan>,
    ) -> Result<TokenSequence> {
        check_generation_budget(prompt.len(), cfg, self.config.max_seq_len)?;
        let resolved = self.resolve(steering)?;
        let mut sampler = Sampler::new(cfg.strategy)?;
        let mut cache = self.new_cache();
        let capture = Capture::last_logits();
        let mut result = self.forward_cached(&mut cache, prompt, resolved.as_ref(), &capture)?;
        let mut out = TokenSequence::default();
        loop {
            let logits = result.last_logits().expect("last row requested");
            let next = sampler.next(logits.as_slice().expect("contiguous logits"))?;
            out.push(next);
            if out.len() == cfg.max_new_tokens || cfg.stop_token == Some(next) {
                break;
            }
            result = self.forward_cached(&mut cache, &[next], resolved.as_ref(), &capture)?;
        }
        Ok(out)
    }

    fn unembed(&self, state: &[f32]) -> Result<Vec<f32>> {
        let d = self.config.hidden_dim;
        if state.len() != d {
            return Err(Error::DimensionMismatch {
                what: "state passed to the unembedding".into(),
                expected: d,
                found: state.len(),
            });
        }
        let row = Array2::from_shape_vec((1, d), state.to_vec()).expect("length checked");
        let normed = layer_norm(&row, &self.weights.final_ln, self.config.layernorm_eps);
        Ok(normed.dot(&self.weights.unembedding.t()).index_axis(Axis(0), 0).to_vec())
    }
}
