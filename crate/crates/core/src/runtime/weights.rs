//! Checkpoint loading for GPT-NeoX tensors.
//!
//! A checkpoint directory holds `config.json`, one or more `*.safetensors`
//! files and (for [`crate::runtime::GptNeoX::load`]) a `tokenizer.json`.
//! Tensor names are accepted with or without the `gpt_neox.` prefix.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::runtime::ModelConfig;
use crate::tensor_file::TensorFile;

#[derive(Debug, Clone)]
pub struct Linear {
    /// `out x in`, as stored in the checkpoint.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub input_ln: LayerNormParams,
    pub post_attention_ln: LayerNormParams,
    /// Fused query/key/value projection, interleaved per head.
    pub qkv: Linear,
    pub attn_out: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    /// `|V| x d`
    pub embedding: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_ln: LayerNormParams,
    /// `|V| x d`; row `i` is the output direction of token `i`.
    pub unembedding: Array2<f32>,
}

struct TensorIndex {
    files: Vec<TensorFile>,
    location: HashMap<String, usize>,
}

impl TensorIndex {
    fn open(paths: &[PathBuf]) -> Result<Self> {
        let mut files = Vec::new();
        let mut location = HashMap::new();
        for path in paths {
            let file = TensorFile::open(path)?;
            for name in file.names() {
                location.insert(name, files.len());
            }
            files.push(file);
        }
        Ok(TensorIndex { files, location })
    }

    fn resolve(&self, name: &str) -> Option<(&TensorFile, String)> {
        let prefixed = format!("gpt_neox.{name}");
        [prefixed, name.to_string()]
            .into_iter()
            .find_map(|n| self.location.get(&n).map(|&i| (&self.files[i], n)))
    }

    fn load(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let (file, full) = self
            .resolve(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let found = file.shape(&full)?;
        if found != shape {
            return Err(Error::ShapeMismatch {
                name: full,
                expected: shape.to_vec(),
                found,
            });
        }
        let tensor = file.f32(&full)?;
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint tensor `{full}`")));
        }
        Ok(tensor.data)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let data = self.load(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        Ok(Array1::from(self.load(name, &[len])?))
    }

    fn linear(&self, prefix: &str, out: usize, inp: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), out, inp)?,
            bias: self.vector(&format!("{prefix}.bias"), out)?,
        })
    }

    fn layer_norm(&self, prefix: &str, d: usize) -> Result<LayerNormParams> {
        Ok(LayerNormParams {
            gamma: self.vector(&format!("{prefix}.weight"), d)?,
            beta: self.vector(&format!("{prefix}.bias"), d)?,
        })
    }
}

fn tensor_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "safetensors"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .safetensors files"),
        ));
    }
    Ok(paths)
}

/// Loads `config.json` and all tensor files from a checkpoint directory,
/// validating every tensor shape against the config.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ModelWeights)> {
    let config = ModelConfig::from_file(&dir.join("config.json"))?;
    let index = TensorIndex::open(&tensor_files(dir)?)?;
    let weights = load_weights(&config, &index)?;
    Ok((config, weights))
}

fn load_weights(config: &ModelConfig, index: &TensorIndex) -> Result<ModelWeights> {
    let d = config.hidden_dim;
    let v = config.vocab_size;
    let ff = config.intermediate_size;
    let embedding = index.matrix("embed_in.weight", v, d)?;
    let layers = (0..config.n_layers)
        .map(|i| {
            let p = format!("layers.{i}");
            Ok(LayerWeights {
                input_ln: index.layer_norm(&format!("{p}.input_layernorm"), d)?,
                post_attention_ln: index.layer_norm(&format!("{p}.post_attention_layernorm"), d)?,
                qkv: index.linear(&format!("{p}.attention.query_key_value"), 3 * d, d)?,
                attn_out: index.linear(&format!("{p}.attention.dense"), d, d)?,
                mlp_in: index.linear(&format!("{p}.mlp.dense_h_to_4h"), ff, d)?,
                mlp_out: index.linear(&format!("{p}.mlp.dense_4h_to_h"), d, ff)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_ln = index.layer_norm("final_layer_norm", d)?;
    let unembedding = if config.tie_embeddings && index.resolve("embed_out.weight").is_none() {
        embedding.clone()
    } else {
        index.matrix("embed_out.weight", v, d)?
    };
    Ok(ModelWeights {
        embedding,
        layers,
        final_ln,
        unembedding,
    })
}
