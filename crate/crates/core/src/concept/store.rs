//! On-disk form of concept vectors and map sets: a tensor file plus a JSON
//! sidecar next to it (`name.safetensors` + `name.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptVector, LayerMap, LinearMapSet};
use crate::error::{Error, Result};
use crate::tensor_file::{write_f32_tensors, TensorFile};

pub const FORMAT_VERSION: u32 = 1;

pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMetadata {
    pub version: u32,
    pub concept: Option<String>,
    pub source_model: String,
    pub n_pairs: usize,
    pub template_id: String,
    pub dim: usize,
    pub layers: Vec<usize>,
    /// Unix seconds; informational only.
    #[serde(default)]
    pub created: Option<u64>,
    /// Free-form provenance (resolved config, input hashes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLayerMetadata {
    pub target_layer: usize,
    pub source_layer: usize,
    pub residual: f64,
    pub relative_residual: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub version: u32,
    pub source_model: String,
    pub target_model: String,
    pub source_dim: usize,
    pub target_dim: usize,
    pub cutoff: f64,
    pub corpus_id: String,
    pub n_samples: usize,
    pub layers: Vec<MapLayerMetadata>,
    #[serde(default)]
    pub created: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("metadata serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

pub fn vector_metadata(vector: &ConceptVector) -> VectorMetadata {
    VectorMetadata {
        version: FORMAT_VERSION,
        concept: Some(vector.concept.clone()),
        source_model: vector.source_model.clone(),
        n_pairs: vector.n_pairs,
        template_id: vector.template_id.clone(),
        dim: vector.dim(),
        layers: vector.layers.keys().copied().collect(),
        created: None,
        provenance: None,
    }
}

/// Writes the tensor file at `path` and its sidecar. The tensor file depends
/// only on the vector, so identical vectors give identical bytes.
pub fn save_vector(path: &Path, vector: &ConceptVector, meta: Option<VectorMetadata>) -> Result<()> {
    vector.validate()?;
    let meta = meta.unwrap_or_else(|| vector_metadata(vector));
    let tensors: Vec<(String, Vec<usize>, &[f32])> = vector
        .layers
        .iter()
        .map(|(k, v)| (format!("layer.{k}"), vec![v.len()], v.as_slice()))
        .collect();
    write_f32_tensors(path, &tensors, None)?;
    write_json(&sidecar_path(path), &meta)
}

pub fn load_vector(path: &Path) -> Result<ConceptVector> {
    load_vector_with_metadata(path).map(|(v, _)| v)
}

pub fn load_vector_with_metadata(path: &Path) -> Result<(ConceptVector, VectorMetadata)> {
    let meta: VectorMetadata = read_json(&sidecar_path(path))?;
    check_version(meta.version)?;
    let concept = meta
        .concept
        .clone()
        .filter(|c| !c.trim().is_empty())
        .ok_or_else(|| Error::Validation(format!("{} has no concept label", path.display())))?;
    let file = TensorFile::open(path)?;
    let mut layers = BTreeMap::new();
    for &k in &meta.layers {
        let t = file.f32(&format!("layer.{k}"))?;
        if t.shape != [meta.dim] {
            return Err(Error::ShapeMismatch {
                name: format!("layer.{k}"),
                expected: vec![meta.dim],
                found: t.shape,
            });
        }
        layers.insert(k, t.data);
    }
    if file.names().len() != meta.layers.len() {
        return Err(Error::Validation(format!(
            "{} holds {} tensors but the sidecar lists {} layers",
            path.display(),
            file.names().len(),
            meta.layers.len()
        )));
    }
    let vector = ConceptVector {
        concept,
        source_model: meta.source_model.clone(),
        template_id: meta.template_id.clone(),
        n_pairs: meta.n_pairs,
        layers,
    };
    vector.validate()?;
    Ok((vector, meta))
}

pub fn map_metadata(maps: &LinearMapSet) -> MapMetadata {
    MapMetadata {
        version: FORMAT_VERSION,
        source_model: maps.source_model.clone(),
        target_model: maps.target_model.clone(),
        source_dim: maps.source_dim,
        target_dim: maps.target_dim,
        cutoff: maps.cutoff,
        corpus_id: maps.corpus_id.clone(),
        n_samples: maps.n_samples,
        layers: maps
            .layers
            .iter()
            .map(|(&t, m)| MapLayerMetadata {
                target_layer: t,
                source_layer: m.source_layer,
                residual: m.residual,
                relative_residual: m.relative_residual,
                rank: m.rank,
            })
            .collect(),
        created: None,
        provenance: None,
    }
}

pub fn save_maps(path: &Path, maps: &LinearMapSet, meta: Option<MapMetadata>) -> Result<()> {
    maps.validate()?;
    let meta = meta.unwrap_or_else(|| map_metadata(maps));
    let owned: Vec<(String, Vec<f32>)> = maps
        .layers
        .iter()
        .map(|(t, m)| (format!("map.{t}"), m.matrix.iter().copied().collect()))
        .collect();
    let tensors: Vec<(String, Vec<usize>, &[f32])> = owned
        .iter()
        .map(|(name, data)| (name.clone(), vec![maps.source_dim, maps.target_dim], data.as_slice()))
        .collect();
    write_f32_tensors(path, &tensors, None)?;
    write_json(&sidecar_path(path), &meta)
}

pub fn load_maps(path: &Path) -> Result<LinearMapSet> {
    load_maps_with_metadata(path).map(|(m, _)| m)
}

pub fn load_maps_with_metadata(path: &Path) -> Result<(LinearMapSet, MapMetadata)> {
    let meta: MapMetadata = read_json(&sidecar_path(path))?;
    check_version(meta.version)?;
    let file = TensorFile::open(path)?;
    let mut layers = BTreeMap::new();
    for l in &meta.layers {
        let name = format!("map.{}", l.target_layer);
        let t = file.f32(&name)?;
        let expected = vec![meta.source_dim, meta.target_dim];
        if t.shape != expected {
            return Err(Error::ShapeMismatch {
                name,
                expected,
                found: t.shape,
            });
        }
        let matrix = Array2::from_shape_vec((meta.source_dim, meta.target_dim), t.data)
            .expect("shape checked");
        layers.insert(
            l.target_layer,
            LayerMap {
                source_layer: l.source_layer,
                matrix,
                residual: l.residual,
                relative_residual: l.relative_residual,
                rank: l.rank,
            },
        );
    }
    let maps = LinearMapSet {
        source_model: meta.source_model.clone(),
        target_model: meta.target_model.clone(),
        source_dim: meta.source_dim,
        target_dim: meta.target_dim,
        cutoff: meta.cutoff,
        corpus_id: meta.corpus_id.clone(),
        n_samples: meta.n_samples,
        layers,
    };
    maps.validate()?;
    Ok((maps, meta))
}
