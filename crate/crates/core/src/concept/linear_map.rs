use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::concept::vector::encode_nonempty;
use crate::concept::ConceptVector;
use crate::error::{Error, Result};
use crate::runtime::{Capture, LanguageModel, LayerSelection};

pub const DEFAULT_CUTOFF: f64 = 1e-6;

/// Target layer -> source layer (both 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerCorrespondence(pub BTreeMap<usize, usize>);

impl LayerCorrespondence {
    /// Relative-depth matching: target block `j` (0-based) reads source block
    /// `round(j * (L_src - 1) / (L_tgt - 1))`.
    pub fn proportional(src_layers: usize, tgt_layers: usize) -> Self {
        let map = (0..tgt_layers)
            .map(|j| {
                let k = if tgt_layers == 1 {
                    src_layers - 1
                } else {
                    ((j * (src_layers - 1)) as f64 / (tgt_layers - 1) as f64).round() as usize
                };
                (j + 1, k + 1)
            })
            .collect();
        LayerCorrespondence(map)
    }

    pub fn identity(layers: usize) -> Self {
        LayerCorrespondence((1..=layers).map(|k| (k, k)).collect())
    }

    /// Keeps only the listed target layers.
    pub fn restrict(&self, targets: &[usize]) -> Result<Self> {
        targets
            .iter()
            .map(|t| {
                self.0.get(t).map(|s| (*t, *s)).ok_or_else(|| {
                    Error::InvalidInput(format!("target layer {t} is not in the correspondence"))
                })
            })
            .collect::<Result<BTreeMap<_, _>>>()
            .map(LayerCorrespondence)
    }

    pub fn source_layer(&self, target: usize) -> Option<usize> {
        self.0.get(&target).copied()
    }
}

/// Row-aligned last-token states of one layer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedLayer {
    pub source_layer: usize,
    /// `n x d1`
    pub x: Array2<f32>,
    /// `n x d2`
    pub y: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCorpus {
    pub corpus_id: String,
    pub source_model: String,
    pub target_model: String,
    pub n: usize,
    /// Keyed by target layer.
    pub layers: BTreeMap<usize, PairedLayer>,
}

/// Runs every text through both models and stacks the last-token states of
/// each corresponding layer pair.
pub fn collect_paired_activations<S, T>(
    source: &S,
    target: &T,
    texts: &[String],
    correspondence: &LayerCorrespondence,
    corpus_id: impl Into<String>,
) -> Result<ActivationCorpus>
where
    S: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    if texts.is_empty() {
        return Err(Error::InvalidInput("activation corpus is empty".into()));
    }
    if correspondence.0.is_empty() {
        return Err(Error::InvalidInput("layer correspondence is empty".into()));
    }
    for (&t, &s) in &correspondence.0 {
        if t == 0 || t > target.n_layers() || s == 0 || s > source.n_layers() {
            return Err(Error::InvalidInput(format!(
                "correspondence {s} -> {t} outside the models' {} / {} layers",
                source.n_layers(),
                target.n_layers()
            )));
        }
    }
    let src_layers: Vec<usize> = correspondence.0.values().copied().collect();
    let tgt_layers: Vec<usize> = correspondence.0.keys().copied().collect();
    let (d1, d2, n) = (source.hidden_dim(), target.hidden_dim(), texts.len());
    let mut xs: BTreeMap<usize, Array2<f32>> =
        src_layers.iter().map(|&k| (k, Array2::zeros((n, d1)))).collect();
    let mut ys: BTreeMap<usize, Array2<f32>> =
        tgt_layers.iter().map(|&k| (k, Array2::zeros((n, d2)))).collect();

    let src_capture = capture_layers(src_layers);
    let tgt_capture = capture_layers(tgt_layers);
    for (i, text) in texts.iter().enumerate() {
        let ids = encode_nonempty(source, text)?;
        for rec in source.forward(&ids, None, &src_capture)?.captured {
            xs.get_mut(&rec.layer)
                .expect("captured layer was requested")
                .row_mut(i)
                .assign(&Array1::from(rec.vector));
        }
        let ids = encode_nonempty(target, text)?;
        for rec in target.forward(&ids, None, &tgt_capture)?.captured {
            ys.get_mut(&rec.layer)
                .expect("captured layer was requested")
                .row_mut(i)
                .assign(&Array1::from(rec.vector));
        }
    }
    let layers = correspondence
        .0
        .iter()
        .map(|(&t, &s)| {
            (
                t,
                PairedLayer {
                    source_layer: s,
                    x: xs[&s].clone(),
                    y: ys[&t].clone(),
                },
            )
        })
        .collect();
    Ok(ActivationCorpus {
        corpus_id: corpus_id.into(),
        source_model: source.model_id().to_string(),
        target_model: target.model_id().to_string(),
        n,
        layers,
    })
}

fn capture_layers(mut layers: Vec<usize>) -> Capture {
    layers.sort_unstable();
    layers.dedup();
    Capture {
        layers: LayerSelection::Layers(layers),
        ..Capture::states()
    }
}

/// Minimum-norm least-squares solution of `X F = Y`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// `d1 x d2`
    pub solution: Array2<f64>,
    /// Singular values kept in the pseudo-inverse.
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// `||X F - Y||_F`
    pub residual: f64,
}

/// Solves `min ||X F - Y||^2` as `F = V S^+ U^T Y` from the thin SVD of `X`.
/// Singular values below `cutoff * s_max` are treated as zero.
pub fn least_squares(x: &Array2<f64>, y: &Array2<f64>, cutoff: f64) -> Result<LeastSquares> {
    let (n, d1) = x.dim();
    let (ny, d2) = y.dim();
    if ny != n {
        return Err(Error::DimensionMismatch {
            what: "rows of the target matrix".into(),
            expected: n,
            found: ny,
        });
    }
    if n == 0 || d1 == 0 || d2 == 0 {
        return Err(Error::InvalidInput("least squares needs non-empty matrices".into()));
    }
    if !(0.0..1.0).contains(&cutoff) {
        return Err(Error::InvalidInput(format!("cutoff {cutoff} outside [0, 1)")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("source activations are all zero".into()));
    }

    let xm = DMatrix::from_fn(n, d1, |i, j| x[[i, j]]);
    let ym = DMatrix::from_fn(n, d2, |i, j| y[[i, j]]);
    let svd = xm.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.max();
    let threshold = cutoff * s_max;

    let mut uty = u.transpose() * &ym;
    let mut rank = 0;
    for (r, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > threshold {
            rank += 1;
            1.0 / s
        } else {
            0.0
        };
        uty.row_mut(r).scale_mut(inv);
    }
    let f = v_t.transpose() * uty;
    let residual = (&xm * &f - &ym).norm();
    Ok(LeastSquares {
        solution: Array2::from_shape_fn((d1, d2), |(i, j)| f[(i, j)]),
        rank,
        singular_values: svd.singular_values.iter().copied().collect(),
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMap {
    pub source_layer: usize,
    /// `d1 x d2`; a source row vector `v` maps to `v F`.
    pub matrix: Array2<f32>,
    pub residual: f64,
    /// `||X F - Y||_F / ||Y||_F` (0 when `Y` is zero).
    pub relative_residual: f64,
    pub rank: usize,
}

impl LayerMap {
    pub fn apply(&self, v: &[f32]) -> Result<Vec<f32>> {
        let d1 = self.matrix.nrows();
        if v.len() != d1 {
            return Err(Error::DimensionMismatch {
                what: format!("vector mapped from source layer {}", self.source_layer),
                expected: d1,
                found: v.len(),
            });
        }
        let mut out = vec![0.0f64; self.matrix.ncols()];
        for (row, &s) in self.matrix.rows().into_iter().zip(v) {
            let s = f64::from(s);
            out.iter_mut().zip(row).for_each(|(o, &f)| *o += s * f64::from(f));
        }
        Ok(out.into_iter().map(|x| x as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMapSet {
    pub source_model: String,
    pub target_model: String,
    pub source_dim: usize,
    pub target_dim: usize,
    pub cutoff: f64,
    pub corpus_id: String,
    pub n_samples: usize,
    /// Keyed by target layer.
    pub layers: BTreeMap<usize, LayerMap>,
}

impl LinearMapSet {
    pub fn correspondence(&self) -> LayerCorrespondence {
        LayerCorrespondence(self.layers.iter().map(|(&t, m)| (t, m.source_layer)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("map set has no layers".into()));
        }
        for (t, m) in &self.layers {
            if m.matrix.dim() != (self.source_dim, self.target_dim) {
                return Err(Error::ShapeMismatch {
                    name: format!("map.{t}"),
                    expected: vec![self.source_dim, self.target_dim],
                    found: m.matrix.shape().to_vec(),
                });
            }
            if m.matrix.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("map for target layer {t}")));
            }
        }
        Ok(())
    }
}

/// Fits one map per target layer of the corpus.
pub fn fit_linear_map(corpus: &ActivationCorpus, cutoff: f64) -> Result<LinearMapSet> {
    let first = corpus
        .layers
        .values()
        .next()
        .ok_or_else(|| Error::InvalidInput("activation corpus has no layers".into()))?;
    let (d1, d2) = (first.x.ncols(), first.y.ncols());
    let mut layers = BTreeMap::new();
    for (&t, pair) in &corpus.layers {
        if pair.x.nrows() != pair.y.nrows() {
            return Err(Error::DimensionMismatch {
                what: format!("rows of target layer {t}"),
                expected: pair.x.nrows(),
                found: pair.y.nrows(),
            });
        }
        let x = pair.x.mapv(f64::from);
        let y = pair.y.mapv(f64::from);
        let fit = least_squares(&x, &y, cutoff).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("target layer {t}: {msg}")),
            other => other,
        })?;
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        layers.insert(
            t,
            LayerMap {
                source_layer: pair.source_layer,
                matrix: fit.solution.mapv(|v| v as f32),
                residual: fit.residual,
                relative_residual: if y_norm > 0.0 { fit.residual / y_norm } else { 0.0 },
                rank: fit.rank,
            },
        );
    }
    let set = LinearMapSet {
        source_model: corpus.source_model.clone(),
        target_model: corpus.target_model.clone(),
        source_dim: d1,
        target_dim: d2,
        cutoff,
        corpus_id: corpus.corpus_id.clone(),
        n_samples: corpus.n,
        layers,
    };
    set.validate()?;
    Ok(set)
}

/// Projects each source-layer vector into the target space: the output's
/// layer `t` is `v^{s(t)} F^t`.
pub fn reformulate(vector: &ConceptVector, maps: &LinearMapSet) -> Result<ConceptVector> {
    if vector.source_model != maps.source_model {
        return Err(Error::ModelMismatch {
            expected: maps.source_model.clone(),
            found: vector.source_model.clone(),
        });
    }
    if vector.dim() != maps.source_dim {
        return Err(Error::DimensionMismatch {
            what: format!("concept `{}`", vector.concept),
            expected: maps.source_dim,
            found: vector.dim(),
        });
    }
    let layers = maps
        .layers
        .iter()
        .map(|(&t, m)| {
            let v = vector.layer(m.source_layer).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "concept `{}` has no vector for source layer {}",
                    vector.concept, m.source_layer
                ))
            })?;
            Ok((t, m.apply(v)?))
        })
        .collect::<Result<_>>()?;
    Ok(ConceptVector {
        concept: vector.concept.clone(),
        source_model: maps.target_model.clone(),
        template_id: vector.template_id.clone(),
        n_pairs: vector.n_pairs,
        layers,
    })
}
