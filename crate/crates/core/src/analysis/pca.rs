use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which population the principal axes are fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaFit {
    #[default]
    Joint,
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub label: String,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    /// `after - before` in projected coordinates.
    pub arrow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub fit: PcaFit,
    /// `d x m`, orthonormal columns.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    pub points: Vec<ProjectedPoint>,
}

impl PcaProjection {
    pub fn n_components(&self) -> usize {
        self.explained_variance_ratio.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn component(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(move |row| row[c])
    }

    /// Coordinates of a point (mean removed).
    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        (0..self.n_components())
            .map(|c| {
                self.component(c)
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (&v, m))| w * (f64::from(v) - m))
                    .sum()
            })
            .collect()
    }

    /// Coordinates of a direction (no mean removal).
    pub fn project_direction(&self, v: &[f32]) -> Vec<f64> {
        (0..self.n_components())
            .map(|c| self.component(c).zip(v).map(|(w, &x)| w * f64::from(x)).sum())
            .collect()
    }

    /// Mean squared distance between points and their rank-m reconstruction.
    pub fn reconstruction_error(&self, data: &[Vec<f32>]) -> f64 {
        let mut total = 0.0;
        for x in data {
            let z = self.project(x);
            for (i, (&v, m)) in x.iter().zip(&self.mean).enumerate() {
                let rec: f64 = m + self.components[i].iter().zip(&z).map(|(w, c)| w * c).sum::<f64>();
                total += (f64::from(v) - rec).powi(2);
            }
        }
        total / data.len() as f64
    }
}

fn to_matrix(rows: &[&Vec<f32>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| f64::from(rows[i][j]))
}

/// Principal axes of the fitted population, then both populations projected
/// and joined by displacement arrows.
pub fn pca_displacement(
    before: &[Vec<f32>],
    after: &[Vec<f32>],
    labels: &[String],
    m: usize,
    fit: PcaFit,
) -> Result<PcaProjection> {
    if before.is_empty() {
        return Err(Error::InvalidInput("no states to project".into()));
    }
    if before.len() != after.len() || labels.len() != before.len() {
        return Err(Error::InvalidInput(format!(
            "{} before states, {} after states, {} labels",
            before.len(),
            after.len(),
            labels.len()
        )));
    }
    let d = before[0].len();
    for x in before.iter().chain(after) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "state in PCA input".into(),
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PCA input".into()));
        }
    }
    if m == 0 || m > d {
        return Err(Error::InvalidInput(format!("{m} components requested for dimension {d}")));
    }
    let population: Vec<&Vec<f32>> = match fit {
        PcaFit::Joint => before.iter().chain(after).collect(),
        PcaFit::Before => before.iter().collect(),
        PcaFit::After => after.iter().collect(),
    };
    let data = to_matrix(&population, d);
    let n = data.nrows() as f64;
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n).collect();
    let mut centered = data;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = svd.singular_values[order[0]];
    // inputs are f32, so directions below single-precision noise do not count
    let tol = s_max * 1e-6;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if m > rank {
        return Err(Error::Degenerate(format!(
            "{m} components requested but the states span rank {rank}"
        )));
    }
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut components = vec![vec![0.0; m]; d];
    let mut ratios = Vec::with_capacity(m);
    for (c, &idx) in order.iter().take(m).enumerate() {
        let row = v_t.row(idx);
        // sign convention: largest-magnitude loading positive
        let pivot = row.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[j][c] = sign * row[j];
        }
        ratios.push(svd.singular_values[idx].powi(2) / total);
    }
    let mut projection = PcaProjection {
        fit,
        components,
        explained_variance_ratio: ratios,
        mean,
        points: Vec::new(),
    };
    projection.points = before
        .iter()
        .zip(after)
        .zip(labels)
        .map(|((b, a), label)| {
            let pb = projection.project(b);
            let pa = projection.project(a);
            let arrow = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            ProjectedPoint {
                label: label.clone(),
                before: pb,
                after: pa,
                arrow,
            }
        })
        .collect();
    Ok(projection)
}

/// Mean projected position per label, for `before` or `after` points.
pub fn centroids(projection: &PcaProjection, after: bool) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for p in &projection.points {
        let x = if after { &p.after } else { &p.before };
        match out.iter_mut().find(|(l, _, _)| *l == p.label) {
            Some((_, acc, n)) => {
                acc.iter_mut().zip(x).for_each(|(a, v)| *a += v);
                *n += 1;
            }
            None => out.push((p.label.clone(), x.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(l, acc, n)| (l, acc.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}
