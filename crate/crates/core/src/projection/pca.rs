//! PCA via singular value decomposition of the centered data matrix.
//!
//! Features are centered but not variance-scaled. The sign of each component
//! is fixed so that its largest-magnitude entry is positive, making reports
//! reproducible across runs and platforms.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many modes to keep: an explicit count or a cumulative
/// explained-variance target in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSelector {
    Count(usize),
    VarianceTarget(f64),
}

/// Fitted PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub mean: Array1<f64>,
    /// k x d; rows are modes ordered by decreasing explained variance.
    pub components: Array2<f64>,
    /// Per-mode variance, sigma_i^2 / (n - 1).
    pub explained_variance: Vec<f64>,
    /// Per-mode fraction of the total feature variance, in [0, 1].
    pub explained_variance_ratio: Vec<f64>,
    /// Total feature variance of the training data.
    pub total_variance: f64,
}

/// Smallest mode count whose cumulative ratio reaches the target.
pub fn select_mode_count(ratios: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= target - 1e-12 {
            return i + 1;
        }
    }
    ratios.len()
}

pub fn pca_fit(x: &Array2<f64>, k: ModeSelector) -> Result<ProjectionModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: n,
            context: "pca_fit".into(),
        });
    }
    let max_modes = (n - 1).min(d);
    match k {
        ModeSelector::Count(c) => {
            if c == 0 || c > max_modes {
                return Err(Error::invalid(
                    "mode count",
                    format!("{c} requested, must be in 1..={max_modes} = min(n-1, d)"),
                ));
            }
        }
        ModeSelector::VarianceTarget(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(
                    "variance target",
                    format!("{t} is outside (0, 1]"),
                ));
            }
        }
    }

    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let total_variance =
        centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
    if total_variance == 0.0 {
        return Err(Error::DegenerateVariance);
    }

    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::invalid("svd", "V^T not computed"))?;
    let singular: Vec<f64> = svd.singular_values.iter().copied().collect();

    // enforce descending order regardless of backend conventions
    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));

    let variances: Vec<f64> = order
        .iter()
        .take(max_modes)
        .map(|&i| singular[i] * singular[i] / (n as f64 - 1.0))
        .collect();
    let ratios: Vec<f64> = variances.iter().map(|v| v / total_variance).collect();

    let keep = match k {
        ModeSelector::Count(c) => c,
        ModeSelector::VarianceTarget(t) => select_mode_count(&ratios, t),
    };

    let mut components = Array2::zeros((keep, d));
    for (row, &i) in order.iter().take(keep).enumerate() {
        for col in 0..d {
            components[(row, col)] = vt[(i, col)];
        }
    }
    fix_component_signs(&mut components);

    Ok(ProjectionModel {
        mean,
        components,
        explained_variance: variances[..keep].to_vec(),
        explained_variance_ratio: ratios[..keep].to_vec(),
        total_variance,
    })
}

/// Largest-magnitude entry of each component made positive
/// (first occurrence wins on magnitude ties).
fn fix_component_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

/// Projects rows of `x` onto the fitted modes: (x - mean) . components^T.
pub fn pca_transform(model: &ProjectionModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: model.mean.len(),
            found: x.ncols(),
            context: "pca_transform input columns".into(),
        });
    }
    let centered = x - &model.mean;
    Ok(centered.dot(&model.components.t()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectionModelJson {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    total_variance: f64,
}

impl ProjectionModel {
    pub fn n_modes(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn to_json(&self) -> String {
        let doc = ProjectionModelJson {
            mean: self.mean.to_vec(),
            components: self
                .components
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            explained_variance: self.explained_variance.clone(),
            explained_variance_ratio: self.explained_variance_ratio.clone(),
            total_variance: self.total_variance,
        };
        serde_json::to_string_pretty(&doc).expect("plain floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProjectionModelJson = serde_json::from_str(text)
            .map_err(|e| Error::invalid("projection model json", e.to_string()))?;
        let k = doc.components.len();
        let d = doc.mean.len();
        let mut components = Array2::zeros((k, d));
        for (i, row) in doc.components.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                    context: format!("component row {i}"),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                components[(i, j)] = v;
            }
        }
        Ok(ProjectionModel {
            mean: Array1::from_vec(doc.mean),
            components,
            explained_variance: doc.explained_variance,
            explained_variance_ratio: doc.explained_variance_ratio,
            total_variance: doc.total_variance,
        })
    }
}
