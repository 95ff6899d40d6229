//! Multi-view datasets, feature standardization, file IO and synthetic
//! generators.

mod io;
pub mod synth;

pub use io::{load_dataset, read_matrix_csv, write_dataset, write_matrix_csv, Manifest, ViewEntry};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::ordinal::LabelMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// `V` observed views over the same `N` rows, optional ordinal labels and a
/// train/test tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<DMatrix<f64>>,
    pub view_names: Vec<String>,
    pub labels: Option<LabelMatrix>,
    pub output_names: Vec<String>,
    pub levels: usize,
    pub split: Vec<Split>,
    /// Per-row side information such as a generator's ground truth.
    pub annotations: BTreeMap<String, Vec<f64>>,
}

impl MultiViewDataset {
    /// Single-split dataset with default names.
    pub fn new(views: Vec<DMatrix<f64>>, labels: Option<LabelMatrix>) -> Result<Self> {
        let n = views.first().map_or(0, |v| v.nrows());
        let (levels, outputs) = labels.as_ref().map_or((0, 0), |l| (l.levels(), l.outputs()));
        let ds = Self {
            view_names: (0..views.len()).map(|v| format!("view{v}")).collect(),
            output_names: (0..outputs).map(|c| format!("output{c}")).collect(),
            views,
            labels,
            levels,
            split: vec![Split::Train; n],
            annotations: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.views.first().map_or(0, |v| v.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    pub fn outputs(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.outputs())
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(VgpError::Data("dataset has no views".into()));
        }
        if self.view_names.len() != self.views.len() {
            return Err(VgpError::Data(format!(
                "{} view names for {} views",
                self.view_names.len(),
                self.views.len()
            )));
        }
        let n = self.len();
        for (name, v) in self.view_names.iter().zip(&self.views) {
            if v.nrows() != n {
                return Err(VgpError::Data(format!("view '{name}' has {} rows, expected {n}", v.nrows())));
            }
            if v.ncols() == 0 {
                return Err(VgpError::Data(format!("view '{name}' has no columns")));
            }
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(VgpError::Data(format!(
                    "view '{name}' has a non-finite value at row {}, column {}",
                    k % n.max(1),
                    k / n.max(1)
                )));
            }
        }
        if let Some(l) = &self.labels {
            if l.rows() != n {
                return Err(VgpError::Data(format!("labels have {} rows, views have {n}", l.rows())));
            }
            if l.levels() != self.levels {
                return Err(VgpError::Data(format!(
                    "labels use {} levels, dataset declares {}",
                    l.levels(),
                    self.levels
                )));
            }
        }
        if self.split.len() != n {
            return Err(VgpError::Data(format!("split has {} rows, views have {n}", self.split.len())));
        }
        for (k, a) in &self.annotations {
            if a.len() != n {
                return Err(VgpError::Data(format!("annotation '{k}' has {} rows, views have {n}", a.len())));
            }
        }
        Ok(())
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Dataset restricted to the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            views: self.views.iter().map(|v| v.select_rows(rows)).collect(),
            view_names: self.view_names.clone(),
            labels: self.labels.as_ref().map(|l| l.select(rows)),
            output_names: self.output_names.clone(),
            levels: self.levels,
            split: rows.iter().map(|&i| self.split[i]).collect(),
            annotations: self
                .annotations
                .iter()
                .map(|(k, a)| (k.clone(), rows.iter().map(|&i| a[i]).collect()))
                .collect(),
        }
    }

    pub fn train(&self) -> Self {
        self.subset(&self.rows_in(Split::Train))
    }

    pub fn test(&self) -> Self {
        self.subset(&self.rows_in(Split::Test))
    }
}

/// Per-view, per-column affine transform to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl Standardizer {
    /// Fits column means and standard deviations; constant columns keep a
    /// unit scale.
    pub fn fit(views: &[DMatrix<f64>]) -> Self {
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for v in views {
            let n = v.nrows().max(1) as f64;
            let mu: Vec<f64> = v.column_iter().map(|c| c.sum() / n).collect();
            let sd: Vec<f64> = v
                .column_iter()
                .zip(&mu)
                .map(|(c, m)| {
                    let var = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                    if var > 1e-24 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            means.push(mu);
            scales.push(sd);
        }
        Self { means, scales }
    }

    pub fn identity(dims: &[usize]) -> Self {
        Self {
            means: dims.iter().map(|&d| vec![0.0; d]).collect(),
            scales: dims.iter().map(|&d| vec![1.0; d]).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.means.iter().map(|m| m.len()).collect()
    }

    pub fn apply(&self, views: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        if views.len() != self.means.len() {
            return Err(VgpError::Shape(format!(
                "standardizer fitted on {} views, given {}",
                self.means.len(),
                views.len()
            )));
        }
        views
            .iter()
            .enumerate()
            .map(|(v, y)| {
                if y.ncols() != self.means[v].len() {
                    return Err(VgpError::Shape(format!(
                        "view {v} has {} columns, standardizer expects {}",
                        y.ncols(),
                        self.means[v].len()
                    )));
                }
                Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, d| {
                    (y[(i, d)] - self.means[v][d]) / self.scales[v][d]
                }))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let s = Standardizer::fit(std::slice::from_ref(&y));
        let z = &s.apply(&[y]).unwrap()[0];
        assert!(z.column(0).sum().abs() < 1e-12);
        assert!((z.column(0).norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_views_rejected() {
        let r = MultiViewDataset::new(vec![DMatrix::zeros(3, 2), DMatrix::zeros(4, 2)], None);
        assert!(matches!(r, Err(VgpError::Data(_))));
    }
}
