//! A trained model bundled with everything needed to use it later, saved as
//! a single JSON checkpoint that reloads bit for bit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Standardizer};
use crate::error::{Result, VgpError};
use crate::inference::{training_cavity, Predictor};
use crate::metrics::MetricReport;
use crate::ordinal::{LabelMatrix, LevelPrediction};
use crate::recognition::{CavityResult, Projection};
use crate::trainer::{AdaDeltaState, ModelState, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "vgpae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub state: ModelState,
    pub standardizer: Standardizer,
    pub view_names: Vec<String>,
    pub output_names: Vec<String>,
    pub levels: usize,
    /// Standardized training views.
    #[serde(with = "crate::matrix_serde::vec")]
    pub train_views: Vec<DMatrix<f64>>,
    pub train_labels: Option<LabelMatrix>,
    pub optimizer: AdaDeltaState,
    pub steps: usize,
    pub datapoints: usize,
}

impl FittedModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: ModelState,
        standardizer: Standardizer,
        config: TrainConfig,
        train_set: &MultiViewDataset,
        train_views: Vec<DMatrix<f64>>,
        optimizer: AdaDeltaState,
        steps: usize,
        datapoints: usize,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            state,
            standardizer,
            view_names: train_set.view_names.clone(),
            output_names: train_set.output_names.clone(),
            levels: train_set.levels,
            train_views,
            train_labels: train_set.labels.clone(),
            optimizer,
            steps,
            datapoints,
        }
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Predictor::new(&self.state, &self.train_views)
    }

    /// Full-data cavity of the training rows (their latent positions).
    pub fn train_cavity(&self) -> Result<CavityResult> {
        training_cavity(&self.state, &self.train_views)
    }

    /// Checks that a dataset has the views and outputs this model expects.
    pub fn check_compatible(&self, ds: &MultiViewDataset) -> Result<()> {
        let dims = ds.view_dims();
        let want = self.standardizer.dims();
        if dims != want {
            return Err(VgpError::Config(format!(
                "view dimensions: checkpoint expects {want:?}, manifest has {dims:?}"
            )));
        }
        if let (Some(l), Some(op)) = (&ds.labels, &self.state.ordinal) {
            if l.outputs() != op.outputs() {
                return Err(VgpError::Config(format!(
                    "outputs: checkpoint has {}, manifest has {}",
                    op.outputs(),
                    l.outputs()
                )));
            }
            if l.levels() != op.levels {
                return Err(VgpError::Config(format!(
                    "levels: checkpoint has {}, manifest has {}",
                    op.levels,
                    l.levels()
                )));
            }
        }
        Ok(())
    }

    pub fn standardize(&self, views: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.standardizer.apply(views)
    }

    /// Latent positions of new (raw) rows.
    pub fn project(&self, views: &[DMatrix<f64>]) -> Result<Projection> {
        self.predictor()?.project(&self.standardize(views)?)
    }

    pub fn predict_levels(&self, views: &[DMatrix<f64>]) -> Result<LevelPrediction> {
        self.predictor()?.predict_levels(&self.standardize(views)?)
    }

    /// Metrics on every row of `ds` treated as new data.
    pub fn evaluate(&self, ds: &MultiViewDataset) -> Result<MetricReport> {
        self.check_compatible(ds)?;
        let views = self.standardize(&ds.views)?;
        self.predictor()?
            .evaluate(&views, ds.labels.as_ref(), &ds.view_names, &ds.output_names)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| VgpError::Json {
            path: "<checkpoint>".into(),
            source: e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| VgpError::Json {
            path: path.into(),
            source: e,
        })?;
        std::fs::write(path, s).map_err(|e| VgpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| VgpError::io(path, e))?;
        let m: Self = serde_json::from_str(&s).map_err(|e| VgpError::Json {
            path: path.into(),
            source: e,
        })?;
        if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
            return Err(VgpError::Config(format!(
                "{}: unsupported checkpoint format {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}
