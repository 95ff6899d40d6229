//! Prediction with a trained state: projecting new rows onto the latent
//! space, predicting ordinal levels and reconstructing the views.
//!
//! Training rows are placed at their full-data leave-one-out cavity means;
//! new rows at the encoder GP's predictive mean given the variational
//! means as targets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VgpError};
use crate::generative::decoder_predict_many;
use crate::kernel::encoder_gram;
use crate::metrics::{nlpd, MetricReport, ViewNlpd};
use crate::ordinal::{predict_levels, LabelMatrix, LevelPrediction};
use crate::recognition::{loo_cavity, project, CavityResult, Projection};
use crate::trainer::ModelState;

/// A model state paired with the (standardized) training views it was fit on.
pub struct Predictor<'a> {
    state: &'a ModelState,
    train_views: &'a [DMatrix<f64>],
    train_latents: DMatrix<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(state: &'a ModelState, train_views: &'a [DMatrix<f64>]) -> Result<Self> {
        let n = train_views.first().map_or(0, |v| v.nrows());
        if n != state.num_points() || train_views.len() != state.decoders.len() {
            return Err(VgpError::Shape(format!(
                "predictor: state has {} points and {} views, data {n} points and {} views",
                state.num_points(),
                state.decoders.len(),
                train_views.len()
            )));
        }
        let cav = training_cavity(state, train_views)?;
        Ok(Self {
            state,
            train_views,
            train_latents: cav.means,
        })
    }

    /// Cavity means of the training rows.
    pub fn train_latents(&self) -> &DMatrix<f64> {
        &self.train_latents
    }

    pub fn project(&self, views: &[DMatrix<f64>]) -> Result<Projection> {
        project(views, self.train_views, &self.state.variational.means, &self.state.encoder)
    }

    pub fn predict_levels_at(&self, latents: &DMatrix<f64>) -> Result<LevelPrediction> {
        let op = self
            .state
            .ordinal
            .as_ref()
            .ok_or_else(|| VgpError::Config("model was trained without labels; no ordinal predictions".into()))?;
        predict_levels(latents, op)
    }

    pub fn predict_levels(&self, views: &[DMatrix<f64>]) -> Result<LevelPrediction> {
        self.predict_levels_at(&self.project(views)?.means)
    }

    /// Decoder predictive means and variances (noise included) per view at
    /// the given latent positions.
    pub fn reconstruct_at(&self, latents: &DMatrix<f64>) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
        self.train_views
            .iter()
            .zip(&self.state.decoders)
            .map(|(y, p)| decoder_predict_many(latents, &self.train_latents, y, p))
            .collect()
    }

    /// Mean negative log predictive density of each view at the given
    /// latent positions.
    pub fn nlpd_at(&self, latents: &DMatrix<f64>, views: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        self.reconstruct_at(latents)?
            .iter()
            .zip(views)
            .map(|((m, v), y)| nlpd(y, m, v))
            .collect()
    }

    /// Metrics for new rows: ordinal agreement when labels are given and
    /// the model has a classifier, NLPD per view always.
    pub fn evaluate(&self, views: &[DMatrix<f64>], labels: Option<&LabelMatrix>, view_names: &[String], output_names: &[String]) -> Result<MetricReport> {
        let proj = self.project(views)?;
        let mut report = match (labels, &self.state.ordinal) {
            (Some(z), Some(_)) => MetricReport::classification(z, &self.predict_levels_at(&proj.means)?, output_names)?,
            _ => MetricReport {
                mean_mse: f64::NAN,
                mean_icc: f64::NAN,
                ..Default::default()
            },
        };
        report.nlpd = self
            .nlpd_at(&proj.means, views)?
            .into_iter()
            .enumerate()
            .map(|(v, x)| ViewNlpd {
                view: view_names.get(v).cloned().unwrap_or_else(|| format!("view_{v}")),
                nlpd: x,
            })
            .collect();
        Ok(report)
    }
}

/// Leave-one-out cavity over all training rows.
pub fn training_cavity(state: &ModelState, train_views: &[DMatrix<f64>]) -> Result<CavityResult> {
    let gram = encoder_gram(train_views, &state.encoder.kernels)?;
    loo_cavity(&gram, state.encoder.noise_variance(), &state.variational.means)
}
