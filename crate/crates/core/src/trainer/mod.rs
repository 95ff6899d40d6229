//! The training objective, its gradient, AdaDelta and the minibatch loop.
//!
//! The bound on a batch `B` is
//!
//! ```text
//! F = E_q[ sum_v log p(Y_B^v | X_B) + w log p(Z_B | X_B) ] - KL(q(X_B) || N(0, I))
//! ```
//!
//! with the cavity, KL and likelihoods all computed over the batch alone.
//! Variational parameters of rows outside the batch are not updated.

mod gradcheck;
mod objective;
mod optim;
mod state;
mod trace;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, GroupError};
pub use objective::{BoundTerms, Objective};
pub use optim::{adadelta_step, adadelta_step_masked, AdaDeltaState};
pub use state::{InitSpec, LatentInit, ModelState, ParamGroup};
pub use trace::{moving_average, TraceRecord, TrainingTrace};

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Split, Standardizer};
use crate::error::{Result, VgpError};
use crate::inference::Predictor;
use crate::model::FittedModel;
use crate::ordinal::LabelMatrix;
use crate::sampling::{derive_seed, McConfig, ReparamScale};

// Seed streams derived from the run seed.
const SHUFFLE_STREAM: u64 = 1 << 40;
const EVAL_STREAM: u64 = 1 << 41;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    /// Clipped to the number of training rows.
    pub batch_size: usize,
    pub epochs: usize,
    /// Draws per gradient step.
    pub mc_samples: usize,
    /// Draws per chunk when evaluating the bound for the trace.
    pub eval_mc_samples: usize,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
    /// Steps between trace records.
    pub eval_every: usize,
    pub ordinal_weight: f64,
    pub init: LatentInit,
    pub reparam: ReparamScale,
    /// Standardize each feature on the training split.
    pub standardize: bool,
    pub trace_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            batch_size: 500,
            epochs: 1500,
            mc_samples: 1,
            eval_mc_samples: 16,
            rho: 0.95,
            eps: 1e-6,
            seed: 0,
            eval_every: 20,
            ordinal_weight: 1.0,
            init: LatentInit::Pca,
            reparam: ReparamScale::SqrtOfSum,
            standardize: true,
            trace_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VgpError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.mc_samples == 0 || self.eval_mc_samples == 0 {
            return bad("mc_samples and eval_mc_samples must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.ordinal_weight >= 0.0 && self.ordinal_weight.is_finite()) {
            return bad(format!("ordinal_weight must be finite and non-negative, got {}", self.ordinal_weight));
        }
        Ok(())
    }

    fn init_spec(&self) -> InitSpec {
        InitSpec {
            latent_dim: self.latent_dim,
            ordinal_weight: self.ordinal_weight,
            init: self.init,
            reparam: self.reparam,
            seed: self.seed,
        }
    }
}

/// Splits `0..n` into consecutive chunks of `size`, folding a remainder of
/// fewer than 2 rows into the previous chunk.
pub fn chunk_rows(rows: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = rows.chunks(size.max(2)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Everything `train` produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FittedModel,
    pub trace: TrainingTrace,
}

struct Evaluation<'a> {
    obj: &'a Objective<'a>,
    chunks: Vec<Vec<usize>>,
    train_views: &'a [DMatrix<f64>],
    test_views: Vec<DMatrix<f64>>,
    test_labels: Option<LabelMatrix>,
    mc_samples: usize,
    seed: u64,
}

impl Evaluation<'_> {
    fn record(&self, state: &ModelState, step: usize, datapoints: usize) -> Result<TraceRecord> {
        let mut f2 = 0.0;
        for (k, chunk) in self.chunks.iter().enumerate() {
            let mc = McConfig::new(self.mc_samples, derive_seed(self.seed, EVAL_STREAM + k as u64))?;
            f2 += self.obj.elbo(state, chunk, &mc)?;
        }
        let f2_per_point = f2 / self.obj.num_points() as f64;
        let nv = self.train_views.len();
        let (mut nlpd, mut icc, mut mse) = (vec![f64::NAN; nv], f64::NAN, f64::NAN);
        if self.test_views.first().is_some_and(|v| v.nrows() > 0) {
            let pred = Predictor::new(state, self.train_views)?;
            let report = pred.evaluate(&self.test_views, self.test_labels.as_ref(), &[], &[])?;
            nlpd = report.nlpd.iter().map(|v| v.nlpd).collect();
            icc = report.mean_icc;
            mse = report.mean_mse;
        }
        Ok(TraceRecord {
            step,
            datapoints,
            f2_per_point,
            nlpd,
            icc_mean: icc,
            mse_mean: mse,
        })
    }
}

fn snapshot(state: &ModelState) -> String {
    let range = |m: &DMatrix<f64>| (m.min(), m.max());
    let (mlo, mhi) = range(&state.variational.means);
    let (slo, shi) = range(&state.variational.log_vars);
    let enc: Vec<String> = state
        .encoder
        .kernels
        .iter()
        .map(|k| format!("(log_sv={}, log_l={})", k.log_signal_variance, k.log_lengthscale))
        .collect();
    let dec: Vec<String> = state
        .decoders
        .iter()
        .map(|d| format!("(log_sv={}, log_l={:?}, log_noise={})", d.kernel.log_signal_variance, d.kernel.log_lengthscales, d.log_noise_variance))
        .collect();
    format!(
        "M in [{mlo}, {mhi}], log S in [{slo}, {shi}], encoder {} log_noise={}, decoders {}",
        enc.join(" "),
        state.encoder.log_noise_variance,
        dec.join(" ")
    )
}

/// Fits the model on the training split of `data`, recording a trace
/// evaluated on the test split.
pub fn train(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    if cfg.ordinal_weight > 0.0 && data.labels.is_none() {
        return Err(VgpError::Config(
            "ordinal_weight > 0 needs labels; provide a label file or set ordinal_weight to 0".into(),
        ));
    }
    let train_rows = data.rows_in(Split::Train);
    let test_rows = data.rows_in(Split::Test);
    let train_set = data.subset(&train_rows);
    let test_set = data.subset(&test_rows);
    let n = train_rows.len();
    if n < 2 {
        return Err(VgpError::Data(format!("need at least 2 training rows, got {n}")));
    }
    let standardizer = if cfg.standardize {
        Standardizer::fit(&train_set.views)
    } else {
        Standardizer::identity(&train_set.view_dims())
    };
    let train_views = standardizer.apply(&train_set.views)?;
    let test_views = standardizer.apply(&test_set.views)?;
    let outputs = train_set.labels.as_ref().map(|l| (l.outputs(), l.levels()));
    let mut state = ModelState::init(&train_views, outputs, &cfg.init_spec())?;
    let obj = Objective::new(&train_views, train_set.labels.as_ref());
    let batch_size = cfg.batch_size.min(n);
    let all_rows: Vec<usize> = (0..n).collect();
    let eval = Evaluation {
        obj: &obj,
        chunks: chunk_rows(&all_rows, batch_size),
        train_views: &train_views,
        test_views,
        test_labels: test_set.labels.clone(),
        mc_samples: cfg.eval_mc_samples,
        seed: cfg.seed,
    };

    let mut flat = state.to_flat();
    let mut opt = AdaDeltaState::new(flat.len());
    let mut trace = TrainingTrace::new(train_views.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order = all_rows.clone();
    let (mut step, mut datapoints) = (0usize, 0usize);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in chunk_rows(&order, batch_size).iter().enumerate() {
            step += 1;
            let mc = McConfig::new(cfg.mc_samples, derive_seed(cfg.seed, step as u64))?;
            let (value, grad) = obj.elbo_grad(&state, batch, &mc).map_err(|e| match e {
                VgpError::Factorization { .. } | VgpError::Domain(_) => VgpError::NonFinite {
                    step,
                    batch: b,
                    detail: format!("{e}; epoch {epoch}; {}", snapshot(&state)),
                },
                other => other,
            })?;
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(VgpError::NonFinite {
                    step,
                    batch: b,
                    detail: format!("bound {value}; epoch {epoch}; {}", snapshot(&state)),
                });
            }
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            adadelta_step_masked(&mut flat, &neg, &mut opt, &state.active_indices(batch), cfg.rho, cfg.eps)?;
            state.set_flat(&flat)?;
            datapoints += batch.len();
            if step % cfg.eval_every == 0 {
                let rec = eval.record(&state, step, datapoints)?;
                log::info!("step {step} epoch {epoch} f2/pt {:.5} icc {:.4}", rec.f2_per_point, rec.icc_mean);
                trace.records.push(rec);
            }
        }
    }
    if step > 0 && trace.records.last().is_none_or(|r| r.step != step) {
        trace.records.push(eval.record(&state, step, datapoints)?);
    }
    if let Some(path) = &cfg.trace_path {
        trace.write_csv(path)?;
    }
    let model = FittedModel::new(
        state,
        standardizer,
        cfg.clone(),
        &train_set,
        train_views.clone(),
        opt,
        step,
        datapoints,
    );
    Ok(TrainOutcome { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_fold_singletons() {
        let rows: Vec<usize> = (0..7).collect();
        assert_eq!(chunk_rows(&rows, 3), vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
        assert_eq!(chunk_rows(&rows, 2).len(), 3);
        assert_eq!(chunk_rows(&rows, 10), vec![rows.clone()]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(VgpError::Config(_))));
        let bad = TrainConfig {
            rho: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
