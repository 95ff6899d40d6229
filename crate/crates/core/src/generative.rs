//! The GP decoder: one ARD-RBF Gaussian process per view mapping latents
//! back to observed features, with feature columns treated as independent
//! draws sharing a covariance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::kernel::{rbf_ard, rbf_ard_sym, ArdRbfParams, CholeskyFactor};
use crate::recognition::LatentPosterior;
use crate::sampling::{reparameterize, standard_normal_draws, McConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub kernel: ArdRbfParams,
    pub log_noise_variance: f64,
}

impl DecoderParams {
    pub fn new(kernel: ArdRbfParams, noise_variance: f64) -> Self {
        Self {
            kernel,
            log_noise_variance: noise_variance.ln(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }
}

fn check_rows(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if y.nrows() != x.nrows() {
        return Err(VgpError::Shape(format!(
            "decoder: {} observations but {} latent rows",
            y.nrows(),
            x.nrows()
        )));
    }
    Ok(())
}

/// `sum_d log N(y_d; 0, K(X, X) + sigma_v^2 I)` over the feature columns.
pub fn decoder_loglik(y: &DMatrix<f64>, x: &DMatrix<f64>, p: &DecoderParams) -> Result<f64> {
    check_rows(y, x)?;
    let (n, d) = (y.nrows() as f64, y.ncols() as f64);
    let k = rbf_ard_sym(x, &p.kernel)?;
    let f = CholeskyFactor::new(&k, p.noise_variance())?;
    let alpha = f.solve(y);
    let quad = y.dot(&alpha);
    Ok(-0.5 * (d * f.logdet() + quad + n * d * (2.0 * PI).ln()))
}

/// Log-likelihood of one view and its gradient.
pub(crate) struct DecoderGrad {
    pub loglik: f64,
    pub d_x: DMatrix<f64>,
    pub d_log_signal_variance: f64,
    pub d_log_lengthscales: Vec<f64>,
    pub d_log_noise_variance: f64,
}

/// Gradient of [`decoder_loglik`] given the outer product `Y Y'` of the
/// view and its column count.
pub(crate) fn decoder_loglik_grad(yyt: &DMatrix<f64>, dim: usize, x: &DMatrix<f64>, p: &DecoderParams) -> Result<DecoderGrad> {
    let (n, q) = (x.nrows(), x.ncols());
    if yyt.nrows() != n {
        return Err(VgpError::Shape(format!("decoder: Y Y' is {}x{}, {n} latent rows", yyt.nrows(), yyt.ncols())));
    }
    let dimf = dim as f64;
    let k = rbf_ard_sym(x, &p.kernel)?;
    let noise = p.noise_variance();
    let f = CholeskyFactor::new(&k, noise)?;
    let cinv = f.inverse();
    let cinv_p = &cinv * yyt;
    let quad = cinv_p.trace();
    let loglik = -0.5 * (dimf * f.logdet() + quad + n as f64 * dimf * (2.0 * PI).ln());
    // dL/dC = (C^-1 P C^-1 - D C^-1) / 2
    let mut w = &cinv_p * &cinv;
    w -= &cinv * dimf;
    w *= 0.5;
    let w = (&w + w.transpose()) * 0.5;

    let inv_l2: Vec<f64> = p.kernel.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut d_x = DMatrix::zeros(n, q);
    let mut d_ls = vec![0.0; q];
    let mut d_sv = 0.0;
    for j in 0..n {
        for i in 0..n {
            let wk = w[(i, j)] * k[(i, j)];
            d_sv += wk;
            if i == j {
                continue;
            }
            for d in 0..q {
                let diff = x[(i, d)] - x[(j, d)];
                d_ls[d] += wk * diff * diff * inv_l2[d];
                d_x[(i, d)] -= 2.0 * wk * diff * inv_l2[d];
            }
        }
    }
    Ok(DecoderGrad {
        loglik,
        d_x,
        d_log_signal_variance: d_sv,
        d_log_lengthscales: d_ls,
        d_log_noise_variance: noise * w.trace(),
    })
}

/// Monte-Carlo estimate of `E_q[log p(Y | X)]`.
pub fn expected_decoder_loglik(y: &DMatrix<f64>, post: &LatentPosterior, p: &DecoderParams, mc: &McConfig) -> Result<f64> {
    check_rows(y, &post.means)?;
    let draws = standard_normal_draws(mc, post.means.nrows(), post.means.ncols());
    let mut acc = 0.0;
    for xi in &draws {
        acc += decoder_loglik(y, &reparameterize(post, xi), p)?;
    }
    Ok(acc / draws.len() as f64)
}

/// Predictive means (`N* x D`) and variances (`N*`, including observation
/// noise) of the decoder at new latent positions.
pub fn decoder_predict_many(
    x_star: &DMatrix<f64>,
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    p: &DecoderParams,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_rows(y_train, x_train)?;
    let k = rbf_ard_sym(x_train, &p.kernel)?;
    let f = CholeskyFactor::new(&k, p.noise_variance())?;
    let k_star = rbf_ard(x_star, x_train, &p.kernel)?;
    let means = &k_star * f.solve(y_train);
    let kinv_kt = f.solve(&k_star.transpose());
    let prior = p.kernel.signal_variance() + p.noise_variance();
    let n = x_train.nrows();
    let vars = DVector::from_fn(x_star.nrows(), |i, _| {
        let explained: f64 = (0..n).map(|j| k_star[(i, j)] * kinv_kt[(j, i)]).sum();
        (prior - explained).max(1e-12)
    });
    Ok((means, vars))
}

/// Single-point form of [`decoder_predict_many`].
pub fn decoder_predict(
    x_star: &[f64],
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    p: &DecoderParams,
) -> Result<(DVector<f64>, f64)> {
    let xs = DMatrix::from_row_slice(1, x_star.len(), x_star);
    let (m, v) = decoder_predict_many(&xs, x_train, y_train, p)?;
    Ok((m.row(0).transpose(), v[0]))
}
