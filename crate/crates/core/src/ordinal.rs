//! Ordinal threshold classifier on the latent space.
//!
//! Output `c` of point `i` takes level `s` with probability
//! `Phi((g_s - w_c'x)/sigma) - Phi((g_{s-1} - w_c'x)/sigma)`, where the
//! cut-points `g_1 < ... < g_{S-1}` are built from a base value plus
//! exponentiated increments so the ordering can never be violated.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::normal::{log_cdf_diff, log_pdf};
use crate::recognition::LatentPosterior;
use crate::sampling::{reparameterize, standard_normal_draws, McConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalParams {
    /// Number of ordered levels `S`.
    pub levels: usize,
    /// `C x q` projection vectors, one row per output.
    #[serde(with = "crate::matrix_serde")]
    pub weights: DMatrix<f64>,
    /// First cut-point of every output.
    pub gamma_base: Vec<f64>,
    /// `C x (S-2)` log gaps between consecutive cut-points.
    #[serde(with = "crate::matrix_serde")]
    pub gamma_log_incr: DMatrix<f64>,
    pub log_noise_std: f64,
}

impl OrdinalParams {
    /// Cut-points equally spaced over `[-2, 2]`.
    pub fn with_spread_thresholds(weights: DMatrix<f64>, levels: usize, noise_std: f64) -> Result<Self> {
        if levels < 2 {
            return Err(VgpError::Config(format!("ordinal model needs at least 2 levels, got {levels}")));
        }
        let c = weights.nrows();
        let (base, gap) = if levels == 2 {
            (0.0, 1.0)
        } else {
            (-2.0, 4.0 / (levels - 2) as f64)
        };
        Ok(Self {
            levels,
            weights,
            gamma_base: vec![base; c],
            gamma_log_incr: DMatrix::from_element(c, levels - 2, gap.ln()),
            log_noise_std: noise_std.ln(),
        })
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise_std.exp()
    }

    fn check(&self) -> Result<()> {
        let c = self.outputs();
        if self.levels < 2 || self.gamma_base.len() != c || self.gamma_log_incr.shape() != (c, self.levels - 2) {
            return Err(VgpError::Shape(format!(
                "ordinal params: S={}, W {:?}, base {}, increments {:?}",
                self.levels,
                self.weights.shape(),
                self.gamma_base.len(),
                self.gamma_log_incr.shape()
            )));
        }
        Ok(())
    }
}

/// Observed levels `1..=S` per cell, `None` for a missing label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    rows: usize,
    outputs: usize,
    levels: usize,
    cells: Vec<Option<u32>>,
}

impl LabelMatrix {
    /// Builds a label matrix from row-major cells, rejecting levels outside
    /// `1..=levels`.
    pub fn new(rows: usize, outputs: usize, levels: usize, cells: Vec<Option<u32>>) -> Result<Self> {
        if cells.len() != rows * outputs {
            return Err(VgpError::Shape(format!(
                "label matrix {rows}x{outputs} given {} cells",
                cells.len()
            )));
        }
        for (k, cell) in cells.iter().enumerate() {
            if let Some(z) = cell {
                if *z < 1 || *z as usize > levels {
                    return Err(VgpError::Data(format!(
                        "label {z} at row {}, column {} is outside 1..={levels}",
                        k / outputs.max(1),
                        k % outputs.max(1)
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            outputs,
            levels,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, i: usize, c: usize) -> Option<u32> {
        self.cells[i * self.outputs + c]
    }

    pub fn set(&mut self, i: usize, c: usize, z: Option<u32>) {
        self.cells[i * self.outputs + c] = z;
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let cells = rows
            .iter()
            .flat_map(|&i| (0..self.outputs).map(move |c| (i, c)))
            .map(|(i, c)| self.get(i, c))
            .collect();
        Self {
            rows: rows.len(),
            outputs: self.outputs,
            levels: self.levels,
            cells,
        }
    }

    /// Observed labels of output `c` with their row indices.
    pub fn column(&self, c: usize) -> Vec<(usize, u32)> {
        (0..self.rows).filter_map(|i| self.get(i, c).map(|z| (i, z))).collect()
    }
}

/// `C x (S-1)` realized cut-points.
pub fn realize_thresholds(op: &OrdinalParams) -> DMatrix<f64> {
    let c = op.outputs();
    let mut t = DMatrix::zeros(c, op.levels - 1);
    for o in 0..c {
        let mut acc = op.gamma_base[o];
        t[(o, 0)] = acc;
        for j in 0..op.levels.saturating_sub(2) {
            acc += op.gamma_log_incr[(o, j)].exp();
            t[(o, j + 1)] = acc;
        }
    }
    t
}

#[inline]
fn bounds(thresholds: &DMatrix<f64>, c: usize, level: usize, levels: usize) -> (f64, f64) {
    let lo = if level == 1 { f64::NEG_INFINITY } else { thresholds[(c, level - 2)] };
    let hi = if level == levels { f64::INFINITY } else { thresholds[(c, level - 1)] };
    (lo, hi)
}

fn score(op: &OrdinalParams, c: usize, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(d, xd)| op.weights[(c, d)] * xd).sum()
}

fn logprobs_from_score(thresholds: &DMatrix<f64>, c: usize, levels: usize, g: f64, sigma: f64) -> Vec<f64> {
    (1..=levels)
        .map(|s| {
            let (lo, hi) = bounds(thresholds, c, s, levels);
            log_cdf_diff((lo - g) / sigma, (hi - g) / sigma)
        })
        .collect()
}

/// Log-probabilities of the `S` levels of output `c` at latent position `x`.
pub fn level_logprobs(x: &[f64], op: &OrdinalParams, c: usize) -> Vec<f64> {
    let t = realize_thresholds(op);
    logprobs_from_score(&t, c, op.levels, score(op, c, x), op.noise_std())
}

/// Log-likelihood of one cell and its partial derivatives.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CellGrad {
    pub loglik: f64,
    pub d_score: f64,
    /// Derivative w.r.t. the lower cut-point (zero for level 1).
    pub d_lower: f64,
    /// Derivative w.r.t. the upper cut-point (zero for level S).
    pub d_upper: f64,
    pub d_log_sigma: f64,
}

pub(crate) fn cell_grad(lo: f64, hi: f64, g: f64, sigma: f64) -> CellGrad {
    let a = (lo - g) / sigma;
    let b = (hi - g) / sigma;
    let ll = log_cdf_diff(a, b);
    // d ll / da and d ll / db; an infinite bound has zero density.
    let da = if a.is_finite() { -(log_pdf(a) - ll).exp() } else { 0.0 };
    let db = if b.is_finite() { (log_pdf(b) - ll).exp() } else { 0.0 };
    let a_da = if a.is_finite() { a * da } else { 0.0 };
    let b_db = if b.is_finite() { b * db } else { 0.0 };
    CellGrad {
        loglik: ll,
        d_score: -(da + db) / sigma,
        d_lower: da / sigma,
        d_upper: db / sigma,
        d_log_sigma: -(a_da + b_db),
    }
}

fn check_shapes(z: &LabelMatrix, x: &DMatrix<f64>, op: &OrdinalParams) -> Result<()> {
    op.check()?;
    if z.rows() != x.nrows() || z.outputs() != op.outputs() || x.ncols() != op.latent_dim() {
        return Err(VgpError::Shape(format!(
            "ordinal: labels {}x{}, latents {:?}, weights {:?}",
            z.rows(),
            z.outputs(),
            x.shape(),
            op.weights.shape()
        )));
    }
    if z.levels() != op.levels {
        return Err(VgpError::Shape(format!(
            "ordinal: labels have {} levels, model has {}",
            z.levels(),
            op.levels
        )));
    }
    Ok(())
}

/// Sum of cell log-likelihoods over all observed labels.
pub fn ordinal_loglik(z: &LabelMatrix, x: &DMatrix<f64>, op: &OrdinalParams) -> Result<f64> {
    check_shapes(z, x, op)?;
    let t = realize_thresholds(op);
    let sigma = op.noise_std();
    let mut total = 0.0;
    for i in 0..z.rows() {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        for c in 0..z.outputs() {
            if let Some(level) = z.get(i, c) {
                let (lo, hi) = bounds(&t, c, level as usize, op.levels);
                let g = score(op, c, &xi);
                total += log_cdf_diff((lo - g) / sigma, (hi - g) / sigma);
            }
        }
    }
    Ok(total)
}

/// Gradient of [`ordinal_loglik`] with respect to the latents and the
/// classifier parameters.
pub(crate) struct OrdinalGrad {
    pub loglik: f64,
    pub d_x: DMatrix<f64>,
    pub d_weights: DMatrix<f64>,
    /// `C x (S-1)`, w.r.t. the realized cut-points.
    pub d_thresholds: DMatrix<f64>,
    pub d_log_sigma: f64,
}

pub(crate) fn ordinal_loglik_grad(z: &LabelMatrix, x: &DMatrix<f64>, op: &OrdinalParams) -> Result<OrdinalGrad> {
    check_shapes(z, x, op)?;
    let t = realize_thresholds(op);
    let sigma = op.noise_std();
    let (n, q, c_out, s) = (x.nrows(), x.ncols(), op.outputs(), op.levels);
    let mut out = OrdinalGrad {
        loglik: 0.0,
        d_x: DMatrix::zeros(n, q),
        d_weights: DMatrix::zeros(c_out, q),
        d_thresholds: DMatrix::zeros(c_out, s - 1),
        d_log_sigma: 0.0,
    };
    for i in 0..n {
        for c in 0..c_out {
            let Some(level) = z.get(i, c) else { continue };
            let level = level as usize;
            let g: f64 = (0..q).map(|d| op.weights[(c, d)] * x[(i, d)]).sum();
            let (lo, hi) = bounds(&t, c, level, s);
            let cg = cell_grad(lo, hi, g, sigma);
            out.loglik += cg.loglik;
            for d in 0..q {
                out.d_x[(i, d)] += cg.d_score * op.weights[(c, d)];
                out.d_weights[(c, d)] += cg.d_score * x[(i, d)];
            }
            if level > 1 {
                out.d_thresholds[(c, level - 2)] += cg.d_lower;
            }
            if level < s {
                out.d_thresholds[(c, level - 1)] += cg.d_upper;
            }
            out.d_log_sigma += cg.d_log_sigma;
        }
    }
    Ok(out)
}

/// Chains threshold gradients through the base/log-increment
/// parameterization. Returns `(d_base, d_log_incr)`.
pub(crate) fn threshold_param_grad(op: &OrdinalParams, d_thresholds: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let c_out = op.outputs();
    let s = op.levels;
    let mut d_base = vec![0.0; c_out];
    let mut d_incr = DMatrix::zeros(c_out, s - 2);
    for c in 0..c_out {
        // every realized cut-point k depends on the base and on increments j < k
        let mut tail = 0.0;
        for k in (0..s - 1).rev() {
            tail += d_thresholds[(c, k)];
            if k > 0 {
                d_incr[(c, k - 1)] = tail * op.gamma_log_incr[(c, k - 1)].exp();
            }
        }
        d_base[c] = tail;
    }
    (d_base, d_incr)
}

/// Monte-Carlo estimate of `E_q[log p(Z | X)]` under the latent posterior.
pub fn expected_ordinal_loglik(
    z: &LabelMatrix,
    post: &LatentPosterior,
    op: &OrdinalParams,
    mc: &McConfig,
) -> Result<f64> {
    let draws = standard_normal_draws(mc, post.means.nrows(), post.means.ncols());
    let mut acc = 0.0;
    for xi in &draws {
        acc += ordinal_loglik(z, &reparameterize(post, xi), op)?;
    }
    Ok(acc / draws.len() as f64)
}

/// Most probable level per cell with the full probability vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPrediction {
    rows: usize,
    outputs: usize,
    pub levels: Vec<u32>,
    pub probabilities: Vec<Vec<f64>>,
}

impl LevelPrediction {
    pub fn level(&self, i: usize, c: usize) -> u32 {
        self.levels[i * self.outputs + c]
    }

    pub fn probs(&self, i: usize, c: usize) -> &[f64] {
        &self.probabilities[i * self.outputs + c]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Predicted levels of one output, in row order.
    pub fn column(&self, c: usize) -> Vec<u32> {
        (0..self.rows).map(|i| self.level(i, c)).collect()
    }
}

/// Arg-max level per cell; ties go to the lower level.
pub fn predict_levels(x_star: &DMatrix<f64>, op: &OrdinalParams) -> Result<LevelPrediction> {
    op.check()?;
    if x_star.ncols() != op.latent_dim() {
        return Err(VgpError::Shape(format!(
            "predict_levels: latents have {} columns, weights {}",
            x_star.ncols(),
            op.latent_dim()
        )));
    }
    let t = realize_thresholds(op);
    let sigma = op.noise_std();
    let (n, c_out) = (x_star.nrows(), op.outputs());
    let mut levels = Vec::with_capacity(n * c_out);
    let mut probabilities = Vec::with_capacity(n * c_out);
    for i in 0..n {
        let xi: Vec<f64> = x_star.row(i).iter().copied().collect();
        for c in 0..c_out {
            let lp = logprobs_from_score(&t, c, op.levels, score(op, c, &xi), sigma);
            let mut best = 0;
            for s in 1..lp.len() {
                if lp[s] > lp[best] {
                    best = s;
                }
            }
            levels.push(best as u32 + 1);
            probabilities.push(lp.iter().map(|l| l.exp()).collect());
        }
    }
    Ok(LevelPrediction {
        rows: n,
        outputs: c_out,
        levels,
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params_with(thresholds: &[f64], w: &[f64], sigma: f64) -> OrdinalParams {
        let levels = thresholds.len() + 1;
        let incr: Vec<f64> = thresholds.windows(2).map(|p| (p[1] - p[0]).ln()).collect();
        OrdinalParams {
            levels,
            weights: DMatrix::from_row_slice(1, w.len(), w),
            gamma_base: vec![thresholds[0]],
            gamma_log_incr: DMatrix::from_row_slice(1, levels - 2, &incr),
            log_noise_std: sigma.ln(),
        }
    }

    #[test]
    fn thresholds_from_increments() {
        let op = OrdinalParams {
            levels: 4,
            weights: DMatrix::zeros(1, 1),
            gamma_base: vec![0.0],
            gamma_log_incr: DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
            log_noise_std: 0.0,
        };
        let t = realize_thresholds(&op);
        assert_eq!(t.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);

        let two = params_with(&[0.7], &[1.0], 1.0);
        assert_eq!(realize_thresholds(&two)[(0, 0)], 0.7);
    }

    #[test]
    fn symmetric_binary_case() {
        let op = params_with(&[0.0], &[0.0, 0.0], 1.0);
        let lp = level_logprobs(&[0.3, -2.0], &op, 0);
        assert_relative_eq!(lp[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(lp[1], 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn three_level_middle_mass() {
        let op = params_with(&[-1.0, 1.0], &[1.0], 1.0);
        let lp = level_logprobs(&[0.0], &op, 0);
        // Phi(1) - Phi(-1)
        assert_relative_eq!(lp[1].exp(), 0.6826894921370859, epsilon = 1e-14);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);

        let z = LabelMatrix::new(1, 1, 3, vec![Some(2)]).unwrap();
        let ll = ordinal_loglik(&z, &DMatrix::zeros(1, 1), &op).unwrap();
        assert_relative_eq!(ll, 0.6826894921370859f64.ln(), epsilon = 1e-14);

        let pred = predict_levels(&DMatrix::zeros(1, 1), &op).unwrap();
        assert_eq!(pred.level(0, 0), 2);
    }

    #[test]
    fn large_score_moves_mass_to_top() {
        let op = params_with(&[-1.0, 0.0, 1.0], &[1.0], 0.5);
        let lp = level_logprobs(&[50.0], &op, 0);
        assert!(lp[3].exp() > 1.0 - 1e-15);
    }

    #[test]
    fn tie_goes_to_lower_level() {
        let op = params_with(&[0.25], &[1.0], 1.0);
        let pred = predict_levels(&DMatrix::from_element(1, 1, 0.25), &op).unwrap();
        assert_relative_eq!(pred.probs(0, 0)[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(pred.probs(0, 0)[1], 0.5, epsilon = 1e-15);
        assert_eq!(pred.level(0, 0), 1);
    }

    #[test]
    fn masked_and_saturated_labels() {
        let op = params_with(&[-1.0, 1.0], &[1.0], 0.05);
        let x = DMatrix::from_column_slice(3, 1, &[-3.0, 0.0, 3.0]);
        let masked = LabelMatrix::new(3, 1, 3, vec![None; 3]).unwrap();
        assert_eq!(ordinal_loglik(&masked, &x, &op).unwrap(), 0.0);
        let right = LabelMatrix::new(3, 1, 3, vec![Some(1), Some(2), Some(3)]).unwrap();
        assert!(ordinal_loglik(&right, &x, &op).unwrap() > -1e-10);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let err = LabelMatrix::new(2, 2, 3, vec![Some(1), Some(2), Some(4), None]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("column 0"), "{msg}");
        assert!(LabelMatrix::new(1, 1, 3, vec![Some(0)]).is_err());
    }

    #[test]
    fn intercept_shift_invariance() {
        // Shifting every cut-point and the score by the same constant, via a
        // constant latent column with unit weight, leaves the likelihood unchanged.
        let op = params_with(&[-0.5, 0.4, 1.1], &[0.8, 0.0], 0.7);
        let mut shifted = op.clone();
        shifted.weights[(0, 1)] = 1.0;
        shifted.gamma_base[0] += 2.5;
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.0, -1.2, 0.0, 2.0, 0.0]);
        let mut xs = x.clone();
        xs.column_mut(1).fill(2.5);
        let z = LabelMatrix::new(3, 1, 4, vec![Some(2), Some(1), Some(4)]).unwrap();
        assert_relative_eq!(
            ordinal_loglik(&z, &x, &op).unwrap(),
            ordinal_loglik(&z, &xs, &shifted).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(lo, hi, g, s) in &[
            (f64::NEG_INFINITY, 0.3, 0.1, 0.8),
            (-0.2, 0.9, 0.5, 0.3),
            (1.0, f64::INFINITY, -0.4, 1.3),
            (2.0, 3.0, -1.0, 0.4),
        ] {
            let cg = cell_grad(lo, hi, g, s);
            let f = |lo: f64, hi: f64, g: f64, s: f64| log_cdf_diff((lo - g) / s, (hi - g) / s);
            let dg = (f(lo, hi, g + h, s) - f(lo, hi, g - h, s)) / (2.0 * h);
            assert_relative_eq!(cg.d_score, dg, epsilon = 1e-8, max_relative = 1e-6);
            let dls = (f(lo, hi, g, s * h.exp()) - f(lo, hi, g, s * (-h).exp())) / (2.0 * h);
            assert_relative_eq!(cg.d_log_sigma, dls, epsilon = 1e-8, max_relative = 1e-6);
            if lo.is_finite() {
                let d = (f(lo + h, hi, g, s) - f(lo - h, hi, g, s)) / (2.0 * h);
                assert_relative_eq!(cg.d_lower, d, epsilon = 1e-8, max_relative = 1e-6);
            }
            if hi.is_finite() {
                let d = (f(lo, hi + h, g, s) - f(lo, hi - h, g, s)) / (2.0 * h);
                assert_relative_eq!(cg.d_upper, d, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }
}
