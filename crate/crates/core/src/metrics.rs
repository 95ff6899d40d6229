//! Evaluation metrics: MSE and ICC(3,1) for ordinal predictions, NLPD for
//! reconstructions.
//!
//! ICC(3,1) is the two-way mixed, single-rater consistency form of Shrout and
//! Fleiss with `k = 2` raters (ground truth and model):
//!
//! ```text
//! ICC(3,1) = (MSR - MSE) / (MSR + (k - 1) MSE)
//! ```
//!
//! where `MSR` is the between-target mean square and `MSE` the residual mean
//! square after removing target and rater main effects. Predictions are
//! pooled over a split before computing the statistic.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::ordinal::{LabelMatrix, LevelPrediction};

/// Mean squared difference between two equally long sequences.
pub fn mse(z_true: &[f64], z_pred: &[f64]) -> Result<f64> {
    if z_true.len() != z_pred.len() {
        return Err(VgpError::Shape(format!("mse: {} vs {} values", z_true.len(), z_pred.len())));
    }
    if z_true.is_empty() {
        return Err(VgpError::Domain("mse of an empty sequence".into()));
    }
    let s: f64 = z_true.iter().zip(z_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / z_true.len() as f64)
}

/// ICC(3,1) between two raters. Returns NaN (and logs a warning) when the
/// statistic is undefined because both mean squares vanish.
pub fn icc31(z_true: &[f64], z_pred: &[f64]) -> Result<f64> {
    let n = z_true.len();
    if n != z_pred.len() {
        return Err(VgpError::Shape(format!("icc: {} vs {} values", n, z_pred.len())));
    }
    if n < 2 {
        return Err(VgpError::Domain(format!("icc needs at least 2 targets, got {n}")));
    }
    let k = 2.0;
    let nf = n as f64;
    let mean_a = z_true.iter().sum::<f64>() / nf;
    let mean_b = z_pred.iter().sum::<f64>() / nf;
    let grand = 0.5 * (mean_a + mean_b);
    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for (a, b) in z_true.iter().zip(z_pred) {
        let row_mean = 0.5 * (a + b);
        ss_rows += k * (row_mean - grand).powi(2);
        ss_total += (a - grand).powi(2) + (b - grand).powi(2);
    }
    let ss_cols = nf * ((mean_a - grand).powi(2) + (mean_b - grand).powi(2));
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let msr = ss_rows / (nf - 1.0);
    let mse = ss_err / ((nf - 1.0) * (k - 1.0));
    let denom = msr + (k - 1.0) * mse;
    if denom <= 0.0 {
        log::warn!("icc undefined: no between-target or residual variance");
        return Ok(f64::NAN);
    }
    Ok((msr - mse) / denom)
}

/// Mean over points of `-sum_d log N(y_d; mu_d, var)`, one predictive
/// variance per point shared by its dimensions.
pub fn nlpd(y: &DMatrix<f64>, means: &DMatrix<f64>, variances: &DVector<f64>) -> Result<f64> {
    if y.shape() != means.shape() || variances.len() != y.nrows() {
        return Err(VgpError::Shape(format!(
            "nlpd: targets {:?}, means {:?}, {} variances",
            y.shape(),
            means.shape(),
            variances.len()
        )));
    }
    if y.nrows() == 0 {
        return Err(VgpError::Domain("nlpd of an empty set".into()));
    }
    let mut total = 0.0;
    for i in 0..y.nrows() {
        let v = variances[i];
        if !(v > 0.0) {
            return Err(VgpError::Domain(format!("predictive variance {v} at row {i}")));
        }
        for d in 0..y.ncols() {
            let r = y[(i, d)] - means[(i, d)];
            total += 0.5 * ((2.0 * PI * v).ln() + r * r / v);
        }
    }
    Ok(total / y.nrows() as f64)
}

/// Observed (truth, prediction) pairs of one output.
pub fn paired_levels(labels: &LabelMatrix, pred: &LevelPrediction, c: usize) -> (Vec<f64>, Vec<f64>) {
    labels
        .column(c)
        .into_iter()
        .map(|(i, z)| (z as f64, pred.level(i, c) as f64))
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputMetrics {
    pub output: String,
    pub count: usize,
    pub mse: f64,
    pub icc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewNlpd {
    pub view: String,
    pub nlpd: f64,
}

/// Per-output classification metrics, their averages, and per-view NLPD.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub outputs: Vec<OutputMetrics>,
    pub mean_mse: f64,
    pub mean_icc: f64,
    pub nlpd: Vec<ViewNlpd>,
}

impl MetricReport {
    /// Scores predictions against labels over unmasked cells only.
    pub fn classification(labels: &LabelMatrix, pred: &LevelPrediction, names: &[String]) -> Result<Self> {
        let mut outputs = Vec::new();
        for c in 0..labels.outputs() {
            let (t, p) = paired_levels(labels, pred, c);
            let name = names.get(c).cloned().unwrap_or_else(|| format!("output_{c}"));
            let (m, icc) = if t.is_empty() {
                (f64::NAN, f64::NAN)
            } else if t.len() < 2 {
                (mse(&t, &p)?, f64::NAN)
            } else {
                (mse(&t, &p)?, icc31(&t, &p)?)
            };
            outputs.push(OutputMetrics {
                output: name,
                count: t.len(),
                mse: m,
                icc,
            });
        }
        let avg = |f: fn(&OutputMetrics) -> f64| {
            let vals: Vec<f64> = outputs.iter().map(f).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let mean_mse = avg(|o| o.mse);
        let mean_icc = avg(|o| o.icc);
        Ok(Self {
            outputs,
            mean_mse,
            mean_icc,
            nlpd: Vec::new(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| VgpError::Json {
            path: path.into(),
            source: e,
        })?;
        std::fs::write(path, s).map_err(|e| VgpError::io(path, e))
    }

    /// Long-format CSV: `kind,name,count,mse,icc,nlpd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("kind,name,count,mse,icc,nlpd\n");
        for o in &self.outputs {
            out.push_str(&format!("output,{},{},{},{},\n", o.output, o.count, o.mse, o.icc));
        }
        out.push_str(&format!("average,all,,{},{},\n", self.mean_mse, self.mean_icc));
        for v in &self.nlpd {
            out.push_str(&format!("view,{},,,,{}\n", v.view, v.nlpd));
        }
        let mut f = std::fs::File::create(path).map_err(|e| VgpError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| VgpError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_relative_eq!(mse(&[1.0, 3.0, 5.0], &[2.0, 3.0, 3.0]).unwrap(), 5.0 / 3.0, epsilon = 1e-15);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn icc_perfect_and_offset_agreement() {
        let t = [1.0, 2.0, 3.0, 2.0, 5.0];
        assert_relative_eq!(icc31(&t, &t).unwrap(), 1.0, epsilon = 1e-15);
        let shifted: Vec<f64> = t.iter().map(|v| v + 1.5).collect();
        assert_relative_eq!(icc31(&t, &shifted).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn icc_constant_is_undefined() {
        assert!(icc31(&[2.0, 2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap().is_nan());
        assert!(icc31(&[1.0], &[1.0]).is_err());
    }

    /// Two-way ANOVA table built from explicit cell residuals.
    fn icc_anova_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let data: Vec<[f64; 2]> = a.iter().zip(b).map(|(x, y)| [*x, *y]).collect();
        let grand: f64 = data.iter().map(|r| r[0] + r[1]).sum::<f64>() / (2 * n) as f64;
        let row_mean: Vec<f64> = data.iter().map(|r| (r[0] + r[1]) / 2.0).collect();
        let col_mean: Vec<f64> = (0..2).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut ss_r = 0.0;
        let mut ss_e = 0.0;
        for i in 0..n {
            ss_r += 2.0 * (row_mean[i] - grand).powi(2);
            for j in 0..2 {
                let resid = data[i][j] - row_mean[i] - col_mean[j] + grand;
                ss_e += resid * resid;
            }
        }
        let msr = ss_r / (n as f64 - 1.0);
        let mse = ss_e / (n as f64 - 1.0);
        (msr - mse) / (msr + mse)
    }

    #[test]
    fn icc_matches_anova_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<f64> = (0..20).map(|_| rng.random_range(1..=5) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-1..=1) as f64).collect();
        assert_relative_eq!(icc31(&a, &b).unwrap(), icc_anova_oracle(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn nlpd_unit_density() {
        let y = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -1.0, 0.0, 2.0]);
        let v = DVector::from_element(2, 1.0 / (2.0 * PI));
        assert_relative_eq!(nlpd(&y, &y, &v).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn nlpd_variance_doubling() {
        let y = DMatrix::from_row_slice(1, 1, &[1.0]);
        let mu = DMatrix::from_row_slice(1, 1, &[0.0]);
        let a = nlpd(&y, &mu, &DVector::from_element(1, 0.5)).unwrap();
        let b = nlpd(&y, &mu, &DVector::from_element(1, 1.0)).unwrap();
        // +1/2 log 2 from the normalizer, residual term 1/(2*0.5) -> 1/(2*1)
        assert_relative_eq!(b - a, 0.5 * 2f64.ln() + 0.5 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn nlpd_matches_scalar_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let y = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let mu = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let v = DVector::from_fn(5, |_, _| rng.random_range(0.1..2.0));
        let normal_pdf = |x: f64, m: f64, s2: f64| (-(x - m).powi(2) / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
        let mut want = 0.0;
        for i in 0..5 {
            for d in 0..3 {
                want -= normal_pdf(y[(i, d)], mu[(i, d)], v[i]).ln();
            }
        }
        assert_relative_eq!(nlpd(&y, &mu, &v).unwrap(), want / 5.0, max_relative = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn icc_ignores_rater_offset(
            vals in proptest::collection::vec((-5.0f64..5.0, -1.0f64..1.0), 3..30),
            offset in -10.0f64..10.0,
        ) {
            let a: Vec<f64> = vals.iter().map(|p| p.0).collect();
            let b: Vec<f64> = vals.iter().map(|p| p.0 + p.1).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + offset).collect();
            let x = icc31(&a, &b).unwrap();
            let y = icc31(&a, &b2).unwrap();
            proptest::prop_assert!((x - y).abs() < 1e-9 || (x.is_nan() && y.is_nan()));
            if x.is_finite() {
                proptest::prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
            }
        }

        #[test]
        fn mse_is_permutation_invariant(
            vals in proptest::collection::vec((1u32..6, 1u32..6), 1..25),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = vals.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(u32, u32)]| -> (Vec<f64>, Vec<f64>) {
                v.iter().map(|p| (p.0 as f64, p.1 as f64)).unzip()
            };
            let (a, b) = split(&vals);
            let (c, d) = split(&shuffled);
            proptest::prop_assert!((mse(&a, &b).unwrap() - mse(&c, &d).unwrap()).abs() < 1e-12);
        }
    }
}
