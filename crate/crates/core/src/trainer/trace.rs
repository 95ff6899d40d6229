use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};

/// One periodic evaluation during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub datapoints: usize,
    /// Bound on the training rows divided by their count.
    pub f2_per_point: f64,
    /// Held-out NLPD per view (NaN without a test split).
    pub nlpd: Vec<f64>,
    pub icc_mean: f64,
    pub mse_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub num_views: usize,
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn new(num_views: usize) -> Self {
        Self {
            num_views,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> String {
        let mut h = String::from("step,datapoints,f2_per_point");
        for v in 0..self.num_views {
            let _ = write!(h, ",nlpd_view_{v}");
        }
        h.push_str(",icc_mean,mse_mean");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.step, r.datapoints, r.f2_per_point);
            for x in &r.nlpd {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{},{}", r.icc_mean, r.mse_mean);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| VgpError::io(path, e))
    }

    pub fn f2_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f2_per_point).collect()
    }
}

/// Trailing moving average; the first `window - 1` entries average over
/// what is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (i, x) in xs.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = TrainingTrace::new(2);
        t.records.push(TraceRecord {
            step: 20,
            datapoints: 2000,
            f2_per_point: -1.5,
            nlpd: vec![3.25, f64::NAN],
            icc_mean: 0.5,
            mse_mean: 0.75,
        });
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,datapoints,f2_per_point,nlpd_view_0,nlpd_view_1,icc_mean,mse_mean"
        );
        assert_eq!(lines.next().unwrap(), "20,2000,-1.5,3.25,NaN,0.5,0.75");
    }

    #[test]
    fn moving_average_values() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(m, vec![1.0, 1.5, 2.5, 3.5]);
    }
}
