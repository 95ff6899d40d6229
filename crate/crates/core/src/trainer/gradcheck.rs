use serde::{Deserialize, Serialize};

use super::objective::Objective;
use super::state::{ModelState, ParamGroup};
use crate::error::Result;
use crate::sampling::McConfig;

/// Settings of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Largest discrepancy found in one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: ParamGroup,
    pub count: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: Option<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

impl GradCheckReport {
    /// Compares two gradients coordinate by coordinate over the given
    /// group layout.
    pub fn from_vectors(
        analytic: &[f64],
        numeric: &[f64],
        ranges: &[(ParamGroup, std::ops::Range<usize>)],
        tolerance: f64,
    ) -> Self {
        let groups = ranges
            .iter()
            .map(|(g, r)| {
                let mut worst = (None, 0.0);
                for k in r.clone() {
                    let e = relative_error(analytic[k], numeric[k]);
                    if worst.0.is_none() || e > worst.1 || e.is_nan() {
                        worst = (Some(k), e);
                    }
                }
                GroupError {
                    group: *g,
                    count: r.len(),
                    max_rel_error: worst.1,
                    worst_index: worst.0,
                    passed: worst.1 < tolerance,
                }
            })
            .collect();
        Self { groups, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    /// One line per group: `name count max_rel_error PASS|FAIL`.
    pub fn summary(&self) -> String {
        self.groups
            .iter()
            .map(|g| {
                format!(
                    "{:<8} n={:<5} max_rel_err={:.3e} {}\n",
                    g.group.name(),
                    g.count,
                    g.max_rel_error,
                    if g.passed { "PASS" } else { "FAIL" }
                )
            })
            .collect()
    }
}

/// Central differences of the bound against its analytic gradient, with
/// the Monte-Carlo draws held fixed.
pub fn grad_check(
    obj: &Objective<'_>,
    state: &ModelState,
    batch: &[usize],
    mc: &McConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = obj.elbo_grad(state, batch, mc)?;
    let flat = state.to_flat();
    let mut numeric = vec![0.0; flat.len()];
    let mut probe = state.clone();
    let mut p = flat.clone();
    for k in 0..flat.len() {
        p[k] = flat[k] + cfg.step;
        probe.set_flat(&p)?;
        let up = obj.elbo(&probe, batch, mc)?;
        p[k] = flat[k] - cfg.step;
        probe.set_flat(&p)?;
        let down = obj.elbo(&probe, batch, mc)?;
        p[k] = flat[k];
        numeric[k] = (up - down) / (2.0 * cfg.step);
    }
    Ok(GradCheckReport::from_vectors(&analytic, &numeric, &state.group_ranges(), cfg.tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_gradient_is_flagged() {
        let ranges = vec![(ParamGroup::Means, 0..2), (ParamGroup::Encoder, 2..3)];
        let good = [1.0, -2.0, 0.5];
        let ok = GradCheckReport::from_vectors(&good, &good, &ranges, 1e-4);
        assert!(ok.passed());
        let bad = [1.0, -2.0 * 1.01, 0.5];
        let r = GradCheckReport::from_vectors(&bad, &good, &ranges, 1e-4);
        assert!(!r.passed());
        assert!(!r.groups[0].passed && r.groups[1].passed);
        assert_eq!(r.groups[0].worst_index, Some(1));
        assert!(r.summary().contains("FAIL"));
    }

    #[test]
    fn nan_never_passes() {
        let ranges = vec![(ParamGroup::Ordinal, 0..1)];
        let r = GradCheckReport::from_vectors(&[f64::NAN], &[0.0], &ranges, 1e-4);
        assert!(!r.passed());
    }
}
