use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_update: Vec<f64>,
}

impl AdaDeltaState {
    pub fn new(len: usize) -> Self {
        Self {
            sq_grad: vec![0.0; len],
            sq_update: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.sq_grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_grad.is_empty()
    }
}

#[inline]
fn update(p: &mut f64, g: f64, eg: &mut f64, ed: &mut f64, rho: f64, eps: f64) {
    *eg = rho * *eg + (1.0 - rho) * g * g;
    let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
    *ed = rho * *ed + (1.0 - rho) * delta * delta;
    *p += delta;
}

fn check(params: &[f64], grad: &[f64], st: &AdaDeltaState) -> Result<()> {
    if params.len() != grad.len() || params.len() != st.len() {
        return Err(VgpError::Shape(format!(
            "adadelta: {} parameters, {} gradients, {} accumulators",
            params.len(),
            grad.len(),
            st.len()
        )));
    }
    Ok(())
}

/// One AdaDelta step minimizing along `grad`. Pass the negated gradient of
/// a quantity to be maximized.
pub fn adadelta_step(params: &mut [f64], grad: &[f64], st: &mut AdaDeltaState, rho: f64, eps: f64) -> Result<()> {
    check(params, grad, st)?;
    for k in 0..params.len() {
        update(&mut params[k], grad[k], &mut st.sq_grad[k], &mut st.sq_update[k], rho, eps);
    }
    Ok(())
}

/// AdaDelta restricted to `active` coordinates; all other parameters and
/// their accumulators are left untouched.
pub fn adadelta_step_masked(
    params: &mut [f64],
    grad: &[f64],
    st: &mut AdaDeltaState,
    active: &[usize],
    rho: f64,
    eps: f64,
) -> Result<()> {
    check(params, grad, st)?;
    if let Some(&bad) = active.iter().find(|&&k| k >= params.len()) {
        return Err(VgpError::Shape(format!("adadelta: index {bad} out of range")));
    }
    for &k in active {
        update(&mut params[k], grad[k], &mut st.sq_grad[k], &mut st.sq_update[k], rho, eps);
    }
    Ok(())
}
