//! RBF kernels, Gram assembly and Cholesky-based solves shared by the
//! encoder and decoder Gaussian processes.
//!
//! All positive hyper-parameters are stored as logarithms so that any real
//! parameter vector handed out by the optimizer is valid.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};

/// Relative size of the first jitter added on factorization failure.
pub const JITTER_START: f64 = 1e-8;
/// Number of times the jitter is multiplied by ten before giving up.
pub const JITTER_MAX_TRIES: usize = 6;

/// Squared-exponential kernel with one lengthscale per input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArdRbfParams {
    pub log_signal_variance: f64,
    pub log_lengthscales: Vec<f64>,
}

impl ArdRbfParams {
    pub fn new(signal_variance: f64, lengthscales: &[f64]) -> Self {
        Self {
            log_signal_variance: signal_variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        }
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }
}

/// Squared-exponential kernel with a single shared lengthscale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoRbfParams {
    pub log_signal_variance: f64,
    pub log_lengthscale: f64,
}

impl IsoRbfParams {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Self {
        Self {
            log_signal_variance: signal_variance.ln(),
            log_lengthscale: lengthscale.ln(),
        }
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    /// Kernel value for a given squared distance.
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        let l2 = (2.0 * self.log_lengthscale).exp();
        self.signal_variance() * (-0.5 * d2 / l2).exp()
    }
}

/// Symmetric Gram matrix plus the diagonal jitter that was needed to
/// factorize it.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub jitter: f64,
}

impl GramMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self {
            values,
            jitter: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Pairwise squared Euclidean distances between the rows of `x1` and `x2`.
pub fn sq_dist(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x1.ncols() != x2.ncols() {
        return Err(VgpError::Shape(format!(
            "sq_dist: {} vs {} columns",
            x1.ncols(),
            x2.ncols()
        )));
    }
    let (n1, n2, d) = (x1.nrows(), x2.nrows(), x1.ncols());
    let mut out = DMatrix::zeros(n1, n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let mut s = 0.0;
            for k in 0..d {
                let diff = x1[(i, k)] - x2[(j, k)];
                s += diff * diff;
            }
            out[(i, j)] = s;
        }
    }
    Ok(out)
}

/// Squared distances among the rows of `x`, computed on the lower triangle
/// and mirrored so the result is exactly symmetric.
pub fn sq_dist_sym(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    // Row-major copy keeps the inner loop contiguous for wide inputs.
    let rows: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| x[(i, k)]).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let ri = &rows[i * d..(i + 1) * d];
        for j in 0..i {
            let rj = &rows[j * d..(j + 1) * d];
            let s: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

fn ard_sq_dist(x1: &DMatrix<f64>, x2: &DMatrix<f64>, inv_l2: &[f64], i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for (k, w) in inv_l2.iter().enumerate() {
        let diff = x1[(i, k)] - x2[(j, k)];
        s += diff * diff * w;
    }
    s
}

/// ARD squared-exponential cross-covariance between the rows of `x1` and
/// `x2`.
pub fn rbf_ard(x1: &DMatrix<f64>, x2: &DMatrix<f64>, p: &ArdRbfParams) -> Result<DMatrix<f64>> {
    let q = p.dim();
    if x1.ncols() != q || x2.ncols() != q {
        return Err(VgpError::Shape(format!(
            "rbf_ard: inputs have {} and {} columns, kernel expects {q}",
            x1.ncols(),
            x2.ncols()
        )));
    }
    let sv = p.signal_variance();
    let inv_l2: Vec<f64> = p.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
        sv * (-0.5 * ard_sq_dist(x1, x2, &inv_l2, i, j)).exp()
    }))
}

/// ARD Gram matrix of `x` with itself; exactly symmetric with diagonal equal
/// to the signal variance.
pub fn rbf_ard_sym(x: &DMatrix<f64>, p: &ArdRbfParams) -> Result<DMatrix<f64>> {
    let q = p.dim();
    if x.ncols() != q {
        return Err(VgpError::Shape(format!(
            "rbf_ard: input has {} columns, kernel expects {q}",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let sv = p.signal_variance();
    let inv_l2: Vec<f64> = p.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sv;
        for j in 0..i {
            let v = sv * (-0.5 * ard_sq_dist(x, x, &inv_l2, i, j)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Isotropic squared-exponential cross-covariance.
pub fn rbf_iso(x1: &DMatrix<f64>, x2: &DMatrix<f64>, p: &IsoRbfParams) -> Result<DMatrix<f64>> {
    Ok(sq_dist(x1, x2)?.map(|d2| p.eval_sq(d2)))
}

/// Summed isotropic kernels over all views: `K_r = sum_v k_v(Y_v, Y_v)`.
pub fn encoder_gram(views: &[DMatrix<f64>], params: &[IsoRbfParams]) -> Result<GramMatrix> {
    let dists: Vec<DMatrix<f64>> = views.iter().map(sq_dist_sym).collect();
    encoder_gram_from_sq_dists(&dists, params)
}

/// Same as [`encoder_gram`] with per-view squared distances precomputed.
pub fn encoder_gram_from_sq_dists(dists: &[DMatrix<f64>], params: &[IsoRbfParams]) -> Result<GramMatrix> {
    if dists.is_empty() {
        return Err(VgpError::Shape("encoder_gram: no views".into()));
    }
    if dists.len() != params.len() {
        return Err(VgpError::Shape(format!(
            "encoder_gram: {} views but {} parameter records",
            dists.len(),
            params.len()
        )));
    }
    let n = dists[0].nrows();
    if let Some((v, d)) = dists.iter().enumerate().find(|(_, d)| d.nrows() != n) {
        return Err(VgpError::Shape(format!(
            "encoder_gram: view {v} has {} rows, expected {n}",
            d.nrows()
        )));
    }
    let mut k = DMatrix::zeros(n, n);
    for (d2, p) in dists.iter().zip(params) {
        k += d2.map(|x| p.eval_sq(x));
    }
    Ok(GramMatrix::new(k))
}

/// Cholesky factor of `K + (noise + jitter) I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factorizes `K + noise I`, escalating diagonal jitter on failure.
    pub fn new(k: &DMatrix<f64>, noise: f64) -> Result<Self> {
        let n = k.nrows();
        if n == 0 || k.ncols() != n {
            return Err(VgpError::Shape(format!(
                "cholesky: matrix is {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        let mut base = k.clone();
        for i in 0..n {
            base[(i, i)] += noise;
        }
        if let Some(chol) = try_chol(base.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mean_diag = (base.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut jitter = JITTER_START * mean_diag;
        for attempt in 0..JITTER_MAX_TRIES {
            if attempt > 0 {
                jitter *= 10.0;
            }
            let mut m = base.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = try_chol(m) {
                log::debug!("cholesky needed jitter {jitter:e}");
                return Ok(Self { chol, jitter });
            }
        }
        Err(VgpError::Factorization { jitter })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

fn try_chol(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m)?;
    let ok = chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
    ok.then_some(chol)
}

/// Solves `(K + noise I) X = B` and returns `(X, log|K + noise I|)`.
///
/// Any jitter needed for the factorization is recorded in `k.jitter` and
/// included in the returned log-determinant.
pub fn chol_solve_logdet(k: &mut GramMatrix, noise: f64, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if b.nrows() != k.size() {
        return Err(VgpError::Shape(format!(
            "chol_solve_logdet: rhs has {} rows, matrix is {}",
            b.nrows(),
            k.size()
        )));
    }
    let f = CholeskyFactor::new(&k.values, noise)?;
    k.jitter = f.jitter();
    Ok((f.solve(b), f.logdet()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ard_zero_distance_gives_signal_variance() {
        let x = DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]);
        let p = ArdRbfParams::new(2.0, &[0.5, 1.0, 3.0]);
        assert_relative_eq!(rbf_ard(&x, &x, &p).unwrap()[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ard_unit_distance_scalar() {
        let a = DMatrix::from_element(1, 1, 0.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let p = ArdRbfParams::new(1.0, &[1.0]);
        // exp(-1/2)
        assert_relative_eq!(rbf_ard(&a, &b, &p).unwrap()[(0, 0)], 0.6065306597126334, epsilon = 1e-15);
    }

    #[test]
    fn ard_long_lengthscale_limit() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.0, 4.0]);
        let p = ArdRbfParams::new(1.7, &[1e9, 1e9]);
        let k = rbf_ard(&a, &a, &p).unwrap();
        for v in k.iter() {
            assert_relative_eq!(*v, 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn ard_rejects_wrong_width() {
        let a = DMatrix::zeros(2, 3);
        let p = ArdRbfParams::new(1.0, &[1.0, 1.0]);
        assert!(matches!(rbf_ard(&a, &a, &p), Err(VgpError::Shape(_))));
    }

    #[test]
    fn encoder_gram_duplicate_rows() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 5.0, -1.0]);
        let p = [IsoRbfParams::new(1.3, 0.7)];
        let k = encoder_gram(&[y], &p).unwrap();
        assert_relative_eq!(k.values[(0, 1)], 1.3, epsilon = 1e-15);
    }

    #[test]
    fn encoder_gram_two_unit_views_diagonal() {
        let y1 = DMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64 * 0.1);
        let y2 = DMatrix::from_fn(4, 5, |i, j| ((i + j) as f64).sin());
        let p = [IsoRbfParams::new(1.0, 1.0), IsoRbfParams::new(1.0, 2.0)];
        let k = encoder_gram(&[y1, y2], &p).unwrap();
        for i in 0..4 {
            assert_eq!(k.values[(i, i)], 2.0);
        }
    }

    #[test]
    fn encoder_gram_mismatched_rows() {
        let p = [IsoRbfParams::new(1.0, 1.0), IsoRbfParams::new(1.0, 1.0)];
        let r = encoder_gram(&[DMatrix::zeros(3, 2), DMatrix::zeros(4, 2)], &p);
        assert!(matches!(r, Err(VgpError::Shape(_))));
    }

    #[test]
    fn solve_identity() {
        let mut k = GramMatrix::new(DMatrix::identity(3, 3));
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let (x, ld) = chol_solve_logdet(&mut k, 0.0, &b).unwrap();
        assert_eq!(x, b);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn solve_two_by_two() {
        let mut k = GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let (x, ld) = chol_solve_logdet(&mut k, 0.0, &b).unwrap();
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(ld, 0.75f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn scaled_identity_logdet() {
        let mut k = GramMatrix::new(DMatrix::identity(5, 5));
        let (_, ld) = chol_solve_logdet(&mut k, 3.0, &DMatrix::zeros(5, 1)).unwrap();
        assert_relative_eq!(ld, 5.0 * 4f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let mut k = GramMatrix::new(DMatrix::from_element(3, 3, 1.0));
        let (_, _) = chol_solve_logdet(&mut k, 0.0, &DMatrix::zeros(3, 1)).unwrap();
        assert!(k.jitter > 0.0);
        assert!(k.jitter <= 1e-8 * 1e5 * 1.0000001);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let mut k = GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        match chol_solve_logdet(&mut k, 0.0, &DMatrix::zeros(2, 1)) {
            Err(VgpError::Factorization { jitter }) => assert!(jitter > 0.0),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }
}
