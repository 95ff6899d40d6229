//! The GP encoder (recognition model).
//!
//! Each latent mean `m_i` is replaced by its leave-one-out cavity prediction
//! from all other points, so the posterior over `x_i` is driven by the
//! observations of its neighbours rather than by a free parameter:
//!
//! ```text
//! A      = (K_r + sigma_r^2 I)^-1
//! mhat_i = m_i - [A M]_i / A_ii
//! s2_i   = 1 / A_ii
//! q(x_i) = N(mhat_i, diag(S_i) + s2_i I)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::kernel::{encoder_gram, rbf_iso, CholeskyFactor, GramMatrix, IsoRbfParams};

/// Per-point variational parameters: means `M` and log diagonal
/// covariances `log S`, both `N x q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    #[serde(with = "crate::matrix_serde")]
    pub means: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub log_vars: DMatrix<f64>,
}

impl VariationalState {
    pub fn new(means: DMatrix<f64>, log_vars: DMatrix<f64>) -> Result<Self> {
        if means.shape() != log_vars.shape() {
            return Err(VgpError::Shape(format!(
                "variational means {:?} vs log-variances {:?}",
                means.shape(),
                log_vars.shape()
            )));
        }
        Ok(Self { means, log_vars })
    }

    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.nrows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.means.ncols()
    }

    /// Copies out the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            means: self.means.select_rows(rows),
            log_vars: self.log_vars.select_rows(rows),
        }
    }
}

/// Leave-one-out predictive for every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityResult {
    pub means: DMatrix<f64>,
    pub variances: DVector<f64>,
}

/// Factorized Gaussian over the latents, `N x q` means and variances.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
}

impl LatentPosterior {
    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.nrows() == 0
    }
}

/// Encoder hyper-parameters: one isotropic RBF per view and a shared noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub kernels: Vec<IsoRbfParams>,
    pub log_noise_variance: f64,
}

impl EncoderParams {
    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn total_signal_variance(&self) -> f64 {
        self.kernels.iter().map(|k| k.signal_variance()).sum()
    }
}

/// Cavity output together with the intermediates needed for
/// back-propagation.
pub(crate) struct CavityWork {
    /// `(K_r + noise I)^-1`
    pub inv: DMatrix<f64>,
    /// `A M`
    pub am: DMatrix<f64>,
    pub result: CavityResult,
}

pub(crate) fn cavity_work(k: &DMatrix<f64>, noise: f64, m: &DMatrix<f64>) -> Result<CavityWork> {
    let n = k.nrows();
    if n < 2 {
        return Err(VgpError::Domain(format!("leave-one-out cavity needs at least 2 points, got {n}")));
    }
    if m.nrows() != n {
        return Err(VgpError::Shape(format!("cavity: Gram is {n}x{n}, means have {} rows", m.nrows())));
    }
    let inv = CholeskyFactor::new(k, noise)?.inverse();
    let am = &inv * m;
    let mut means = m.clone();
    let mut variances = DVector::zeros(n);
    for i in 0..n {
        let a = inv[(i, i)];
        variances[i] = 1.0 / a;
        for d in 0..m.ncols() {
            means[(i, d)] -= am[(i, d)] / a;
        }
    }
    Ok(CavityWork {
        inv,
        am,
        result: CavityResult { means, variances },
    })
}

/// Leave-one-out cavity means and variances of the encoder GP.
pub fn loo_cavity(k_r: &GramMatrix, encoder_noise: f64, m: &DMatrix<f64>) -> Result<CavityResult> {
    Ok(cavity_work(&k_r.values, encoder_noise, m)?.result)
}

/// Combines the cavity with the variational covariances.
pub fn posterior(cavity: &CavityResult, vs: &VariationalState) -> Result<LatentPosterior> {
    if cavity.means.shape() != vs.log_vars.shape() || cavity.variances.len() != vs.len() {
        return Err(VgpError::Shape(format!(
            "posterior: cavity {:?} vs variational state {:?}",
            cavity.means.shape(),
            vs.log_vars.shape()
        )));
    }
    let variances = DMatrix::from_fn(vs.len(), vs.latent_dim(), |i, d| {
        vs.log_vars[(i, d)].exp() + cavity.variances[i]
    });
    Ok(LatentPosterior {
        means: cavity.means.clone(),
        variances,
    })
}

/// `KL(q(X) || N(0, I))` for a factorized Gaussian posterior.
pub fn kl_to_prior(post: &LatentPosterior) -> Result<f64> {
    let mut kl = 0.0;
    for (mu, v) in post.means.iter().zip(post.variances.iter()) {
        if !(*v > 0.0) {
            return Err(VgpError::Domain(format!("posterior variance {v} is not positive")));
        }
        kl += 0.5 * (v + mu * mu - 1.0 - v.ln());
    }
    Ok(kl)
}

/// GP predictive of the latent targets at new inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub means: DMatrix<f64>,
    pub variances: DVector<f64>,
}

/// Projects new observations onto the latent space with the trained encoder.
///
/// The predictive covariance is shared across latent dimensions, so one
/// variance is returned per test point.
pub fn project(
    y_star: &[DMatrix<f64>],
    train_views: &[DMatrix<f64>],
    targets: &DMatrix<f64>,
    params: &EncoderParams,
) -> Result<Projection> {
    if y_star.len() != train_views.len() || y_star.len() != params.kernels.len() {
        return Err(VgpError::Shape(format!(
            "project: {} test views, {} training views, {} kernels",
            y_star.len(),
            train_views.len(),
            params.kernels.len()
        )));
    }
    let n_star = y_star.first().map_or(0, |y| y.nrows());
    for (v, (ys, yt)) in y_star.iter().zip(train_views).enumerate() {
        if ys.ncols() != yt.ncols() {
            return Err(VgpError::Shape(format!(
                "project: view {v} has {} columns, training data has {}",
                ys.ncols(),
                yt.ncols()
            )));
        }
        if ys.nrows() != n_star {
            return Err(VgpError::Shape(format!("project: view {v} has {} rows, expected {n_star}", ys.nrows())));
        }
    }
    let gram = encoder_gram(train_views, &params.kernels)?;
    if targets.nrows() != gram.size() {
        return Err(VgpError::Shape(format!(
            "project: {} targets for {} training rows",
            targets.nrows(),
            gram.size()
        )));
    }
    let factor = CholeskyFactor::new(&gram.values, params.noise_variance())?;
    let mut k_star = DMatrix::zeros(n_star, gram.size());
    for ((ys, yt), p) in y_star.iter().zip(train_views).zip(&params.kernels) {
        k_star += rbf_iso(ys, yt, p)?;
    }
    let alpha = factor.solve(targets);
    let means = &k_star * alpha;
    let kinv_kt = factor.solve(&k_star.transpose());
    let prior = params.total_signal_variance();
    let variances = DVector::from_fn(n_star, |i, _| {
        let explained: f64 = (0..gram.size()).map(|j| k_star[(i, j)] * kinv_kt[(j, i)]).sum();
        (prior - explained).max(1e-12)
    });
    Ok(Projection { means, variances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Leave-one-out GP prediction by refitting without each point.
    fn brute_force_loo(k: &DMatrix<f64>, noise: f64, m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let n = k.nrows();
        let mut means = DMatrix::zeros(n, m.ncols());
        let mut vars = vec![0.0; n];
        for i in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut kr = k.select_rows(&rest).select_columns(&rest);
            for j in 0..rest.len() {
                kr[(j, j)] += noise;
            }
            let kinv = kr.try_inverse().unwrap();
            let ki = DMatrix::from_fn(1, rest.len(), |_, j| k[(i, rest[j])]);
            let mr = m.select_rows(&rest);
            let mean = &ki * &kinv * mr;
            for d in 0..m.ncols() {
                means[(i, d)] = mean[(0, d)];
            }
            vars[i] = k[(i, i)] + noise - (&ki * &kinv * ki.transpose())[(0, 0)];
        }
        (means, vars)
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn two_point_cavity() {
        let k = GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let m = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let c = loo_cavity(&k, 0.0, &m).unwrap();
        let (bm, bv) = brute_force_loo(&k.values, 0.0, &m);
        // Each point is predicted from the other: 0.5 * 2 and 0.5 * 1.
        assert_relative_eq!(c.means[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.means[1], 0.5, epsilon = 1e-14);
        assert_relative_eq!(c.means, bm, epsilon = 1e-14);
        for i in 0..2 {
            assert_relative_eq!(c.variances[i], 0.75, epsilon = 1e-14);
            assert_relative_eq!(c.variances[i], bv[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_gram_reverts_to_prior() {
        let k = GramMatrix::new(DMatrix::identity(4, 4));
        let m = DMatrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 1.7);
        let c = loo_cavity(&k, 0.0, &m).unwrap();
        assert!(c.means.iter().all(|v| v.abs() < 1e-15));
        assert!(c.variances.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn random_cavity_matches_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &noise in &[0.0, 0.05] {
            let k = random_spd(&mut rng, 10);
            let m = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-2.0..2.0));
            let c = loo_cavity(&GramMatrix::new(k.clone()), noise, &m).unwrap();
            let (bm, bv) = brute_force_loo(&k, noise, &m);
            assert_relative_eq!(c.means, bm, max_relative = 1e-8);
            for i in 0..10 {
                assert_relative_eq!(c.variances[i], bv[i], max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn cavity_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_spd(&mut rng, 6);
        let m = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let perm = [3usize, 0, 5, 1, 4, 2];
        let kp = DMatrix::from_fn(6, 6, |i, j| k[(perm[i], perm[j])]);
        let mp = m.select_rows(&perm);
        let c = loo_cavity(&GramMatrix::new(k), 0.01, &m).unwrap();
        let cp = loo_cavity(&GramMatrix::new(kp), 0.01, &mp).unwrap();
        assert_relative_eq!(cp.means, c.means.select_rows(&perm), max_relative = 1e-10);
    }

    #[test]
    fn cavity_needs_two_points() {
        let k = GramMatrix::new(DMatrix::identity(1, 1));
        let r = loo_cavity(&k, 0.0, &DMatrix::zeros(1, 2));
        assert!(matches!(r, Err(VgpError::Domain(_))));
    }

    #[test]
    fn posterior_adds_variances() {
        let cavity = CavityResult {
            means: DMatrix::from_row_slice(2, 1, &[0.3, -0.2]),
            variances: DVector::from_vec(vec![1.0, 0.5]),
        };
        let vs = VariationalState::new(DMatrix::zeros(2, 1), DMatrix::from_row_slice(2, 1, &[0.0, -1e4])).unwrap();
        let p = posterior(&cavity, &vs).unwrap();
        assert_eq!(p.variances[(0, 0)], 2.0);
        assert_eq!(p.variances[(1, 0)], 0.5);
        assert_eq!(p.means, cavity.means);
    }

    #[test]
    fn kl_closed_forms() {
        let post = |mu: f64, v: f64| LatentPosterior {
            means: DMatrix::from_element(1, 1, mu),
            variances: DMatrix::from_element(1, 1, v),
        };
        assert_eq!(kl_to_prior(&post(0.0, 1.0)).unwrap(), 0.0);
        assert_relative_eq!(kl_to_prior(&post(1.0, 1.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(kl_to_prior(&post(0.0, 2.0)).unwrap(), 0.5 * (1.0 - 2f64.ln()), epsilon = 1e-15);
        assert_relative_eq!(kl_to_prior(&post(0.0, 2.0)).unwrap(), 0.15342640972002736, epsilon = 1e-15);
        assert!(matches!(kl_to_prior(&post(0.0, 0.0)), Err(VgpError::Domain(_))));
    }

    fn toy_views(rng: &mut ChaCha8Rng, n: usize) -> Vec<DMatrix<f64>> {
        vec![
            DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0)),
        ]
    }

    fn params(noise: f64) -> EncoderParams {
        EncoderParams {
            kernels: vec![IsoRbfParams::new(1.2, 0.8), IsoRbfParams::new(0.7, 1.5)],
            log_noise_variance: noise.ln(),
        }
    }

    #[test]
    fn project_interpolates_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let views = toy_views(&mut rng, 6);
        let m = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let star: Vec<_> = views.iter().map(|v| v.rows(2, 1).into_owned()).collect();
        let p = project(&star, &views, &m, &params(0.0)).unwrap();
        assert_relative_eq!(p.means[(0, 0)], m[(2, 0)], epsilon = 1e-8);
        assert_relative_eq!(p.means[(0, 1)], m[(2, 1)], epsilon = 1e-8);
        assert!(p.variances[0] < 1e-8);
    }

    #[test]
    fn project_far_point_reverts_to_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let views = toy_views(&mut rng, 5);
        let m = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let star = vec![DMatrix::from_element(1, 3, 1e3), DMatrix::from_element(1, 2, -1e3)];
        let p = project(&star, &views, &m, &params(0.01)).unwrap();
        assert_eq!(p.means[(0, 0)], 0.0);
        assert_relative_eq!(p.variances[0], 1.9, epsilon = 1e-12);
    }

    #[test]
    fn project_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let views = toy_views(&mut rng, 7);
        let star = toy_views(&mut rng, 3);
        let m = DMatrix::from_fn(7, 2, |_, _| rng.random_range(-1.0..1.0));
        let prm = params(0.05);
        let p = project(&star, &views, &m, &prm).unwrap();
        // textbook GP predictive with an explicit inverse
        let kern = |a: &[f64], b: &[f64], k: &IsoRbfParams| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            k.signal_variance() * (-0.5 * d2 / k.lengthscale().powi(2)).exp()
        };
        let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<_>>();
        let kfun = |va: &[DMatrix<f64>], i: usize, vb: &[DMatrix<f64>], j: usize| -> f64 {
            (0..2).map(|v| kern(&row(&va[v], i), &row(&vb[v], j), &prm.kernels[v])).sum()
        };
        let kxx = DMatrix::from_fn(7, 7, |i, j| kfun(&views, i, &views, j) + if i == j { 0.05 } else { 0.0 });
        let kinv = kxx.try_inverse().unwrap();
        for s in 0..3 {
            let ks = DMatrix::from_fn(1, 7, |_, j| kfun(&star, s, &views, j));
            let mean = &ks * &kinv * &m;
            let var = kfun(&star, s, &star, s) - (&ks * &kinv * ks.transpose())[(0, 0)];
            assert_relative_eq!(p.means[(s, 0)], mean[(0, 0)], max_relative = 1e-9);
            assert_relative_eq!(p.means[(s, 1)], mean[(0, 1)], max_relative = 1e-9);
            assert_relative_eq!(p.variances[s], var, max_relative = 1e-9);
        }
    }
}
