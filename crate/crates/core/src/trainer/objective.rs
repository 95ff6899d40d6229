use nalgebra::{DMatrix, DVector};

use super::state::ModelState;
use crate::error::{Result, VgpError};
use crate::generative::{decoder_loglik, decoder_loglik_grad};
use crate::kernel::sq_dist_sym;
use crate::ordinal::{ordinal_loglik, ordinal_loglik_grad, threshold_param_grad, LabelMatrix};
use crate::recognition::{cavity_work, kl_to_prior, CavityWork, LatentPosterior};
use crate::sampling::{standard_normal_draws, McConfig, ReparamScale};

/// Rows up to which pairwise distances and `Y Y'` are precomputed once.
const PAIR_CACHE_LIMIT: usize = 2000;

/// The lower bound over minibatches of a fixed training set.
pub struct Objective<'a> {
    views: &'a [DMatrix<f64>],
    labels: Option<&'a LabelMatrix>,
    sq_dists: Option<Vec<DMatrix<f64>>>,
    outer: Option<Vec<DMatrix<f64>>>,
}

/// The value of the bound split into its terms, all summed over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundTerms {
    pub reconstruction: f64,
    /// Unweighted expected ordinal log-likelihood.
    pub ordinal: f64,
    pub kl: f64,
    pub total: f64,
}

struct Forward {
    kernels: Vec<DMatrix<f64>>,
    dists: Vec<DMatrix<f64>>,
    cav: CavityWork,
    post: LatentPosterior,
    log_vars: DMatrix<f64>,
    means: DMatrix<f64>,
    draws: Vec<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(views: &'a [DMatrix<f64>], labels: Option<&'a LabelMatrix>) -> Self {
        let n = views.first().map_or(0, |v| v.nrows());
        let (sq_dists, outer) = if n <= PAIR_CACHE_LIMIT {
            (
                Some(views.iter().map(sq_dist_sym).collect()),
                Some(views.iter().map(|v| v * v.transpose()).collect()),
            )
        } else {
            (None, None)
        };
        Self {
            views,
            labels,
            sq_dists,
            outer,
        }
    }

    pub fn num_points(&self) -> usize {
        self.views.first().map_or(0, |v| v.nrows())
    }

    pub fn views(&self) -> &[DMatrix<f64>] {
        self.views
    }

    fn check(&self, state: &ModelState, batch: &[usize]) -> Result<()> {
        if batch.len() < 2 {
            return Err(VgpError::Domain(format!("batch needs at least 2 points, got {}", batch.len())));
        }
        let n = self.num_points();
        if state.num_points() != n {
            return Err(VgpError::Shape(format!("model holds {} points, data has {n}", state.num_points())));
        }
        if state.encoder.kernels.len() != self.views.len() || state.decoders.len() != self.views.len() {
            return Err(VgpError::Shape(format!(
                "model has {} encoder kernels and {} decoders for {} views",
                state.encoder.kernels.len(),
                state.decoders.len(),
                self.views.len()
            )));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
            return Err(VgpError::Shape(format!("batch index {bad} out of range for {n} points")));
        }
        if self.labels.is_some() && state.ordinal.is_none() && state.ordinal_weight != 0.0 {
            return Err(VgpError::Config("labels given but the model has no ordinal parameters".into()));
        }
        Ok(())
    }

    fn pair_block(cache: &Option<Vec<DMatrix<f64>>>, v: usize, batch: &[usize], fallback: impl FnOnce() -> DMatrix<f64>) -> DMatrix<f64> {
        match cache {
            Some(c) => c[v].select_rows(batch).select_columns(batch),
            None => fallback(),
        }
    }

    fn outer_block(&self, v: usize, batch: &[usize]) -> DMatrix<f64> {
        Self::pair_block(&self.outer, v, batch, || {
            let y = self.views[v].select_rows(batch);
            &y * y.transpose()
        })
    }

    fn forward(&self, state: &ModelState, batch: &[usize], mc: &McConfig) -> Result<Forward> {
        self.check(state, batch)?;
        let b = batch.len();
        let q = state.latent_dim();
        let mut dists = Vec::with_capacity(self.views.len());
        let mut kernels = Vec::with_capacity(self.views.len());
        let mut k_r = DMatrix::zeros(b, b);
        for (v, p) in state.encoder.kernels.iter().enumerate() {
            let d2 = Self::pair_block(&self.sq_dists, v, batch, || sq_dist_sym(&self.views[v].select_rows(batch)));
            let k = d2.map(|x| p.eval_sq(x));
            k_r += &k;
            kernels.push(k);
            dists.push(d2);
        }
        let means = state.variational.means.select_rows(batch);
        let log_vars = state.variational.log_vars.select_rows(batch);
        let cav = cavity_work(&k_r, state.encoder.noise_variance(), &means)?;
        let variances = DMatrix::from_fn(b, q, |i, d| log_vars[(i, d)].exp() + cav.result.variances[i]);
        let post = LatentPosterior {
            means: cav.result.means.clone(),
            variances,
        };
        let draws = standard_normal_draws(mc, b, q);
        Ok(Forward {
            kernels,
            dists,
            cav,
            post,
            log_vars,
            means,
            draws,
        })
    }

    fn sample(state: &ModelState, f: &Forward, xi: &DMatrix<f64>) -> DMatrix<f64> {
        let (b, q) = xi.shape();
        DMatrix::from_fn(b, q, |i, d| {
            let scale = match state.reparam {
                ReparamScale::SqrtOfSum => f.post.variances[(i, d)].sqrt(),
                ReparamScale::SumOfSqrt => (0.5 * f.log_vars[(i, d)]).exp() + f.cav.result.variances[i].sqrt(),
            };
            f.post.means[(i, d)] + scale * xi[(i, d)]
        })
    }

    fn ordinal_active(&self, state: &ModelState) -> bool {
        self.labels.is_some() && state.ordinal.is_some() && state.ordinal_weight != 0.0
    }

    /// Bound on the batch broken into its terms.
    pub fn terms(&self, state: &ModelState, batch: &[usize], mc: &McConfig) -> Result<BoundTerms> {
        let f = self.forward(state, batch, mc)?;
        let ys: Vec<DMatrix<f64>> = self.views.iter().map(|y| y.select_rows(batch)).collect();
        let z = self.labels.filter(|_| self.ordinal_active(state)).map(|l| l.select(batch));
        let mut rec = 0.0;
        let mut ord = 0.0;
        for xi in &f.draws {
            let x = Self::sample(state, &f, xi);
            for (y, p) in ys.iter().zip(&state.decoders) {
                rec += decoder_loglik(y, &x, p)?;
            }
            if let (Some(z), Some(op)) = (&z, &state.ordinal) {
                ord += ordinal_loglik(z, &x, op)?;
            }
        }
        let s = f.draws.len() as f64;
        let (rec, ord) = (rec / s, ord / s);
        let kl = kl_to_prior(&f.post)?;
        Ok(BoundTerms {
            reconstruction: rec,
            ordinal: ord,
            kl,
            total: rec + state.ordinal_weight * ord - kl,
        })
    }

    /// Monte-Carlo lower bound on the batch.
    pub fn elbo(&self, state: &ModelState, batch: &[usize], mc: &McConfig) -> Result<f64> {
        Ok(self.terms(state, batch, mc)?.total)
    }

    /// Bound and its gradient at fixed draws, laid out like
    /// [`ModelState::to_flat`]. Entries of rows outside the batch are zero.
    pub fn elbo_grad(&self, state: &ModelState, batch: &[usize], mc: &McConfig) -> Result<(f64, Vec<f64>)> {
        let f = self.forward(state, batch, mc)?;
        let (b, q) = (batch.len(), state.latent_dim());
        let n_views = self.views.len();
        let weight = state.ordinal_weight;
        let z = self.labels.filter(|_| self.ordinal_active(state)).map(|l| l.select(batch));
        let outer: Vec<DMatrix<f64>> = (0..n_views).map(|v| self.outer_block(v, batch)).collect();
        let s2 = &f.cav.result.variances;

        let mut g_mhat = DMatrix::zeros(b, q);
        let mut g_logs = DMatrix::zeros(b, q);
        let mut g_s2 = DVector::<f64>::zeros(b);
        let mut g_dec: Vec<Vec<f64>> = state.decoders.iter().map(|d| vec![0.0; d.kernel.dim() + 2]).collect();
        let op_shape = state.ordinal.as_ref().map(|o| (o.weights.shape(), o.levels));
        let mut g_w = op_shape.map_or(DMatrix::zeros(0, 0), |((c, q), _)| DMatrix::zeros(c, q));
        let mut g_t = op_shape.map_or(DMatrix::zeros(0, 0), |((c, _), s)| DMatrix::zeros(c, s - 1));
        let mut g_lsig = 0.0;
        let mut value = 0.0;

        let inv_s = 1.0 / f.draws.len() as f64;
        for xi in &f.draws {
            let x = Self::sample(state, &f, xi);
            let mut g_x = DMatrix::zeros(b, q);
            for (v, p) in state.decoders.iter().enumerate() {
                let dg = decoder_loglik_grad(&outer[v], self.views[v].ncols(), &x, p)?;
                value += inv_s * dg.loglik;
                g_x += &dg.d_x;
                let gd = &mut g_dec[v];
                gd[0] += inv_s * dg.d_log_signal_variance;
                for (k, g) in dg.d_log_lengthscales.iter().enumerate() {
                    gd[1 + k] += inv_s * g;
                }
                gd[q + 1] += inv_s * dg.d_log_noise_variance;
            }
            if let (Some(z), Some(op)) = (&z, &state.ordinal) {
                let og = ordinal_loglik_grad(z, &x, op)?;
                value += inv_s * weight * og.loglik;
                g_x += &og.d_x * weight;
                g_w += &og.d_weights * (inv_s * weight);
                g_t += &og.d_thresholds * (inv_s * weight);
                g_lsig += inv_s * weight * og.d_log_sigma;
            }
            g_x *= inv_s;
            g_mhat += &g_x;
            for i in 0..b {
                for d in 0..q {
                    let gx = g_x[(i, d)] * xi[(i, d)];
                    match state.reparam {
                        ReparamScale::SqrtOfSum => {
                            let gv = gx / (2.0 * f.post.variances[(i, d)].sqrt());
                            g_logs[(i, d)] += gv * f.log_vars[(i, d)].exp();
                            g_s2[i] += gv;
                        }
                        ReparamScale::SumOfSqrt => {
                            g_logs[(i, d)] += gx * 0.5 * (0.5 * f.log_vars[(i, d)]).exp();
                            g_s2[i] += gx / (2.0 * s2[i].sqrt());
                        }
                    }
                }
            }
        }

        // -KL(q || N(0, I))
        value -= kl_to_prior(&f.post)?;
        for i in 0..b {
            for d in 0..q {
                let v = f.post.variances[(i, d)];
                let gv = -0.5 * (1.0 - 1.0 / v);
                g_mhat[(i, d)] -= f.post.means[(i, d)];
                g_logs[(i, d)] += gv * f.log_vars[(i, d)].exp();
                g_s2[i] += gv;
            }
        }

        // back through mhat = M - (A M) / diag(A), s2 = 1 / diag(A)
        let a = &f.cav.inv;
        let am = &f.cav.am;
        let mut g_b = DMatrix::zeros(b, q);
        let mut g_diag = DVector::<f64>::zeros(b);
        for i in 0..b {
            let aii = a[(i, i)];
            for d in 0..q {
                g_b[(i, d)] = -g_mhat[(i, d)] / aii;
                g_diag[i] += g_mhat[(i, d)] * am[(i, d)] / (aii * aii);
            }
            g_diag[i] -= g_s2[i] / (aii * aii);
        }
        let g_m = &g_mhat + a * &g_b;
        let mut g_a = &g_b * f.means.transpose();
        for i in 0..b {
            g_a[(i, i)] += g_diag[i];
        }
        let g_c = -(a * g_a * a);

        let mut grad = vec![0.0; state.num_params()];
        for (bi, &i) in batch.iter().enumerate() {
            for d in 0..q {
                grad[state.mean_index(i, d)] = g_m[(bi, d)];
                grad[state.log_var_index(i, d)] = g_logs[(bi, d)];
            }
        }
        let ranges = state.group_ranges();
        let mut off = ranges[2].1.start;
        for (v, p) in state.encoder.kernels.iter().enumerate() {
            let inv_l2 = (-2.0 * p.log_lengthscale).exp();
            let (mut g_sv, mut g_l) = (0.0, 0.0);
            for ((gc, k), d2) in g_c.iter().zip(f.kernels[v].iter()).zip(f.dists[v].iter()) {
                g_sv += gc * k;
                g_l += gc * k * d2 * inv_l2;
            }
            grad[off] = g_sv;
            grad[off + 1] = g_l;
            off += 2;
        }
        grad[off] = state.encoder.noise_variance() * g_c.trace();
        off += 1;
        for gd in &g_dec {
            grad[off..off + gd.len()].copy_from_slice(gd);
            off += gd.len();
        }
        if let Some(op) = &state.ordinal {
            let (g_base, g_incr) = threshold_param_grad(op, &g_t);
            for i in 0..g_w.nrows() {
                for j in 0..g_w.ncols() {
                    grad[off] = g_w[(i, j)];
                    off += 1;
                }
            }
            for g in g_base {
                grad[off] = g;
                off += 1;
            }
            for i in 0..g_incr.nrows() {
                for j in 0..g_incr.ncols() {
                    grad[off] = g_incr[(i, j)];
                    off += 1;
                }
            }
            grad[off] = g_lsig;
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::state::{InitSpec, LatentInit};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(reparam: ReparamScale, seed: u64) -> (Vec<DMatrix<f64>>, LabelMatrix, ModelState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let views = vec![
            DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0)),
        ];
        let cells = (0..n * 2).map(|k| if k == 3 { None } else { Some(rng.random_range(1..=3)) }).collect();
        let labels = LabelMatrix::new(n, 2, 3, cells).unwrap();
        let spec = InitSpec {
            latent_dim: 2,
            ordinal_weight: 0.7,
            init: LatentInit::Random,
            reparam,
            seed,
        };
        let mut s = ModelState::init(&views, Some((2, 3)), &spec).unwrap();
        // move away from the symmetric initial point
        let flat: Vec<f64> = s.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        s.set_flat(&flat).unwrap();
        for v in s.variational.means.iter_mut() {
            *v *= 5.0;
        }
        (views, labels, s)
    }

    fn fd_check(reparam: ReparamScale) {
        let (views, labels, state) = instance(reparam, 11);
        let obj = Objective::new(&views, Some(&labels));
        let batch = [5, 0, 2, 6, 3];
        let mc = McConfig::new(3, 42).unwrap();
        let (value, grad) = obj.elbo_grad(&state, &batch, &mc).unwrap();
        assert_relative_eq!(value, obj.elbo(&state, &batch, &mc).unwrap(), max_relative = 1e-10);
        let flat = state.to_flat();
        let h = 1e-5;
        let mut s = state.clone();
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            s.set_flat(&p).unwrap();
            let up = obj.elbo(&s, &batch, &mc).unwrap();
            p[k] -= 2.0 * h;
            s.set_flat(&p).unwrap();
            let down = obj.elbo(&s, &batch, &mc).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1.0);
            assert!(err < 1e-5, "coordinate {k}: analytic {} numeric {fd}", grad[k]);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        fd_check(ReparamScale::SqrtOfSum);
    }

    #[test]
    fn gradient_matches_central_differences_additive_scale() {
        fd_check(ReparamScale::SumOfSqrt);
    }

    #[test]
    fn rows_outside_batch_get_zero_gradient() {
        let (views, labels, state) = instance(ReparamScale::SqrtOfSum, 3);
        let obj = Objective::new(&views, Some(&labels));
        let (_, grad) = obj.elbo_grad(&state, &[1, 4], &McConfig::new(1, 0).unwrap()).unwrap();
        for i in [0, 2, 3, 5, 6] {
            for d in 0..2 {
                assert_eq!(grad[state.mean_index(i, d)], 0.0);
                assert_eq!(grad[state.log_var_index(i, d)], 0.0);
            }
        }
    }

    #[test]
    fn duplicated_view_doubles_reconstruction() {
        let (views, _, mut state) = instance(ReparamScale::SqrtOfSum, 8);
        state.ordinal = None;
        state.ordinal_weight = 0.0;
        let one = vec![views[0].clone()];
        let two = vec![views[0].clone(), views[0].clone()];
        let mut s1 = state.clone();
        s1.encoder.kernels.truncate(1);
        s1.decoders.truncate(1);
        let mut s2 = state.clone();
        s2.encoder.kernels = vec![s1.encoder.kernels[0].clone(); 2];
        s2.decoders = vec![s1.decoders[0].clone(); 2];
        // the duplicate encoder kernel doubles the Gram; halve its signal
        // variance so the cavity is unchanged
        for k in &mut s2.encoder.kernels {
            k.log_signal_variance -= 2f64.ln();
        }
        let mc = McConfig::new(2, 9).unwrap();
        let batch: Vec<usize> = (0..7).collect();
        let t1 = Objective::new(&one, None).terms(&s1, &batch, &mc).unwrap();
        let t2 = Objective::new(&two, None).terms(&s2, &batch, &mc).unwrap();
        assert_relative_eq!(t2.reconstruction, 2.0 * t1.reconstruction, max_relative = 1e-9);
        assert_relative_eq!(t2.kl, t1.kl, max_relative = 1e-9);
    }

    #[test]
    fn too_small_batch_is_rejected() {
        let (views, labels, state) = instance(ReparamScale::SqrtOfSum, 1);
        let obj = Objective::new(&views, Some(&labels));
        assert!(obj.elbo(&state, &[2], &McConfig::new(1, 0).unwrap()).is_err());
    }
}
