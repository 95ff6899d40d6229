//! The bound recomputed from dense linear algebra on a tiny problem and
//! compared with the objective term by term.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use vgpae::ordinal::{level_logprobs, LabelMatrix};
use vgpae::sampling::{standard_normal_draws, McConfig, ReparamScale};
use vgpae::trainer::{InitSpec, LatentInit, ModelState, Objective};

fn problem(reparam: ReparamScale) -> (Vec<DMatrix<f64>>, LabelMatrix, ModelState) {
    let views = vec![
        DMatrix::from_row_slice(4, 2, &[0.3, -1.2, 1.1, 0.4, -0.7, 0.9, 0.2, 0.1]),
        DMatrix::from_row_slice(4, 3, &[1.0, 0.0, -0.5, 0.3, 0.8, 0.2, -1.1, 0.4, 0.6, 0.5, -0.9, 0.0]),
    ];
    let labels = LabelMatrix::new(4, 1, 3, vec![Some(1), Some(3), None, Some(2)]).unwrap();
    let spec = InitSpec {
        latent_dim: 2,
        ordinal_weight: 0.7,
        init: LatentInit::Random,
        reparam,
        seed: 4,
    };
    let mut state = ModelState::init(&views, Some((1, 3)), &spec).unwrap();
    // move away from the symmetric starting point
    let flat: Vec<f64> = state.to_flat().iter().enumerate().map(|(k, v)| v + 0.05 * ((k * 7 % 11) as f64 - 5.0)).collect();
    state.set_flat(&flat).unwrap();
    (views, labels, state)
}

fn gauss_loglik(y: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    let inv = cov.clone().try_inverse().unwrap();
    let (n, d) = (y.nrows() as f64, y.ncols() as f64);
    let quad = (y.transpose() * inv * y).trace();
    -0.5 * (d * cov.determinant().ln() + quad + n * d * (2.0 * PI).ln())
}

fn reference(views: &[DMatrix<f64>], labels: &LabelMatrix, state: &ModelState, mc: &McConfig) -> (f64, f64, f64) {
    let n = 4;
    let q = 2;
    let mut k = DMatrix::zeros(n, n);
    for (v, p) in views.iter().zip(&state.encoder.kernels) {
        let (sv, l) = (p.signal_variance(), p.lengthscale());
        k += DMatrix::from_fn(n, n, |i, j| {
            let d2 = (v.row(i) - v.row(j)).norm_squared();
            sv * (-0.5 * d2 / (l * l)).exp()
        });
    }
    let a = (k + DMatrix::identity(n, n) * state.encoder.noise_variance()).try_inverse().unwrap();
    let m = &state.variational.means;
    let am = &a * m;
    let cav_mean = DMatrix::from_fn(n, q, |i, d| m[(i, d)] - am[(i, d)] / a[(i, i)]);
    let cav_var: Vec<f64> = (0..n).map(|i| 1.0 / a[(i, i)]).collect();
    let s = DMatrix::from_fn(n, q, |i, d| state.variational.log_vars[(i, d)].exp());

    let mut kl = 0.0;
    for i in 0..n {
        for d in 0..q {
            let v = s[(i, d)] + cav_var[i];
            let mu = cav_mean[(i, d)];
            kl += 0.5 * (v + mu * mu - 1.0 - v.ln());
        }
    }

    let draws = standard_normal_draws(mc, n, q);
    let (mut rec, mut ord) = (0.0, 0.0);
    for xi in &draws {
        let x = DMatrix::from_fn(n, q, |i, d| {
            let scale = match state.reparam {
                ReparamScale::SqrtOfSum => (s[(i, d)] + cav_var[i]).sqrt(),
                ReparamScale::SumOfSqrt => s[(i, d)].sqrt() + cav_var[i].sqrt(),
            };
            cav_mean[(i, d)] + scale * xi[(i, d)]
        });
        for (y, p) in views.iter().zip(&state.decoders) {
            let ls = p.kernel.lengthscales();
            let sv = p.kernel.signal_variance();
            let cov = DMatrix::from_fn(n, n, |i, j| {
                let d2: f64 = (0..q).map(|d| ((x[(i, d)] - x[(j, d)]) / ls[d]).powi(2)).sum();
                sv * (-0.5 * d2).exp() + if i == j { p.noise_variance() } else { 0.0 }
            });
            rec += gauss_loglik(y, &cov);
        }
        let op = state.ordinal.as_ref().unwrap();
        for i in 0..n {
            if let Some(z) = labels.get(i, 0) {
                let xi_row: Vec<f64> = (0..q).map(|d| x[(i, d)]).collect();
                ord += level_logprobs(&xi_row, op, 0)[z as usize - 1];
            }
        }
    }
    let s_count = draws.len() as f64;
    (rec / s_count, ord / s_count, kl)
}

fn check(reparam: ReparamScale, samples: usize) {
    let (views, labels, state) = problem(reparam);
    let obj = Objective::new(&views, Some(&labels));
    let mc = McConfig::new(samples, 17).unwrap();
    let t = obj.terms(&state, &[0, 1, 2, 3], &mc).unwrap();
    let (rec, ord, kl) = reference(&views, &labels, &state, &mc);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert!(close(t.reconstruction, rec), "reconstruction {} vs {rec}", t.reconstruction);
    assert!(close(t.ordinal, ord), "ordinal {} vs {ord}", t.ordinal);
    assert!(close(t.kl, kl), "kl {} vs {kl}", t.kl);
    assert!(close(t.total, rec + 0.7 * ord - kl), "total {}", t.total);
}

#[test]
fn single_draw_matches_dense_recomputation() {
    check(ReparamScale::SqrtOfSum, 1);
}

#[test]
fn averaged_draws_match_dense_recomputation() {
    check(ReparamScale::SqrtOfSum, 3);
}

#[test]
fn additive_scale_matches_dense_recomputation() {
    check(ReparamScale::SumOfSqrt, 2);
}
