use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::generative::DecoderParams;
use crate::kernel::{sq_dist_sym, ArdRbfParams, IsoRbfParams};
use crate::ordinal::OrdinalParams;
use crate::recognition::{EncoderParams, VariationalState};
use crate::sampling::ReparamScale;

/// Every learned quantity of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub variational: VariationalState,
    pub encoder: EncoderParams,
    pub decoders: Vec<DecoderParams>,
    /// Present whenever the training data carried labels.
    pub ordinal: Option<OrdinalParams>,
    pub ordinal_weight: f64,
    pub reparam: ReparamScale,
    pub seed: u64,
}

/// Blocks of the flat parameter vector, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Means,
    LogVars,
    Encoder,
    Decoder,
    Ordinal,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Means,
        ParamGroup::LogVars,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Ordinal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "M",
            ParamGroup::LogVars => "log_S",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Ordinal => "ordinal",
        }
    }
}

/// How the variational means start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentInit {
    /// `N(0, 0.01)` draws.
    Random,
    /// Leading principal components of the concatenated views, scaled to
    /// unit variance.
    #[default]
    Pca,
}

/// Settings consumed by [`ModelState::init`].
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub latent_dim: usize,
    pub ordinal_weight: f64,
    pub init: LatentInit,
    pub reparam: ReparamScale,
    pub seed: u64,
}

const INIT_MEAN_STD: f64 = 0.1;
const INIT_VAR: f64 = 0.1;
const INIT_NOISE_STD: f64 = 0.1;
const INIT_WEIGHT_STD: f64 = 0.1;
const MEDIAN_HEURISTIC_ROWS: usize = 1000;

impl ModelState {
    /// Fresh state for the given (already standardized) views.
    ///
    /// Encoder lengthscales start at the median pairwise distance of each
    /// view, decoder lengthscales at 1.
    pub fn init(views: &[DMatrix<f64>], outputs: Option<(usize, usize)>, spec: &InitSpec) -> Result<Self> {
        let q = spec.latent_dim;
        if q == 0 {
            return Err(VgpError::Config("latent dimension must be at least 1".into()));
        }
        let n = views.first().map_or(0, |v| v.nrows());
        if n < 2 {
            return Err(VgpError::Data(format!("need at least 2 training rows, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let means = match spec.init {
            LatentInit::Random => {
                let dist = Normal::new(0.0, INIT_MEAN_STD).expect("valid normal");
                DMatrix::from_fn(n, q, |_, _| dist.sample(&mut rng))
            }
            LatentInit::Pca => pca_scores(views, q),
        };
        let variational = VariationalState::new(means, DMatrix::from_element(n, q, INIT_VAR.ln()))?;
        let kernels = views
            .iter()
            .map(|v| IsoRbfParams::new(1.0, median_distance(v)))
            .collect();
        let encoder = EncoderParams {
            kernels,
            log_noise_variance: (INIT_NOISE_STD * INIT_NOISE_STD).ln(),
        };
        let decoders = views
            .iter()
            .map(|_| DecoderParams::new(ArdRbfParams::new(1.0, &vec![1.0; q]), INIT_NOISE_STD * INIT_NOISE_STD))
            .collect();
        let ordinal = match outputs {
            Some((c, levels)) => {
                let dist = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid normal");
                let w = DMatrix::from_fn(c, q, |_, _| dist.sample(&mut rng));
                Some(OrdinalParams::with_spread_thresholds(w, levels, INIT_NOISE_STD)?)
            }
            None => None,
        };
        Ok(Self {
            variational,
            encoder,
            decoders,
            ordinal,
            ordinal_weight: spec.ordinal_weight,
            reparam: spec.reparam,
            seed: spec.seed,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.variational.latent_dim()
    }

    pub fn num_points(&self) -> usize {
        self.variational.len()
    }

    fn global_offset(&self) -> usize {
        2 * self.num_points() * self.latent_dim()
    }

    /// Flat index of `M[i, d]`.
    pub fn mean_index(&self, i: usize, d: usize) -> usize {
        i * self.latent_dim() + d
    }

    /// Flat index of `log S[i, d]`.
    pub fn log_var_index(&self, i: usize, d: usize) -> usize {
        self.num_points() * self.latent_dim() + i * self.latent_dim() + d
    }

    /// Ranges of the flat vector owned by each group.
    pub fn group_ranges(&self) -> Vec<(ParamGroup, Range<usize>)> {
        let nq = self.num_points() * self.latent_dim();
        let enc = 2 * self.encoder.kernels.len() + 1;
        let dec: usize = self.decoders.iter().map(|d| d.kernel.dim() + 2).sum();
        let ord = self.ordinal.as_ref().map_or(0, |o| {
            o.weights.len() + o.gamma_base.len() + o.gamma_log_incr.len() + 1
        });
        let mut start = 0;
        let mut out = Vec::new();
        for (g, len) in ParamGroup::ALL.into_iter().zip([nq, nq, enc, dec, ord]) {
            out.push((g, start..start + len));
            start += len;
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.group_ranges().last().map_or(0, |(_, r)| r.end)
    }

    /// All free parameters. Matrices are stored row-major; the encoder
    /// block is `[log sv, log l]` per view then `log sigma_r^2`, each decoder
    /// `[log sv, log l_1..q, log sigma_v^2]`, the ordinal block
    /// `W, gamma_base, gamma_log_incr, log sigma_g`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        push_row_major(&mut out, &self.variational.means);
        push_row_major(&mut out, &self.variational.log_vars);
        for k in &self.encoder.kernels {
            out.push(k.log_signal_variance);
            out.push(k.log_lengthscale);
        }
        out.push(self.encoder.log_noise_variance);
        for d in &self.decoders {
            out.push(d.kernel.log_signal_variance);
            out.extend_from_slice(&d.kernel.log_lengthscales);
            out.push(d.log_noise_variance);
        }
        if let Some(o) = &self.ordinal {
            push_row_major(&mut out, &o.weights);
            out.extend_from_slice(&o.gamma_base);
            push_row_major(&mut out, &o.gamma_log_incr);
            out.push(o.log_noise_std);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(VgpError::Shape(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("length checked");
        read_row_major(&mut self.variational.means, &mut next);
        read_row_major(&mut self.variational.log_vars, &mut next);
        for k in &mut self.encoder.kernels {
            k.log_signal_variance = next();
            k.log_lengthscale = next();
        }
        self.encoder.log_noise_variance = next();
        for d in &mut self.decoders {
            d.kernel.log_signal_variance = next();
            for l in &mut d.kernel.log_lengthscales {
                *l = next();
            }
            d.log_noise_variance = next();
        }
        if let Some(o) = &mut self.ordinal {
            read_row_major(&mut o.weights, &mut next);
            for b in &mut o.gamma_base {
                *b = next();
            }
            read_row_major(&mut o.gamma_log_incr, &mut next);
            o.log_noise_std = next();
        }
        Ok(())
    }

    /// Flat indices updated by a step on `batch`: the batch rows of `M` and
    /// `log S` followed by every global parameter.
    pub fn active_indices(&self, batch: &[usize]) -> Vec<usize> {
        let q = self.latent_dim();
        let mut idx = Vec::with_capacity(2 * batch.len() * q);
        for &i in batch {
            idx.extend((0..q).map(|d| self.mean_index(i, d)));
        }
        for &i in batch {
            idx.extend((0..q).map(|d| self.log_var_index(i, d)));
        }
        idx.extend(self.global_offset()..self.num_params());
        idx
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}

fn read_row_major(m: &mut DMatrix<f64>, next: &mut impl FnMut() -> f64) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = next();
        }
    }
}

/// Median Euclidean distance between distinct rows (first rows only for
/// large views); 1 when every row coincides.
pub(crate) fn median_distance(v: &DMatrix<f64>) -> f64 {
    let n = v.nrows().min(MEDIAN_HEURISTIC_ROWS);
    let d2 = sq_dist_sym(&v.rows(0, n).into_owned());
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)].sqrt())
        .filter(|x| *x > 0.0)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d[d.len() / 2]
}

fn pca_scores(views: &[DMatrix<f64>], q: usize) -> DMatrix<f64> {
    let n = views[0].nrows();
    let total: usize = views.iter().map(|v| v.ncols()).sum();
    let mut y = DMatrix::zeros(n, total);
    let mut off = 0;
    for v in views {
        y.columns_mut(off, v.ncols()).copy_from(v);
        off += v.ncols();
    }
    for mut col in y.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    // eigenvectors of the N x N Gram give the scores directly
    let gram = &y * y.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(n, q);
    for (d, &k) in order.iter().take(q).enumerate() {
        let col = eig.eigenvectors.column(k);
        // fix the sign so the largest entry is positive
        let (imax, _) = col.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[(i, d)] = sign * col[i] * (n as f64).sqrt();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_state(labels: bool) -> ModelState {
        let views = vec![
            DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64 * 0.1),
            DMatrix::from_fn(6, 2, |i, j| ((i + j) as f64).sin()),
        ];
        let spec = InitSpec {
            latent_dim: 2,
            ordinal_weight: 1.0,
            init: LatentInit::Random,
            reparam: ReparamScale::default(),
            seed: 5,
        };
        ModelState::init(&views, labels.then_some((2, 4)), &spec).unwrap()
    }

    #[test]
    fn flat_round_trip() {
        let mut s = toy_state(true);
        let flat = s.to_flat();
        assert_eq!(flat.len(), s.num_params());
        // 12 + 12 means/log-vars, 5 encoder, 2 * 4 decoder, 4 + 2 + 4 + 1 ordinal
        assert_eq!(flat.len(), 12 + 12 + 5 + 8 + 11);
        let bumped: Vec<f64> = flat.iter().enumerate().map(|(i, v)| v + i as f64).collect();
        s.set_flat(&bumped).unwrap();
        assert_eq!(s.to_flat(), bumped);
        assert!(s.set_flat(&bumped[1..]).is_err());
    }

    #[test]
    fn group_ranges_tile_the_vector() {
        let s = toy_state(false);
        let r = s.group_ranges();
        assert_eq!(r[0].1.start, 0);
        for w in r.windows(2) {
            assert_eq!(w[0].1.end, w[1].1.start);
        }
        assert!(r[4].1.is_empty());
        assert_eq!(s.mean_index(1, 1), 3);
        assert_eq!(s.log_var_index(0, 1), 13);
    }

    #[test]
    fn active_indices_cover_batch_rows_and_globals() {
        let s = toy_state(true);
        let idx = s.active_indices(&[4, 1]);
        assert_eq!(&idx[..4], &[8, 9, 2, 3]);
        assert_eq!(&idx[4..8], &[20, 21, 14, 15]);
        assert_eq!(idx.len(), 8 + s.num_params() - 24);
    }

    #[test]
    fn pca_init_has_unit_scale_scores() {
        let views = vec![DMatrix::from_fn(20, 4, |i, j| ((i * (j + 1)) as f64 * 0.3).sin())];
        let spec = InitSpec {
            latent_dim: 2,
            ordinal_weight: 0.0,
            init: LatentInit::Pca,
            reparam: ReparamScale::default(),
            seed: 0,
        };
        let s = ModelState::init(&views, None, &spec).unwrap();
        for col in s.variational.means.column_iter() {
            let ms = col.iter().map(|v| v * v).sum::<f64>() / 20.0;
            assert!((ms - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn median_distance_of_a_line() {
        let v = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        // distances 1,1,1,2,2,3
        assert_eq!(median_distance(&v), 2.0);
    }
}
