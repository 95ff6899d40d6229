//! Desk-scale synthetic datasets: a rotated glyph for manifold recovery and
//! a two-view latent-threshold generator for ordinal prediction.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{MultiViewDataset, Split};
use crate::error::{Result, VgpError};
use crate::normal::log_cdf_diff;
use crate::ordinal::LabelMatrix;

/// Annotation key holding the rotation angle in degrees.
pub const ANGLE_KEY: &str = "angle_deg";

/// Strokes of a '1'-like glyph in `[-1, 1]^2` coordinates: a vertical bar,
/// a flag at its top and a foot at its bottom. The flag and foot break the
/// 180 degree symmetry of the bar.
const GLYPH_STROKES: [((f64, f64), (f64, f64)); 3] = [
    ((0.0, -0.62), (0.0, 0.62)),
    ((0.0, 0.62), (-0.4, 0.3)),
    ((-0.3, -0.62), (0.3, -0.62)),
];
/// Standard deviation of the pen, in pixels.
const PEN_WIDTH: f64 = 1.2;

const SAMPLES_PER_PIXEL: f64 = 4.0;

/// Placement and noise of the rendered glyph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphStyle {
    /// Horizontal shift of the glyph away from the rotation centre, in
    /// units of half the image side.
    pub offset: f64,
    /// Pixel noise standard deviation relative to the brightest pixel.
    pub noise: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self {
            offset: 0.0,
            noise: 0.01,
        }
    }
}

/// Renders the glyph rotated counter-clockwise by `angle` radians onto a
/// `side x side` grid, returned row-major. Each stroke is traced with a
/// Gaussian pen, so the image is a smooth function of the angle.
pub fn render_glyph(angle: f64, side: usize, offset: f64) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    let half = (side as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    let reach = (4.0 * PEN_WIDTH).ceil() as isize;
    let inv_2w2 = 1.0 / (2.0 * PEN_WIDTH * PEN_WIDTH);
    for &((x0, y0), (x1, y1)) in &GLYPH_STROKES {
        let len_px = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() * half;
        let steps = (len_px * SAMPLES_PER_PIXEL).ceil().max(1.0) as usize;
        let weight = len_px / (steps + 1) as f64;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (gx, gy) = (x0 + t * (x1 - x0) + offset, y0 + t * (y1 - y0));
            let (rx, ry) = (c * gx - s * gy, s * gx + c * gy);
            let col = half * (1.0 + rx);
            let row = half * (1.0 - ry);
            let (r0, c0) = (row.round() as isize, col.round() as isize);
            for r in (r0 - reach).max(0)..=(r0 + reach).min(side as isize - 1) {
                for cc in (c0 - reach).max(0)..=(c0 + reach).min(side as isize - 1) {
                    let d2 = (r as f64 - row).powi(2) + (cc as f64 - col).powi(2);
                    img[r as usize * side + cc as usize] += weight * (-d2 * inv_2w2).exp();
                }
            }
        }
    }
    img
}

/// One image per rotation step of `360/steps` degrees with a little seeded
/// pixel noise, each row scaled to unit Euclidean norm. Rotation angles are
/// stored under [`ANGLE_KEY`]. The glyph is centred, so half a turn only
/// moves the flag and the foot.
pub fn gen_rotated_glyph(steps: usize, image_side: usize, seed: u64) -> Result<MultiViewDataset> {
    gen_rotated_glyph_with(steps, image_side, seed, &GlyphStyle::default())
}

/// [`gen_rotated_glyph`] with an explicit style.
pub fn gen_rotated_glyph_with(steps: usize, image_side: usize, seed: u64, style: &GlyphStyle) -> Result<MultiViewDataset> {
    if steps < 4 {
        return Err(VgpError::Config(format!("rotated glyph needs at least 4 steps, got {steps}")));
    }
    if image_side < 4 {
        return Err(VgpError::Config(format!("image side {image_side} is too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = image_side * image_side;
    let mut m = DMatrix::zeros(steps, d);
    let mut angles = Vec::with_capacity(steps);
    for i in 0..steps {
        let deg = 360.0 * i as f64 / steps as f64;
        angles.push(deg);
        let mut img = render_glyph(deg.to_radians(), image_side, style.offset);
        let peak = img.iter().copied().fold(0.0, f64::max);
        for v in img.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += style.noise * peak * e;
        }
        let norm = img.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, v) in img.iter().enumerate() {
            m[(i, j)] = v / norm;
        }
    }
    let mut ds = MultiViewDataset::new(vec![m], None)?;
    ds.view_names = vec!["pixels".into()];
    ds.annotations.insert(ANGLE_KEY.into(), angles);
    Ok(ds)
}

/// Settings of the two-view ordinal generator.
#[derive(Clone, Debug, PartialEq)]
pub struct OrdinalGenerator {
    /// Total rows; the last `n_test` are tagged as test.
    pub n: usize,
    pub n_test: usize,
    pub latent_dim: usize,
    pub outputs: usize,
    pub levels: usize,
    /// Inverse standard deviation of the label noise added to the score.
    pub separation: f64,
    /// Standard deviation of the observation noise on both views.
    pub noise: f64,
    pub geometric_dim: usize,
    pub appearance_dim: usize,
    pub seed: u64,
}

impl OrdinalGenerator {
    pub fn new(n: usize, latent_dim: usize, outputs: usize, levels: usize, separation: f64, noise: f64, seed: u64) -> Self {
        Self {
            n,
            n_test: 0,
            latent_dim,
            outputs,
            levels,
            separation,
            noise,
            geometric_dim: 3 * latent_dim,
            appearance_dim: 20 * latent_dim,
            seed,
        }
    }

    pub fn with_test(mut self, n_test: usize) -> Self {
        self.n_test = n_test;
        self
    }
}

/// Generated data together with the generator's internals.
#[derive(Clone, Debug)]
pub struct SyntheticOrdinal {
    pub dataset: MultiViewDataset,
    pub latents: DMatrix<f64>,
    /// `C x q` unit-norm projection directions.
    pub weights: DMatrix<f64>,
    /// `C x (S-1)` cut-points on the noisy score.
    pub thresholds: DMatrix<f64>,
    pub label_noise_std: f64,
    pub view_noise: f64,
    /// `D1 x q` map of the linear (geometric) view.
    pub linear_map: DMatrix<f64>,
}

/// Draws `x ~ N(0, I)`, labels `z_c` by thresholding `w_c'x + e / separation`
/// at the quantiles of its marginal (so levels are equally likely), a linear
/// view `A x + noise` and a random `tanh` feature view `tanh(B x + b) + noise`.
pub fn gen_synthetic_ordinal(cfg: &OrdinalGenerator) -> Result<SyntheticOrdinal> {
    let (n, q, c_out, s) = (cfg.n, cfg.latent_dim, cfg.outputs, cfg.levels);
    if s < 2 {
        return Err(VgpError::Config(format!("need at least 2 levels, got {s}")));
    }
    if n < 10 * s {
        return Err(VgpError::Config(format!("need n >= 10*S = {}, got {n}", 10 * s)));
    }
    if q == 0 || cfg.n_test >= n {
        return Err(VgpError::Config(format!("bad generator shape: q={q}, n={n}, n_test={}", cfg.n_test)));
    }
    if !(cfg.separation > 0.0) || cfg.noise < 0.0 {
        return Err(VgpError::Config("separation must be positive and noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut weights = DMatrix::from_fn(c_out, q, |_, _| gauss(&mut rng));
    for mut row in weights.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let linear_map = DMatrix::from_fn(cfg.geometric_dim, q, |_, _| gauss(&mut rng) / (q as f64).sqrt());
    let feat_map = DMatrix::from_fn(cfg.appearance_dim, q, |_, _| gauss(&mut rng));
    let feat_bias: Vec<f64> = (0..cfg.appearance_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

    let latents = DMatrix::from_fn(n, q, |_, _| gauss(&mut rng));
    let label_noise_std = 1.0 / cfg.separation;
    let score_sd = (1.0 + label_noise_std * label_noise_std).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let thresholds = DMatrix::from_fn(c_out, s - 1, |_, k| score_sd * unit.inverse_cdf((k + 1) as f64 / s as f64));

    let mut cells = Vec::with_capacity(n * c_out);
    for i in 0..n {
        for c in 0..c_out {
            let g: f64 = (0..q).map(|d| weights[(c, d)] * latents[(i, d)]).sum::<f64>() + label_noise_std * gauss(&mut rng);
            let level = 1 + (0..s - 1).filter(|&k| g > thresholds[(c, k)]).count();
            cells.push(Some(level as u32));
        }
    }

    let mut geometric = &latents * linear_map.transpose();
    geometric.iter_mut().for_each(|v| *v += cfg.noise * gauss(&mut rng));
    let mut appearance = DMatrix::from_fn(n, cfg.appearance_dim, |i, j| {
        let a: f64 = (0..q).map(|d| feat_map[(j, d)] * latents[(i, d)]).sum();
        (a + feat_bias[j]).tanh()
    });
    appearance.iter_mut().for_each(|v| *v += cfg.noise * gauss(&mut rng));

    let labels = LabelMatrix::new(n, c_out, s, cells)?;
    let mut dataset = MultiViewDataset::new(vec![geometric, appearance], Some(labels))?;
    dataset.view_names = vec!["geometric".into(), "appearance".into()];
    dataset.output_names = (0..c_out).map(|c| format!("au{c}")).collect();
    dataset.split = (0..n).map(|i| if i < n - cfg.n_test { Split::Train } else { Split::Test }).collect();
    let mut ann = BTreeMap::new();
    for d in 0..q {
        ann.insert(format!("latent_{d}"), latents.column(d).iter().copied().collect());
    }
    dataset.annotations = ann;

    Ok(SyntheticOrdinal {
        dataset,
        latents,
        weights,
        thresholds,
        label_noise_std,
        view_noise: cfg.noise,
        linear_map,
    })
}

impl SyntheticOrdinal {
    /// Most probable level of every cell given only the linear view, using
    /// the generator's own map, noise levels and cut-points.
    pub fn bayes_predict(&self, geometric: &DMatrix<f64>) -> Vec<Vec<u32>> {
        let q = self.linear_map.ncols();
        let a = &self.linear_map;
        let s2 = self.view_noise * self.view_noise;
        let ata = a.transpose() * a;
        // posterior over x from y = A x + e with prior N(0, I)
        let (post_cov, gain) = if s2 > 0.0 {
            let prec = &ata / s2 + DMatrix::identity(q, q);
            let cov = prec.try_inverse().expect("posterior precision is positive definite");
            let gain = &cov * a.transpose() / s2;
            (cov, gain)
        } else {
            let pinv = ata.try_inverse().expect("linear map has full column rank") * a.transpose();
            (DMatrix::zeros(q, q), pinv)
        };
        let s = self.thresholds.ncols() + 1;
        let mut out = Vec::with_capacity(geometric.nrows());
        for i in 0..geometric.nrows() {
            let y = DVector::from_iterator(geometric.ncols(), geometric.row(i).iter().copied());
            let mu = &gain * y;
            let mut row = Vec::with_capacity(self.weights.nrows());
            for c in 0..self.weights.nrows() {
                let w = self.weights.row(c).transpose();
                let m = w.dot(&mu);
                let var = (w.transpose() * &post_cov * &w)[(0, 0)] + self.label_noise_std.powi(2);
                let sd = var.sqrt();
                let mut best = (1u32, f64::NEG_INFINITY);
                for level in 1..=s {
                    let lo = if level == 1 { f64::NEG_INFINITY } else { self.thresholds[(c, level - 2)] };
                    let hi = if level == s { f64::INFINITY } else { self.thresholds[(c, level - 1)] };
                    let lp = log_cdf_diff((lo - m) / sd, (hi - m) / sd);
                    if lp > best.1 {
                        best = (level as u32, lp);
                    }
                }
                row.push(best.0);
            }
            out.push(row);
        }
        out
    }
}

/// Angle (radians) of each row of a 2-D embedding.
pub fn planar_angles(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.nrows()).map(|i| x[(i, 1)].atan2(x[(i, 0)])).collect()
}

/// Agreement between two angle sequences after the best rotation and
/// reflection: `max(|mean e^{i(a-b)}|, |mean e^{i(a+b)}|)`, in `[0, 1]`.
pub fn aligned_circular_correlation(recovered: &[f64], truth: &[f64]) -> f64 {
    let n = recovered.len() as f64;
    let resultant = |sign: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (a, b) in recovered.iter().zip(truth) {
            let d = a - sign * b;
            c += d.cos();
            s += d.sin();
        }
        (c * c + s * s).sqrt() / n
    };
    resultant(1.0).max(resultant(-1.0))
}

/// Largest over median of the per-step changes `max_j |K[i,j] - K[i+1,j]|`
/// along a cyclic ordering of the rows.
pub fn adjacent_row_jump_ratio(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows();
    let mut jumps: Vec<f64> = (0..n)
        .map(|i| {
            let next = (i + 1) % n;
            (0..n).map(|j| (k[(i, j)] - k[(next, j)]).abs()).fold(0.0, f64::max)
        })
        .collect();
    let max = jumps.iter().copied().fold(0.0, f64::max);
    jumps.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        jumps[n / 2]
    } else {
        0.5 * (jumps[n / 2 - 1] + jumps[n / 2])
    };
    max / median
}
