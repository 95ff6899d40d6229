//! Reparameterized Monte-Carlo draws shared by the decoder and ordinal terms.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VgpError};
use crate::recognition::LatentPosterior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub num_samples: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(num_samples: usize, seed: u64) -> Result<Self> {
        if num_samples == 0 {
            return Err(VgpError::Config("num_samples must be at least 1".into()));
        }
        Ok(Self { num_samples, seed })
    }
}

/// How the posterior standard deviation is formed from the variational
/// covariance `S_i` and the cavity variance `s2_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReparamScale {
    /// `sqrt(S_id + s2_i)`: matches the variance of the posterior.
    #[default]
    SqrtOfSum,
    /// `sqrt(S_id) + sqrt(s2_i)`: the literal additive form, kept for
    /// comparison runs.
    SumOfSqrt,
}

/// Standard-normal draws, one `n x q` matrix per sample, in a fixed order
/// determined by the seed.
pub fn standard_normal_draws(mc: &McConfig, n: usize, q: usize) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    (0..mc.num_samples)
        .map(|_| {
            let mut m = DMatrix::zeros(n, q);
            for i in 0..n {
                for d in 0..q {
                    m[(i, d)] = StandardNormal.sample(&mut rng);
                }
            }
            m
        })
        .collect()
}

/// `means + sqrt(variances) * xi`
pub fn reparameterize(post: &LatentPosterior, xi: &DMatrix<f64>) -> DMatrix<f64> {
    post.means.zip_zip_map(&post.variances, xi, |m, v, e| m + v.sqrt() * e)
}

/// Mixes a 64-bit seed with a counter into a fresh seed.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
