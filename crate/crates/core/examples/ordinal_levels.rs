//! Level probabilities of the ordinal threshold model along a line through
//! latent space.
//!
//! cargo run --release --example ordinal_levels

use nalgebra::DMatrix;
use vgpae::ordinal::{level_logprobs, predict_levels, realize_thresholds, OrdinalParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // one output, two latent dimensions, four levels
    let op = OrdinalParams::with_spread_thresholds(DMatrix::from_row_slice(1, 2, &[1.0, -0.5]), 4, 0.4)?;
    println!("cut-points {:?}", realize_thresholds(&op).row(0).iter().collect::<Vec<_>>());
    println!("    t   score   p(1)   p(2)   p(3)   p(4)  level");
    for k in -8..=8 {
        let t = k as f64 * 0.4;
        let x = [t, -0.5 * t];
        let p: Vec<f64> = level_logprobs(&x, &op, 0).iter().map(|lp| lp.exp()).collect();
        let level = predict_levels(&DMatrix::from_row_slice(1, 2, &x), &op)?.level(0, 0);
        println!(
            "{t:5.1} {:7.3} {:6.3} {:6.3} {:6.3} {:6.3}  {level}",
            1.25 * t,
            p[0],
            p[1],
            p[2],
            p[3]
        );
    }
    Ok(())
}
