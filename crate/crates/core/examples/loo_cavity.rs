//! Leave-one-out cavity of the encoder GP, checked against refitting the GP
//! without each point in turn.
//!
//! cargo run --release --example loo_cavity

use nalgebra::{DMatrix, DVector};
use vgpae::kernel::{encoder_gram, IsoRbfParams};
use vgpae::recognition::loo_cavity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two views of six rows
    let a = DMatrix::from_row_slice(6, 2, &[0.0, 0.1, 0.4, 0.3, 0.9, 1.0, 1.3, 0.8, 1.7, 1.9, 2.2, 2.0]);
    let b = DMatrix::from_row_slice(6, 1, &[1.0, 0.7, 0.2, -0.1, -0.6, -0.9]);
    let params = [IsoRbfParams::new(1.0, 0.8), IsoRbfParams::new(0.5, 1.5)];
    let k = encoder_gram(&[a, b], &params)?;
    let noise = 0.05;
    let targets = DMatrix::from_row_slice(6, 2, &[-1.0, 0.5, -0.6, 0.7, 0.0, 1.0, 0.4, 0.6, 0.9, 0.1, 1.2, -0.3]);

    let cav = loo_cavity(&k, noise, &targets)?;
    println!("row  cavity mean           cavity var   refit mean            refit var");
    for i in 0..6 {
        let rest: Vec<usize> = (0..6).filter(|&j| j != i).collect();
        let kss = DMatrix::from_fn(5, 5, |r, c| k.values[(rest[r], rest[c])] + if r == c { noise } else { 0.0 });
        let ks = DVector::from_iterator(5, rest.iter().map(|&j| k.values[(i, j)]));
        let chol = kss.cholesky().ok_or("refit Gram not positive definite")?;
        let alpha = chol.solve(&targets.select_rows(&rest));
        let mean: Vec<f64> = (0..2).map(|d| ks.dot(&alpha.column(d))).collect();
        let var = k.values[(i, i)] + noise - ks.dot(&chol.solve(&ks));
        println!(
            "{i:3}  [{:8.5}, {:8.5}]  {:10.6}   [{:8.5}, {:8.5}]  {:10.6}",
            cav.means[(i, 0)],
            cav.means[(i, 1)],
            cav.variances[i],
            mean[0],
            mean[1],
            var
        );
    }
    Ok(())
}
