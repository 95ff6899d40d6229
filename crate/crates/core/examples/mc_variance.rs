//! Spread of the Monte-Carlo bound across seeds as the number of draws
//! grows. The log-log slope should sit near -1/2.
//!
//! cargo run --release --example mc_variance -- [seeds]

use vgpae::run::gradcheck_problem;
use vgpae::sampling::McConfig;
use vgpae::trainer::Objective;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let (views, labels, state) = gradcheck_problem(16, 2, 5)?;
    let obj = Objective::new(&views, Some(&labels));
    let batch: Vec<usize> = (0..16).collect();
    let mut pts = Vec::new();
    for s in [1usize, 4, 16, 64] {
        let vals = (0..seeds)
            .map(|seed| obj.elbo(&state, &batch, &McConfig::new(s, seed)?))
            .collect::<vgpae::Result<Vec<f64>>>()?;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        println!("samples {s:3}  mean {mean:10.4}  sd {sd:.4}");
        pts.push(((s as f64).ln(), sd.ln()));
    }
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    println!("end-to-end log-log slope {:.3}", (last.1 - first.1) / (last.0 - first.0));
    Ok(())
}
