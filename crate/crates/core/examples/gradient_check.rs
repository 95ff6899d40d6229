//! Finite-difference check of the bound gradient on a small random problem,
//! for both ways of forming the sampling scale.
//!
//! cargo run --release --example gradient_check -- [n] [seed]

use vgpae::run::gradcheck_problem;
use vgpae::sampling::{McConfig, ReparamScale};
use vgpae::trainer::{grad_check, GradCheckConfig, Objective};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).map_or(Ok(16), |s| s.parse())?;
    let seed = args.get(2).map_or(Ok(0), |s| s.parse())?;
    for reparam in [ReparamScale::SqrtOfSum, ReparamScale::SumOfSqrt] {
        let (views, labels, mut state) = gradcheck_problem(n, 2, seed)?;
        state.reparam = reparam;
        let obj = Objective::new(&views, Some(&labels));
        let batch: Vec<usize> = (0..n).collect();
        let report = grad_check(&obj, &state, &batch, &McConfig::new(2, seed)?, &GradCheckConfig::default())?;
        println!("{reparam:?}");
        print!("{}", report.summary());
    }
    Ok(())
}
