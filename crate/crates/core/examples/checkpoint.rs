//! Train briefly, save, reload and check that the reloaded model scores the
//! held-out rows identically.
//!
//! cargo run --release --example checkpoint

use vgpae::data::synth::{gen_synthetic_ordinal, OrdinalGenerator};
use vgpae::data::Split;
use vgpae::{train, FittedModel, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let syn = gen_synthetic_ordinal(&OrdinalGenerator::new(200, 2, 2, 3, 20.0, 0.05, 1).with_test(40))?;
    let ds = &syn.dataset;
    let cfg = TrainConfig {
        batch_size: 80,
        epochs: 400,
        seed: 1,
        ..Default::default()
    };
    let out = train(ds, &cfg)?;
    let dir = std::env::temp_dir().join("vgpae-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    out.model.save(&path)?;
    let back = FittedModel::load(&path)?;

    let test = ds.subset(&ds.rows_in(Split::Test));
    let (a, b) = (out.model.evaluate(&test)?, back.evaluate(&test)?);
    println!("{} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!("in memory: icc {:.4} mse {:.4}", a.mean_icc, a.mean_mse);
    println!("reloaded:  icc {:.4} mse {:.4}", b.mean_icc, b.mean_mse);
    println!("identical state: {}", back == out.model);
    Ok(())
}
