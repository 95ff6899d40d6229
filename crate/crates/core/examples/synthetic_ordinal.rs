//! Trains on the two-view synthetic ordinal generator and compares held-out
//! agreement with the generator's own Bayes predictor and a constant
//! majority-level baseline.
//!
//! cargo run --release --example synthetic_ordinal -- [epochs] [seed]

use vgpae::data::synth::{gen_synthetic_ordinal, OrdinalGenerator};
use vgpae::data::Split;
use vgpae::metrics::{icc31, mse};
use vgpae::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(300), |s| s.parse())?;
    let seed = args.get(2).map_or(Ok(7), |s| s.parse())?;

    let gen = OrdinalGenerator::new(500, 2, 2, 3, 20.0, 0.05, seed).with_test(100);
    let syn = gen_synthetic_ordinal(&gen)?;
    let ds = &syn.dataset;
    let test_rows = ds.rows_in(Split::Test);
    let labels = ds.labels.as_ref().expect("generator emits labels");

    let bayes = syn.bayes_predict(&ds.views[0]);
    let mut bayes_icc = 0.0;
    for c in 0..labels.outputs() {
        let (t, p): (Vec<f64>, Vec<f64>) = (0..ds.len())
            .filter_map(|i| labels.get(i, c).map(|z| (z as f64, bayes[i][c] as f64)))
            .unzip();
        bayes_icc += icc31(&t, &p)? / labels.outputs() as f64;
    }
    println!("bayes predictor icc {bayes_icc:.4}");

    let cfg = TrainConfig {
        batch_size: 100,
        epochs,
        seed,
        eval_every: 20,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(ds, &cfg)?;
    println!("trained {} steps in {:.1?}", out.model.steps, t0.elapsed());
    for r in out.trace.records.iter().step_by((out.trace.len() / 10).max(1)) {
        println!(
            "step {:5} f2/pt {:9.4} nlpd {:?} icc {:.4} mse {:.4}",
            r.step, r.f2_per_point, r.nlpd, r.icc_mean, r.mse_mean
        );
    }
    let report = out.model.evaluate(&ds.subset(&test_rows))?;
    println!("held-out icc {:.4} mse {:.4}", report.mean_icc, report.mean_mse);

    let train_labels = out.model.train_labels.as_ref().expect("labels");
    let mut base_mse = 0.0;
    for c in 0..labels.outputs() {
        let mut counts = vec![0usize; labels.levels()];
        for (_, z) in train_labels.column(c) {
            counts[z as usize - 1] += 1;
        }
        let majority = 1 + (0..counts.len()).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap_or(0);
        let truth: Vec<f64> = test_rows.iter().filter_map(|&i| labels.get(i, c)).map(f64::from).collect();
        base_mse += mse(&truth, &vec![majority as f64; truth.len()])? / labels.outputs() as f64;
    }
    println!("majority baseline mse {base_mse:.4}");
    Ok(())
}
