// Generate a small synthetic dataset, train from image-level labels only,
// then evaluate classification and localization on the held-out split.
//
// ```text
// cargo run --release --example train_and_evaluate -- [epochs] [train_images]
// ```

use std::time::Instant;

use wsloc::dataset::{load_dataset, synth_generate, SynthSpec};
use wsloc::engine::{train, TrainConfig, TrainData};
use wsloc::inference::evaluate_split;

pub fn run_example() -> anyhow::Result<()> {
    // non-numeric arguments (e.g. test-harness flags) are ignored
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(2);
    let n_train = args.get(1).copied().unwrap_or(48);

    let dir = tempfile::tempdir()?;
    let spec = SynthSpec {
        train: n_train,
        val: n_train / 4,
        test: n_train / 4,
        // keep the rare classes present even in tiny runs
        presence_probs: vec![0.6, 0.6, 0.6, 0.2, 0.2],
        ..SynthSpec::desk()
    };
    synth_generate(&spec, 7, dir.path())?;
    let dataset = load_dataset(dir.path())?;

    let mut config = TrainConfig::desk();
    config.epochs = epochs;
    config.milestones = vec![epochs * 3 / 4].into_iter().filter(|&m| m > 0).collect();
    let data = TrainData::from_dataset(&dataset, "train", Some("val"))?;

    let start = Instant::now();
    let outcome = train(&config, &data, None, None)?;
    let secs = start.elapsed().as_secs_f64();
    for r in &outcome.log {
        println!("epoch {:>3}  loss {:.4}  val mAP {:.3}", r.epoch, r.train_loss, r.val_map.unwrap_or(f64::NAN));
    }
    println!("{:.2} s/epoch over {n_train} images", secs / epochs as f64);

    let report = evaluate_split(&outcome.model, &dataset, "test", config.backbone.global_stride() as f64)?;
    print!("{}", report.to_csv());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
