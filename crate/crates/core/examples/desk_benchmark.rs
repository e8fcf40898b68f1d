// The full desk-scale recipe: default synthetic dataset (5 classes,
// 96x160, 2000/400/600 images, two rare classes), 40 epochs, masking on.
//
// ```text
// cargo run --release --example desk_benchmark -- [--no-masking] [--epochs N] [--seed S]
// ```

use std::time::Instant;

use wsloc::dataset::{load_dataset, synth_generate, SynthSpec};
use wsloc::engine::{train, TrainConfig, TrainData};
use wsloc::inference::evaluate_split;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = TrainConfig::desk();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--no-masking" => config.augment.masking = false,
            "--epochs" => config.epochs = args.next().unwrap_or_default().parse()?,
            "--seed" => config.seed = args.next().unwrap_or_default().parse()?,
            other => anyhow::bail!("unknown argument {other}"),
        }
    }
    if config.epochs != 40 {
        config.milestones = vec![config.epochs / 2, config.epochs * 4 / 5];
    }

    let dir = tempfile::tempdir()?;
    synth_generate(&SynthSpec::desk(), 2024, dir.path())?;
    let dataset = load_dataset(dir.path())?;
    let data = TrainData::from_dataset(&dataset, "train", Some("val"))?;

    let start = Instant::now();
    let outcome = train(&config, &data, None, None)?;
    println!("trained {} epochs in {:.1} s", config.epochs, start.elapsed().as_secs_f64());
    let report = evaluate_split(&outcome.model, &dataset, "test", config.backbone.global_stride() as f64)?;
    print!("{}", report.to_csv());
    Ok(())
}
