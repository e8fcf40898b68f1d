// Train briefly, then render class heatmaps and peak markers over test
// frames.
//
// ```text
// cargo run --release --example heatmap_overlay -- [out_dir]
// ```

use wsloc::dataset::{load_dataset, synth_generate, SynthSpec};
use wsloc::engine::{train, TrainConfig, TrainData};
use wsloc::inference::{predict, save_overlay, DEFAULT_OPACITY, DEFAULT_THRESHOLD};

pub fn run_example() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| tmp.path().join("overlays"));
    std::fs::create_dir_all(&out)?;

    let spec = SynthSpec {
        train: 48,
        val: 4,
        test: 4,
        presence_probs: vec![0.6, 0.6, 0.6, 0.3, 0.3],
        ..SynthSpec::desk()
    };
    synth_generate(&spec, 11, &tmp.path().join("data"))?;
    let ds = load_dataset(&tmp.path().join("data"))?;

    let mut config = TrainConfig::desk();
    config.epochs = 4;
    config.milestones = vec![3];
    let data = TrainData::from_dataset(&ds, "train", None)?;
    let model = train(&config, &data, None, None)?.model;

    for name in ds.split("test")? {
        let image = ds.load_image(name)?;
        let (preds, maps) = predict(&model, &image, DEFAULT_THRESHOLD)?;
        let path = out.join(format!("{name}.png"));
        save_overlay(&image, &maps, &preds, DEFAULT_OPACITY, &path)?;
        let present: Vec<String> = preds
            .iter()
            .zip(ds.class_names())
            .filter(|(p, _)| p.present)
            .map(|(p, c)| format!("{c}@({:.0},{:.0})", p.x, p.y))
            .collect();
        println!("{} -> {}  [{}]", name, path.display(), present.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
