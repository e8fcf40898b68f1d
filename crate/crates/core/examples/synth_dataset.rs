// Generate a synthetic tool dataset on disk and inspect it.
//
// ```text
// cargo run --example synth_dataset -- [out_dir]
// ```

use wsloc::dataset::{compute_stats, load_dataset, synth_generate, SynthSpec};

pub fn run_example() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let spec = SynthSpec { train: 60, val: 10, test: 10, ..SynthSpec::desk() };
    let summary = synth_generate(&spec, 42, &dir)?;
    for (split, (n, counts)) in &summary.splits {
        println!("{split:>5}: {n:>3} images, per-class presence {counts:?}");
    }

    let ds = load_dataset(&dir)?;
    let stats = compute_stats(&ds, "train")?;
    println!("classes {:?}", ds.class_names());
    println!("train mean pixel {:.1?}", stats.mean_pixel);
    let first = &ds.split("train")?[0];
    for ann in ds.annotations(first) {
        println!(
            "{first}: {} box ({:.0},{:.0})-({:.0},{:.0}) center {:?}",
            ds.class_names()[ann.class_id],
            ann.bbox.x_min,
            ann.bbox.y_min,
            ann.bbox.x_max,
            ann.bbox.y_max,
            ann.center
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
