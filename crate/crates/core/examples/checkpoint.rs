// Save a model, reload it, and confirm predictions are unchanged.
//
// ```text
// cargo run --example checkpoint
// ```

use wsloc::inference::predict;
use wsloc::model::Model;
use wsloc::nn::BackboneConfig;
use wsloc::raster::Image;
use wsloc::wslnet::HeadSpec;

pub fn run_example() -> anyhow::Result<()> {
    let classes: Vec<String> = ["grasper", "hook"].iter().map(|s| s.to_string()).collect();
    let model = Model::new(&BackboneConfig::desk(), HeadSpec::new(2), classes, vec![128.0; 3], 5)?;

    let tmp = tempfile::tempdir()?;
    let path = tmp.path().join("model.ckpt");
    model.save(&path)?;
    println!("saved {} bytes", std::fs::metadata(&path)?.len());
    println!("header:\n{}", model.header().to_text());

    let loaded = Model::load(&path)?;
    println!("max parameter difference after reload: {}", model.max_param_diff(&loaded));

    let image = Image::filled(3, 48, 80, 90.0);
    let (a, _) = predict(&model, &image, 0.5)?;
    let (b, _) = predict(&loaded, &image, 0.5)?;
    anyhow::ensure!(a == b, "predictions changed after reload");
    println!("predictions identical: {:?}", a.iter().map(|p| p.confidence).collect::<Vec<_>>());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
