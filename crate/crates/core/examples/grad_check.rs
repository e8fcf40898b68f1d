// Finite-difference check of the full network + weighted loss, in f64.
//
// ```text
// cargo run --release --example grad_check
// ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsloc::nn::gradcheck::{grad_check, NetworkProbe};
use wsloc::nn::BackboneConfig;
use wsloc::objective::{class_weights, PresenceLabel};
use wsloc::tensor::Tensor4;
use wsloc::wslnet::{HeadSpec, WslNet};

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = BackboneConfig::from_stages(&[(6, 1, 2), (8, 1, 2), (8, 1, 1)]);
    let net = WslNet::<f64>::new(&backbone, HeadSpec::new(3), 7)?;
    // two differently shaped members, as produced by +/-90 degree rotation
    let images = vec![
        Tensor4::from_fn([1, 3, 12, 20], |_| rng.gen_range(-1.0..1.0)),
        Tensor4::from_fn([1, 3, 20, 12], |_| rng.gen_range(-1.0..1.0)),
    ];
    let labels = vec![PresenceLabel::new(vec![1, 0, 1])?, PresenceLabel::new(vec![0, 1, 1])?];
    let mut probe = NetworkProbe {
        net,
        images,
        labels,
        weights: class_weights(&[120, 15, 240])?,
    };

    let report = grad_check(&mut probe, 1e-4, 100, 1)?;
    println!(
        "max relative error {:.2e} at {} ({} params, {} inputs, {} skipped at kinks)",
        report.max_rel_error, report.worst, report.params_checked, report.inputs_checked, report.skipped_at_kinks
    );
    anyhow::ensure!(report.max_rel_error < 1e-4, "gradient mismatch");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
