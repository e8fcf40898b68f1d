// Extended spatial pooling versus max pooling on a hand-made heatmap.
//
// ```text
// cargo run --example pooling
// ```

use wsloc::wslnet::{spatial_pool, HeadSpec, Pooling};

pub fn run_example() -> anyhow::Result<()> {
    // 3x4 map: one confident blob plus a strongly negative background corner
    let map = [
        0.5, 1.0, 4.0, 0.0, //
        0.2, 2.0, 3.5, -0.5, //
        -2.0, 0.1, 0.3, -1.0,
    ];
    let esp = HeadSpec::new(1);
    let msp = HeadSpec { pooling: Pooling::Msp, ..esp };

    let e = spatial_pool(&map, 3, 4, &esp)?;
    let m = spatial_pool(&map, 3, 4, &msp)?;
    println!("max {:.2} at {:?}, min {:.2} at {:?}", e.extrema.max, e.extrema.argmax, e.extrema.min, e.extrema.argmin);
    println!("ESP (alpha {}) = {:.2}", esp.alpha, e.score);
    println!("MSP          = {:.2}", m.score);
    anyhow::ensure!(e.score == 4.0 + 0.6 * -2.0 && m.score == 4.0);

    // shifting the whole map by d moves ESP by (1 + alpha) d
    let shifted: Vec<f64> = map.iter().map(|v| v + 1.0).collect();
    let s = spatial_pool(&shifted, 3, 4, &esp)?;
    println!("shift by +1: ESP {:.2} -> {:.2}", e.score, s.score);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
