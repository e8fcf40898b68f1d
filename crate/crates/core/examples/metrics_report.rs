// Classification AP, localization AP and distance error on a tiny
// hand-written fixture.
//
// ```text
// cargo run --example metrics_report
// ```

use wsloc::dataset::{BBox, SpatialAnnotation};
use wsloc::metrics::{distance_error, evaluate, localization_match, ClassPrediction};
use wsloc::objective::PresenceLabel;

fn pred(confidence: f64, x: f64, y: f64) -> ClassPrediction {
    ClassPrediction { confidence, x, y, present: confidence >= 0.5 }
}

fn ann(class_id: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> SpatialAnnotation {
    SpatialAnnotation {
        class_id,
        bbox: BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 },
        center: ((x0 + x1) / 2.0, (y0 + y1) / 2.0),
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let classes = vec!["grasper".to_string(), "hook".to_string()];
    let labels = vec![
        PresenceLabel::new(vec![1, 0])?,
        PresenceLabel::new(vec![1, 1])?,
        PresenceLabel::new(vec![0, 1])?,
        PresenceLabel::new(vec![0, 0])?,
    ];
    let anns = vec![
        vec![ann(0, 10.0, 10.0, 30.0, 30.0)],
        vec![ann(0, 50.0, 20.0, 70.0, 40.0), ann(1, 100.0, 50.0, 120.0, 70.0)],
        vec![ann(1, 20.0, 60.0, 40.0, 80.0)],
        vec![],
    ];
    let preds = vec![
        vec![pred(0.9, 20.0, 20.0), pred(0.2, 5.0, 5.0)],
        vec![pred(0.7, 140.0, 10.0), pred(0.8, 110.0, 60.0)], // grasper peak misses its box
        vec![pred(0.3, 0.0, 0.0), pred(0.6, 45.0, 85.0)],     // hook peak 5 px outside: within tolerance
        vec![pred(0.6, 80.0, 40.0), pred(0.1, 0.0, 0.0)],
    ];
    let dims = vec![(96, 160); 4];
    let report = evaluate(&classes, &preds, &labels, &anns, &dims, 8.0)?;
    print!("{}", report.to_csv());

    let m = localization_match((45.0, 85.0), &[anns[2][0].bbox], 8.0);
    println!("hook peak (45,85): true positive {}", m.true_positive);
    println!(
        "distance error of a (30,40) px miss on 480x854: {:.2}%",
        distance_error((100.0, 100.0), (130.0, 140.0), 480, 854)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
