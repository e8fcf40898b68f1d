//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches stdout. Set
//! `WSLOC_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.
//! The end-to-end and ablation runs train the full desk recipe twice and
//! dominate the runtime (minutes).

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsloc::dataset::{load_dataset, synth_generate, BBox, SpatialAnnotation, SynthSpec};
use wsloc::engine::{train, TrainConfig, TrainData};
use wsloc::inference::evaluate_split;
use wsloc::metrics::{average_precision, classification_ap, distance_error, localization_ap, localization_match, ClassPrediction};
use wsloc::nn::gradcheck::{grad_check, BatchNormProbe, ConvProbe, GradCheckReport, HeadProbe, NetworkProbe, ReluProbe};
use wsloc::nn::{Backbone, BackboneConfig};
use wsloc::objective::{class_weights, wbce_loss, ClassWeights, PresenceLabel};
use wsloc::tensor::{ConvSpec, Mode, RunningStats, Tensor4};
use wsloc::wslnet::{head_forward, spatial_pool, Head, HeadSpec, Pooling, WslNet};

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn report(&mut self, name: &str, outcome: Outcome) {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

const GRAD_EPS: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;

fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut reports: Vec<(String, GradCheckReport)> = Vec::new();

    // every conv configuration of the default network, plus the head's 1x1
    let desk = BackboneConfig::desk();
    let mut specs: Vec<ConvSpec> = desk.blocks().iter().map(|b| b.conv).collect();
    specs.push(ConvSpec::new(desk.out_channels(), 5 * 4, 1, 1));
    for spec in specs {
        let input = random([2, spec.in_channels, 9, 11], &mut rng);
        let (oh, ow) = spec.output_hw(9, 11);
        let mut probe = ConvProbe {
            spec,
            weights: random(spec.weight_dims(), &mut rng),
            bias: (0..spec.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            probe: random([2, spec.out_channels, oh, ow], &mut rng),
            input,
        };
        let r = grad_check(&mut probe, GRAD_EPS, 150, 1).map_err(err)?;
        reports.push((format!("conv {}->{} s{}", spec.in_channels, spec.out_channels, spec.stride), r));
    }

    let mut relu = ReluProbe {
        input: random([2, 3, 6, 7], &mut rng),
        probe: random([2, 3, 6, 7], &mut rng),
    };
    reports.push(("relu".into(), grad_check(&mut relu, GRAD_EPS, 200, 2).map_err(err)?));

    for mode in [Mode::Train, Mode::Eval] {
        let mut running = RunningStats::new(4);
        running.mean = vec![0.1, -0.2, 0.0, 0.3];
        running.var = vec![0.5, 1.5, 2.0, 0.8];
        let inputs = vec![random([2, 4, 5, 6], &mut rng), random([1, 4, 6, 5], &mut rng)];
        let probes = vec![random([2, 4, 5, 6], &mut rng), random([1, 4, 6, 5], &mut rng)];
        let mut bn = BatchNormProbe {
            inputs,
            scale: vec![1.2, 0.7, -0.5, 1.0],
            shift: vec![0.1, 0.0, -0.3, 0.2],
            probes,
            mode,
            running,
        };
        reports.push((format!("batchnorm {mode:?}"), grad_check(&mut bn, GRAD_EPS, 150, 3).map_err(err)?));
    }

    for pooling in [Pooling::Esp, Pooling::Msp] {
        let spec = HeadSpec { pooling, ..HeadSpec::new(3) };
        let mut head = HeadProbe {
            head: Head::init(spec, 6, 5).map_err(err)?,
            features: random([2, 6, 5, 7], &mut rng),
            probe: (0..2).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        };
        reports.push((format!("head {}", pooling.as_str()), grad_check(&mut head, GRAD_EPS, 150, 4).map_err(err)?));
    }

    let net = WslNet::<f64>::new(&desk, HeadSpec::new(5), 21).map_err(err)?;
    let images = vec![random([2, 3, 24, 40], &mut rng), random([1, 3, 40, 24], &mut rng)];
    let labels = [[1, 0, 1, 0, 0], [0, 1, 1, 1, 0], [1, 1, 0, 0, 1]]
        .iter()
        .map(|b| PresenceLabel::new(b.to_vec()).unwrap())
        .collect();
    let mut probe = NetworkProbe {
        net,
        images,
        labels,
        weights: class_weights(&[102588, 8876, 103106, 3254, 5986]).map_err(err)?,
    };
    reports.push(("network + loss".into(), grad_check(&mut probe, GRAD_EPS, 300, 5).map_err(err)?));

    let secs = start.elapsed().as_secs_f64();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("non-empty");
    let skipped: usize = reports.iter().map(|r| r.1.skipped_at_kinks).sum();
    let checked: usize = reports.iter().map(|r| r.1.params_checked + r.1.inputs_checked).sum();
    let detail = format!(
        "max rel error {:.2e} ({}: {}), {checked} entries checked, {skipped} skipped at kinks, {secs:.1} s",
        worst.1.max_rel_error, worst.0, worst.1.worst
    );
    check(worst.1.max_rel_error < GRAD_TOL, || detail.clone())?;
    check(secs < 120.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

// ----------------------------------------------------------------- shapes

fn shape_fidelity() -> Outcome {
    let paper = BackboneConfig::paper_scale();
    check(paper.output_hw(480, 854) == (60, 107) && paper.out_channels() == 512, || {
        format!("paper-scale maps {:?} x {}", paper.output_hw(480, 854), paper.out_channels())
    })?;
    // real forward pass, channels narrowed 8x to keep it CPU-friendly
    let narrow = paper.narrowed(8);
    let backbone = Backbone::<f32>::init(&narrow, 1).map_err(err)?;
    let input = Tensor4::<f32>::from_fn([1, 3, 480, 854], |[_, c, y, x]| ((c + y * 7 + x * 3) % 17) as f32 / 17.0 - 0.5);
    let (features, _) = backbone.forward(std::slice::from_ref(&input), Mode::Eval).map_err(err)?;
    let fdims = features[0].dims();
    check(fdims == [1, 64, 60, 107], || format!("feature dims {fdims:?}"))?;
    let head = Head::<f32>::init(HeadSpec::new(7), 64, 2).map_err(err)?;
    let (maps, scores, _) = head_forward(&features[0], &head).map_err(err)?;
    check(maps.maps.dims() == [1, 7, 60, 107] && scores.scores[0].len() == 7, || {
        format!("map dims {:?}", maps.maps.dims())
    })?;

    // original ResNet strides in the last two stages -> global stride 32
    let strided = paper.with_tail_strides(2, 2);
    check(strided.global_stride() == 32 && paper.global_stride() == 8, || "global strides".into())?;
    let mut exact = Vec::new();
    for (h, w) in [(480, 864), (96, 160), (480, 640)] {
        let (a, b) = (strided.output_hw(h, w), paper.output_hw(h, w));
        check(b.0 == 4 * a.0 && b.1 == 4 * a.1, || format!("{h}x{w}: {a:?} -> {b:?} is not x4"))?;
        exact.push(format!("{h}x{w}: {}x{} -> {}x{}", a.0, a.1, b.0, b.1));
    }
    let (a, b) = (strided.output_hw(480, 854), paper.output_hw(480, 854));
    check(b.0 == 4 * a.0, || format!("480 rows: {} -> {}", a.0, b.0))?;
    Ok(format!(
        "480x854 -> features {fdims:?}, maps {:?}; x4 exact on {}; at 854 columns ceil rounding gives {} -> {}",
        maps.maps.dims(),
        exact.join(", "),
        a.1,
        b.1
    ))
}

// ---------------------------------------------------------------- pooling

fn pooling_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let esp = HeadSpec::new(1);
    let msp = HeadSpec { pooling: Pooling::Msp, ..esp };
    let esp0 = HeadSpec { alpha: 0.0, ..esp };
    let mut max_shift_dev: f64 = 0.0;
    for i in 0..1000 {
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let map: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mx = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = map.iter().copied().fold(f64::INFINITY, f64::min);
        let s = spatial_pool(&map, h, w, &esp).map_err(err)?.score;
        check(s == mx + 0.6 * mn, || format!("map {i}: esp {s} != {}", mx + 0.6 * mn))?;
        let m = spatial_pool(&map, h, w, &msp).map_err(err)?.score;
        let z = spatial_pool(&map, h, w, &esp0).map_err(err)?.score;
        check(m == z && m == mx, || format!("map {i}: msp {m}, esp(0) {z}, max {mx}"))?;

        let mut shuffled = map.clone();
        shuffled.shuffle(&mut rng);
        let p = spatial_pool(&shuffled, w, h, &esp).map_err(err)?.score;
        check(p == s, || format!("map {i}: permutation changed {s} -> {p}"))?;

        // dyadic values and alpha keep the shift arithmetic exact
        let dy: Vec<f64> = map.iter().map(|v| (v * 4.0).round() / 4.0).collect();
        let delta = rng.gen_range(-64i32..64) as f64 / 8.0;
        let half = HeadSpec { alpha: 0.5, ..esp };
        let a = spatial_pool(&dy, h, w, &half).map_err(err)?.score;
        let b = spatial_pool(&dy.iter().map(|v| v + delta).collect::<Vec<_>>(), h, w, &half).map_err(err)?.score;
        check(b == a + 1.5 * delta, || format!("map {i}: dyadic shift {a} -> {b}, delta {delta}"))?;
        // alpha = 0.6 is not dyadic; the shift holds up to rounding
        let a = spatial_pool(&map, h, w, &esp).map_err(err)?.score;
        let b = spatial_pool(&map.iter().map(|v| v + delta).collect::<Vec<_>>(), h, w, &esp).map_err(err)?.score;
        max_shift_dev = max_shift_dev.max((b - a - 1.6 * delta).abs());
    }
    check(max_shift_dev < 1e-12, || format!("alpha=0.6 shift deviation {max_shift_dev:e}"))?;
    Ok(format!(
        "1000 maps: ESP == max + 0.6 min bit-exact, MSP == ESP(0), permutation invariant, dyadic shift exact, alpha=0.6 shift within {max_shift_dev:.1e}"
    ))
}

// ------------------------------------------------------------------- loss

fn log_sigmoid_oracle(x: f64) -> f64 {
    // log(sigmoid(x)) = -log(1 + e^-x), split by sign for stability
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_val, mut worst_fd): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let c = rng.gen_range(1..8);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.gen_range(-6.0..6.0)).collect()).collect();
        let labels: Vec<PresenceLabel> = (0..n)
            .map(|_| PresenceLabel::new((0..c).map(|_| rng.gen_range(0..2)).collect()).unwrap())
            .collect();
        let weights = ClassWeights((0..c).map(|_| rng.gen_range(0.1..20.0)).collect());
        let (loss, grads) = wbce_loss(&scores, &labels, &weights).map_err(err)?;

        let mut oracle = 0.0;
        for cls in 0..c {
            let mut inner = 0.0;
            for s in 0..n {
                let k = labels[s].bits()[cls] as f64;
                let v = scores[s][cls];
                inner += weights.0[cls] * k * log_sigmoid_oracle(v) + (1.0 - k) * log_sigmoid_oracle(-v);
            }
            oracle += -inner / n as f64;
        }
        worst_val = worst_val.max((loss - oracle).abs());

        let h = 1e-6;
        for s in 0..n {
            for cls in 0..c {
                let mut plus = scores.clone();
                plus[s][cls] += h;
                let mut minus = scores.clone();
                minus[s][cls] -= h;
                let fd = (wbce_loss(&plus, &labels, &weights).map_err(err)?.0
                    - wbce_loss(&minus, &labels, &weights).map_err(err)?.0)
                    / (2.0 * h);
                worst_fd = worst_fd.max((fd - grads[s][cls]).abs());
            }
        }
    }
    check(worst_val < 1e-12, || format!("value deviation {worst_val:e}"))?;
    check(worst_fd < 1e-6, || format!("gradient deviation {worst_fd:e}"))?;

    // Cholec80 frame counts: grasper, bipolar, hook, scissors, clipper, irrigator, specimen bag
    let w = class_weights(&[102588, 8876, 103106, 3254, 5986, 9814, 11462]).map_err(err)?;
    let ratio = w.0[3] / w.0[2];
    let expected = 103106.0 / 3254.0;
    check((ratio - expected).abs() < 1e-6 && (ratio - 31.7).abs() < 0.05, || format!("W_scissors/W_hook = {ratio}"))?;
    Ok(format!(
        "100 triples: value within {worst_val:.1e}, finite differences within {worst_fd:.1e}; W_scissors/W_hook = {ratio:.4}"
    ))
}

// ---------------------------------------------------------------- metrics

fn threshold_oracle(records: &[(f64, bool)], npos: usize) -> f64 {
    let mut thresholds: Vec<f64> = records.iter().map(|r| r.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let selected = records.iter().filter(|r| r.0 >= t).count() as f64;
            let tp = records.iter().filter(|r| r.0 >= t && r.1).count() as f64;
            (tp / npos as f64, tp / selected)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let best_precision = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev_recall) * best_precision;
        prev_recall = points[i].0;
    }
    ap
}

fn inside_expanded(peak: (f64, f64), b: &BBox, tol: f64) -> bool {
    peak.0 >= b.x_min - tol && peak.0 <= b.x_max + tol && peak.1 >= b.y_min - tol && peak.1 <= b.y_max + tol
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for fixture in 0..50 {
        let n = rng.gen_range(2..=200);
        let c = 3;
        let coarse = fixture % 2 == 0; // even fixtures carry heavy confidence ties
        let mut preds = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut anns = Vec::with_capacity(n);
        for _ in 0..n {
            let bits: Vec<u8> = (0..c).map(|_| rng.gen_range(0..2)).collect();
            let mut ann = Vec::new();
            let mut row = Vec::new();
            for (k, &b) in bits.iter().enumerate() {
                if b == 1 {
                    let (x, y) = (rng.gen_range(0.0..140.0), rng.gen_range(0.0..80.0));
                    let bbox = BBox { x_min: x, y_min: y, x_max: x + rng.gen_range(4.0..20.0), y_max: y + rng.gen_range(4.0..20.0) };
                    ann.push(SpatialAnnotation { class_id: k, bbox, center: (x + 2.0, y + 2.0) });
                }
                let confidence = if coarse { rng.gen_range(0..8) as f64 / 8.0 } else { rng.gen::<f64>() };
                let (px, py) = (rng.gen_range(0.0..160.0), rng.gen_range(0.0..96.0));
                row.push(ClassPrediction { confidence, x: px, y: py, present: confidence >= 0.5 });
            }
            preds.push(row);
            labels.push(PresenceLabel::new(bits).unwrap());
            anns.push(ann);
        }
        let cls = classification_ap(&preds, &labels).map_err(err)?;
        let loc = localization_ap(&preds, &labels, &anns, 8.0).map_err(err)?;
        for k in 0..c {
            let recs: Vec<(f64, bool)> = preds.iter().zip(&labels).map(|(p, l)| (p[k].confidence, l.is_present(k))).collect();
            let npos = recs.iter().filter(|r| r.1).count();
            if npos > 0 {
                worst = worst.max((cls.per_class[k].unwrap() - threshold_oracle(&recs, npos)).abs());
                let loc_recs: Vec<(f64, bool)> = preds
                    .iter()
                    .zip(&labels)
                    .zip(&anns)
                    .filter(|((_, l), _)| l.is_present(k))
                    .map(|((p, _), a)| {
                        let hit = a.iter().any(|s| s.class_id == k && inside_expanded((p[k].x, p[k].y), &s.bbox, 8.0));
                        (p[k].confidence, hit)
                    })
                    .collect();
                worst = worst.max((loc.per_class[k].unwrap() - threshold_oracle(&loc_recs, npos)).abs());
            } else if cls.per_class[k].is_some() {
                return Err(format!("fixture {fixture}: class {k} without positives got an AP"));
            }
        }
    }
    check(worst < 1e-9, || format!("AP deviates from the threshold oracle by {worst:e}"))?;

    let b = [BBox { x_min: 100.0, y_min: 40.0, x_max: 200.0, y_max: 90.0 }];
    let tp = |x: f64, y: f64| localization_match((x, y), &b, 8.0).true_positive;
    check(tp(205.0, 60.0) && !tp(215.0, 60.0), || "x_max=200: 205 must be TP, 215 FP".into())?;
    check(tp(208.0, 98.0) && !tp(208.0, 98.5) && tp(92.0, 32.0) && !tp(91.5, 60.0), || "tolerance edges".into())?;
    let worked = average_precision(&[(0.9, true), (0.8, false), (0.3, true)], 2).map_err(err)?;
    check((worked - 5.0 / 6.0).abs() < 1e-12, || format!("worked AP {worked}, expected 0.8333"))?;

    let d = distance_error((100.0, 100.0), (130.0, 140.0), 480, 854);
    let exact = 100.0 * 50.0 / (480f64 * 480.0 + 854.0 * 854.0).sqrt();
    check((d - exact).abs() < 1e-6 && (d - 5.10).abs() < 0.005, || format!("distance {d}"))?;
    Ok(format!("50 fixtures within {worst:.1e} of the oracle; tolerance-8 edges OK; worked distance {d:.4}%"))
}

// ------------------------------------------------------------ end to end

const SYNTH_SEED: u64 = 2024;

struct Run {
    classification_map: f64,
    localization_map: f64,
    distance: f64,
    secs: f64,
}

fn desk_run(dataset_dir: &Path, masking: bool) -> Result<Run, String> {
    let dataset = load_dataset(dataset_dir).map_err(err)?;
    let mut config = TrainConfig::desk();
    config.augment.masking = masking;
    config.seed = 1;
    let data = TrainData::from_dataset(&dataset, "train", Some("val")).map_err(err)?;
    let start = Instant::now();
    let outcome = train(&config, &data, None, None).map_err(err)?;
    let report = evaluate_split(&outcome.model, &dataset, "test", config.backbone.global_stride() as f64).map_err(err)?;
    print!("{}", indent(&report.to_csv()));
    Ok(Run {
        classification_map: report.classification_map().unwrap_or(0.0),
        localization_map: report.localization_map().unwrap_or(0.0),
        distance: report.mean_distance().unwrap_or(100.0),
        secs: start.elapsed().as_secs_f64(),
    })
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("      {l}\n")).collect()
}

fn end_to_end(run: &Result<Run, String>) -> Outcome {
    let r = run.as_ref().map_err(Clone::clone)?;
    let detail = format!(
        "classification mAP {:.4} (>= 0.90), localization mAP {:.4} (>= 0.70), mean distance {:.2}% (<= 12%), {:.1} min (<= 45)",
        r.classification_map,
        r.localization_map,
        r.distance,
        r.secs / 60.0
    );
    let ok = r.classification_map >= 0.90 && r.localization_map >= 0.70 && r.distance <= 12.0 && r.secs <= 45.0 * 60.0;
    check(ok, || detail.clone())?;
    Ok(detail)
}

fn ablation(on: &Result<Run, String>, off: &Result<Run, String>) -> Outcome {
    let on = on.as_ref().map_err(Clone::clone)?;
    let off = off.as_ref().map_err(Clone::clone)?;
    let detail = format!(
        "mean distance masking on {:.2}% vs off {:.2}% (margin {:+.2} pp, allowed +0.5)",
        on.distance,
        off.distance,
        on.distance - off.distance
    );
    check(on.distance <= off.distance + 0.5, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let mut full = vec!["wsloc"];
    full.extend_from_slice(args);
    match wsloc::cli::run(full) {
        0 => Ok(()),
        code => Err(format!("`wsloc {}` exited with {code}", args.join(" "))),
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    cli(&["synth", "--out", &p("data"), "--seed", "5", "--train", "96", "--val", "24", "--test", "32", "--presence-probs", "0.6,0.6,0.6,0.2,0.2"])?;
    for run in ["a", "b"] {
        let out = p(&format!("train_{run}"));
        cli(&["train", "--dataset", &p("data"), "--out", &out, "--epochs", "2", "--milestones", "1", "--seed", "13"])?;
        let ckpt = format!("{out}/model.ckpt");
        cli(&["eval", "--checkpoint", &ckpt, "--dataset", &p("data"), "--split", "test", "--out", &p(&format!("eval_{run}"))])?;
    }
    let mut compared = Vec::new();
    for file in ["train_{}/model.ckpt", "train_{}/train_log.csv", "eval_{}/metrics.csv", "eval_{}/pr_classification.csv", "eval_{}/pr_localization.csv"] {
        let a = std::fs::read(root.join(file.replace("{}", "a"))).map_err(err)?;
        let b = std::fs::read(root.join(file.replace("{}", "b"))).map_err(err)?;
        check(a == b, || format!("{} differs between runs", file.replace("{}", "*")))?;
        compared.push(format!("{} ({} B)", file.replace("_{}", ""), a.len()));
    }
    Ok(format!("bit-identical: {}", compared.join(", ")))
}

fn main() {
    let mut suite = Suite { failures: 0 };
    suite.report("gradient integrity", gradient_integrity());
    suite.report("shape fidelity", shape_fidelity());
    suite.report("pooling law", pooling_law());
    suite.report("loss oracle", loss_oracle());
    suite.report("metric oracle", metric_oracle());
    suite.report("determinism", determinism());

    let tmp = tempfile::tempdir().expect("temp dir");
    let synth = synth_generate(&SynthSpec::desk(), SYNTH_SEED, tmp.path()).map_err(err);
    let (on, off) = match synth {
        Ok(_) => {
            println!("      desk run, masking on:");
            let on = desk_run(tmp.path(), true);
            println!("      desk run, masking off:");
            let off = desk_run(tmp.path(), false);
            (on, off)
        }
        Err(e) => (Err(e.clone()), Err(e)),
    };
    suite.report("weak-supervision end-to-end", end_to_end(&on));
    suite.report("ablation direction (masking)", ablation(&on, &off));

    println!("{} of 8 criteria failed", suite.failures);
    // failures are always reported above; WSLOC_ACCEPTANCE_STRICT=1 also
    // turns them into a non-zero exit status
    let strict = std::env::var("WSLOC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if suite.failures > 0 && strict {
        std::process::exit(1);
    }
}
