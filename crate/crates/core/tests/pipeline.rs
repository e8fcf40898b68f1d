use wsloc::dataset::{load_dataset, synth_generate, SynthSpec};
use wsloc::engine::{checkpoint_path, train, TrainConfig, TrainData};
use wsloc::inference::{evaluate_split, predict_split};
use wsloc::model::Model;

fn small_spec() -> SynthSpec {
    SynthSpec {
        train: 64,
        val: 16,
        test: 16,
        presence_probs: vec![0.6, 0.6, 0.6, 0.3, 0.3],
        ..SynthSpec::desk()
    }
}

#[test]
fn synth_train_checkpoint_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    synth_generate(&small_spec(), 21, &data_dir).unwrap();
    let ds = load_dataset(&data_dir).unwrap();
    let data = TrainData::from_dataset(&ds, "train", Some("val")).unwrap();

    let mut config = TrainConfig::desk();
    config.epochs = 4;
    config.milestones = vec![3];
    config.checkpoint_every = 2;
    let out = tmp.path().join("run");
    let outcome = train(&config, &data, Some(&out), None).unwrap();

    assert_eq!(outcome.log.len(), 4);
    assert!(outcome.log.iter().all(|r| r.train_loss.is_finite() && r.val_map.is_some()));
    assert!(outcome.log[3].train_loss < outcome.log[0].train_loss, "{:?}", outcome.log);
    assert!(checkpoint_path(&out, 2).exists() && checkpoint_path(&out, 4).exists());

    // a mid-run checkpoint resumes to the same final weights
    let mid = Model::load(&checkpoint_path(&out, 2)).unwrap();
    assert_eq!(mid.epochs_completed, 2);
    let resumed = train(&config, &data, None, Some(mid)).unwrap();
    assert_eq!(resumed.model.max_param_diff(&outcome.model), 0.0);

    let report = evaluate_split(&outcome.model, &ds, "test", 8.0).unwrap();
    for v in report.classification.per_class.iter().chain(&report.localization.per_class).flatten() {
        assert!((0.0..=1.0).contains(v));
    }
    let preds = predict_split(&outcome.model, &ds, "test", 0.5).unwrap();
    assert_eq!(preds.len(), 16);
    for (_, row) in &preds {
        for p in row {
            assert!(p.x >= 0.0 && p.x <= 159.0 && p.y >= 0.0 && p.y <= 95.0);
            assert_eq!(p.present, p.confidence >= 0.5);
        }
    }
}
