//! The `wsloc` command line: `synth`, `train`, `eval` and `predict`.
//!
//! Every flag `--foo-bar` has a config-file twin `foo_bar=...` (dotted
//! network keys such as `backbone.stages` are file-only). Precedence, lowest
//! first: built-in defaults, `--config` file, command-line flags. Each run
//! writes the effective values to `<out>/config.resolved`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_list, KeyValues};
use crate::dataset::{load_dataset, synth_generate, SynthSpec};
use crate::engine::{train, TrainConfig, TrainData, FINAL_CHECKPOINT};
use crate::error::{config_err, Error, Result};
use crate::inference::{evaluate_split, predict_batch, predictions_csv, save_overlay, DEFAULT_OPACITY, DEFAULT_THRESHOLD};
use crate::model::Model;
use crate::raster::Image;

pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Debug, Parser)]
#[command(name = "wsloc", version, about = "Weakly-supervised tool localization")]
pub struct Cli {
    /// key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train from image-level labels.
    Train(TrainArgs),
    /// Score a checkpoint on an annotated split.
    Eval(EvalArgs),
    /// Write per-class peaks and heatmap overlays.
    Predict(PredictArgs),
}

/// Copies every `Some` field into `kv` under its snake_case name.
macro_rules! flags_to_kv {
    ($self:ident, $kv:ident, $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = &$self.$field {
                $kv.set(stringify!($field), v.to_string());
            }
        )*
    };
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Comma-separated per-class presence probabilities; their count sets C.
    #[arg(long)]
    pub presence_probs: Option<String>,
}

impl SynthArgs {
    fn to_kv(&self, kv: &mut KeyValues) {
        let out = self.out.as_ref().map(|p| p.display().to_string());
        if let Some(o) = out {
            kv.set("out", o);
        }
        flags_to_kv!(self, kv, seed, train, val, test, height, width, presence_probs);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `desk` (default) or `paper`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub train_split: Option<String>,
    /// Empty string disables validation.
    #[arg(long)]
    pub val_split: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub milestones: Option<String>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub backbone_lr_divisor: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub flip_prob: Option<f64>,
    #[arg(long)]
    pub rotate_prob: Option<f64>,
    #[arg(long)]
    pub masking: Option<bool>,
    #[arg(long)]
    pub mask_patch_size: Option<usize>,
    #[arg(long)]
    pub mask_prob_per_patch: Option<f64>,
}

impl TrainArgs {
    fn to_kv(&self, kv: &mut KeyValues) {
        for (k, p) in [("dataset", &self.dataset), ("out", &self.out), ("resume", &self.resume)] {
            if let Some(p) = p {
                kv.set(k, p.display());
            }
        }
        flags_to_kv!(
            self,
            kv,
            preset,
            train_split,
            val_split,
            epochs,
            base_lr,
            milestones,
            decay,
            backbone_lr_divisor,
            momentum,
            weight_decay,
            batch_size,
            seed,
            checkpoint_every,
            flip_prob,
            rotate_prob,
            masking,
            mask_patch_size,
            mask_prob_per_patch,
        );
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Localization tolerance in pixels; defaults to the global stride.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

impl EvalArgs {
    fn to_kv(&self, kv: &mut KeyValues) {
        for (k, p) in [("checkpoint", &self.checkpoint), ("dataset", &self.dataset), ("out", &self.out)] {
            if let Some(p) = p {
                kv.set(k, p.display());
            }
        }
        flags_to_kv!(self, kv, split, tolerance);
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory; predicts every image of `--split`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub opacity: Option<f64>,
    /// `png` or `ppm`.
    #[arg(long)]
    pub overlay_format: Option<String>,
    /// Individual image files instead of a dataset split.
    #[arg(long = "image", num_args = 1..)]
    pub images: Vec<PathBuf>,
}

impl PredictArgs {
    fn to_kv(&self, kv: &mut KeyValues) {
        for (k, p) in [("checkpoint", &self.checkpoint), ("dataset", &self.dataset), ("out", &self.out)] {
            if let Some(p) = p {
                kv.set(k, p.display());
            }
        }
        flags_to_kv!(self, kv, split, threshold, opacity, overlay_format);
    }
}

const SYNTH_KEYS: &[&str] = &["out", "seed", "train", "val", "test", "height", "width", "presence_probs"];
const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "out",
    "preset",
    "train_split",
    "val_split",
    "resume",
    "epochs",
    "base_lr",
    "milestones",
    "decay",
    "backbone_lr_divisor",
    "momentum",
    "weight_decay",
    "batch_size",
    "seed",
    "checkpoint_every",
    "flip_prob",
    "rotate_prob",
    "masking",
    "mask_patch_size",
    "mask_prob_per_patch",
];
const EVAL_KEYS: &[&str] = &["checkpoint", "dataset", "split", "out", "tolerance"];
const PREDICT_KEYS: &[&str] = &["checkpoint", "dataset", "split", "out", "threshold", "opacity", "overlay_format"];

fn known_key(key: &str) -> bool {
    key.starts_with("backbone.")
        || key.starts_with("head.")
        || [SYNTH_KEYS, TRAIN_KEYS, EVAL_KEYS, PREDICT_KEYS].iter().any(|ks| ks.contains(&key))
}

/// Defaults < config file < flags. Keys meant for other subcommands are
/// dropped so one file can serve several commands.
fn resolve(file: Option<&Path>, command: &str, allowed: &[&str], flags: KeyValues) -> Result<KeyValues> {
    let mut kv = KeyValues::new();
    if let Some(path) = file {
        let from_file = KeyValues::load(path)?;
        for key in from_file.keys() {
            if !known_key(key) {
                return Err(config_err(format!("unknown key '{key}' in {}", path.display())));
            }
        }
        for key in from_file.keys() {
            let network_key = command == "train" && (key.starts_with("backbone.") || key.starts_with("head."));
            if allowed.contains(&key) || network_key {
                kv.set(key, from_file.get(key).unwrap_or_default());
            }
        }
    }
    kv.overlay(&flags);
    Ok(kv)
}

fn write_resolved(out: &Path, command: &str, kv: &KeyValues) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut full = kv.clone();
    full.set("command", command);
    std::fs::write(out.join(RESOLVED_FILE), full.to_text())?;
    Ok(())
}

fn required_path(kv: &KeyValues, key: &str) -> Result<PathBuf> {
    kv.get(key)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| config_err(format!("--{} is required", key.replace('_', "-"))))
}

fn run_synth(kv: &mut KeyValues) -> Result<()> {
    let out = required_path(kv, "out")?;
    let mut spec = SynthSpec::desk();
    if let Some(p) = kv.get("presence_probs") {
        let probs: Vec<f64> = parse_list(p, "presence_probs")?;
        spec = SynthSpec {
            train: spec.train,
            val: spec.val,
            test: spec.test,
            ..SynthSpec::with_classes(probs.len(), probs)
        };
    }
    let seed: u64 = kv.parsed("seed")?.unwrap_or(0);
    spec.train = kv.parsed("train")?.unwrap_or(spec.train);
    spec.val = kv.parsed("val")?.unwrap_or(spec.val);
    spec.test = kv.parsed("test")?.unwrap_or(spec.test);
    spec.height = kv.parsed("height")?.unwrap_or(spec.height);
    spec.width = kv.parsed("width")?.unwrap_or(spec.width);
    kv.set("seed", seed);
    kv.set("train", spec.train);
    kv.set("val", spec.val);
    kv.set("test", spec.test);
    kv.set("height", spec.height);
    kv.set("width", spec.width);
    kv.set("presence_probs", crate::config::join_list(&spec.presence_probs));
    kv.set("classes", spec.class_names.join(","));
    write_resolved(&out, "synth", kv)?;
    let summary = synth_generate(&spec, seed, &out)?;
    for (split, (n, counts)) in &summary.splits {
        log::info!("{split}: {n} images, presence counts {counts:?}");
    }
    Ok(())
}

fn run_train(kv: &mut KeyValues) -> Result<()> {
    let dataset_dir = required_path(kv, "dataset")?;
    let out = required_path(kv, "out")?;
    let preset = kv.get("preset").unwrap_or("desk").to_string();
    let mut config = match preset.as_str() {
        "desk" => TrainConfig::desk(),
        "paper" => TrainConfig::paper(),
        other => return Err(config_err(format!("unknown preset '{other}' (expected desk or paper)"))),
    };
    config.apply_kv(kv)?;
    let train_split = kv.get("train_split").unwrap_or("train").to_string();
    let val_split = kv.get("val_split").unwrap_or("val").to_string();

    let dataset = load_dataset(&dataset_dir)?;
    config.head.num_classes = dataset.num_classes();
    config.validate()?;
    let has_val = !val_split.is_empty() && dataset.split_names().any(|s| s == val_split);
    let data = TrainData::from_dataset(&dataset, &train_split, has_val.then_some(val_split.as_str()))?;
    let resume = kv.get("resume").filter(|r| !r.is_empty()).map(|r| Model::load(Path::new(r))).transpose()?;

    let mut resolved = kv.clone();
    config.to_kv(&mut resolved);
    resolved.set("preset", &preset);
    resolved.set("train_split", &train_split);
    resolved.set("val_split", if has_val { val_split.as_str() } else { "" });
    resolved.set("mean_pixel", crate::config::join_list(&data.mean_pixel));
    write_resolved(&out, "train", &resolved)?;
    *kv = resolved;

    let outcome = train(&config, &data, Some(&out), resume)?;
    if let Some(last) = outcome.log.last() {
        log::info!("finished epoch {} with loss {:.5}", last.epoch, last.train_loss);
    }
    log::info!("wrote {}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn run_eval(kv: &mut KeyValues) -> Result<()> {
    let model = Model::load(&required_path(kv, "checkpoint")?)?;
    let dataset = load_dataset(&required_path(kv, "dataset")?)?;
    let out = required_path(kv, "out")?;
    let split = kv.get("split").unwrap_or("test").to_string();
    let tolerance = match kv.parsed::<f64>("tolerance")? {
        Some(t) => t,
        None => model.net.backbone.config.global_stride() as f64,
    };
    if !(tolerance >= 0.0) {
        return Err(config_err("tolerance must be non-negative"));
    }
    kv.set("split", &split);
    kv.set("tolerance", tolerance);
    write_resolved(&out, "eval", kv)?;
    let report = evaluate_split(&model, &dataset, &split, tolerance)?;
    report.write_csv(&out.join(METRICS_FILE))?;
    report.write_pr_curves(&out)?;
    log::info!(
        "classification mAP {:?}, localization mAP {:?}, mean distance {:?}%",
        report.classification_map(),
        report.localization_map(),
        report.mean_distance()
    );
    Ok(())
}

fn run_predict(kv: &mut KeyValues, image_files: &[PathBuf]) -> Result<()> {
    let model = Model::load(&required_path(kv, "checkpoint")?)?;
    let out = required_path(kv, "out")?;
    let threshold = kv.parsed("threshold")?.unwrap_or(DEFAULT_THRESHOLD);
    let opacity = kv.parsed("opacity")?.unwrap_or(DEFAULT_OPACITY);
    let ext = kv.get("overlay_format").unwrap_or("png").to_string();
    if ext != "png" && ext != "ppm" {
        return Err(config_err(format!("overlay_format must be png or ppm, got '{ext}'")));
    }
    let mut inputs: Vec<(String, PathBuf)> = Vec::new();
    if !image_files.is_empty() {
        for p in image_files {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            inputs.push((name, p.clone()));
        }
        kv.set("images", image_files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
    } else {
        let dataset = load_dataset(&required_path(kv, "dataset")?)?;
        let split = kv.get("split").unwrap_or("test").to_string();
        for name in dataset.split(&split)? {
            inputs.push((name.clone(), dataset.image_path(name)));
        }
        kv.set("split", split);
    }
    kv.set("threshold", threshold);
    kv.set("opacity", opacity);
    kv.set("overlay_format", &ext);
    write_resolved(&out, "predict", kv)?;

    let overlay_dir = out.join("overlays");
    std::fs::create_dir_all(&overlay_dir)?;
    let mut rows = Vec::with_capacity(inputs.len());
    for (name, path) in &inputs {
        let img = Image::from_rgb8(&image::open(path)?.to_rgb8());
        let (preds, maps) = predict_batch(&model, std::slice::from_ref(&img), threshold)?
            .pop()
            .ok_or_else(|| Error::State("no prediction produced".into()))?;
        let stem = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        save_overlay(&img, &maps, &preds, opacity, &overlay_dir.join(format!("{stem}.{ext}")))?;
        rows.push((name.clone(), preds));
    }
    std::fs::write(out.join(PREDICTIONS_FILE), predictions_csv(&model.class_names, &rows))?;
    Ok(())
}

/// Executes an already parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Synth(a) => {
            let mut flags = KeyValues::new();
            a.to_kv(&mut flags);
            run_synth(&mut resolve(file, "synth", SYNTH_KEYS, flags)?)
        }
        Command::Train(a) => {
            let mut flags = KeyValues::new();
            a.to_kv(&mut flags);
            run_train(&mut resolve(file, "train", TRAIN_KEYS, flags)?)
        }
        Command::Eval(a) => {
            let mut flags = KeyValues::new();
            a.to_kv(&mut flags);
            run_eval(&mut resolve(file, "eval", EVAL_KEYS, flags)?)
        }
        Command::Predict(a) => {
            let mut flags = KeyValues::new();
            a.to_kv(&mut flags);
            run_predict(&mut resolve(file, "predict", PREDICT_KEYS, flags)?, &a.images)
        }
    }
}

/// Parses and runs; returns the process exit code (0 ok, 1 runtime error,
/// 2 usage error). Diagnostics go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wsloc: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["wsloc", "frobnicate"]), 2);
        assert_eq!(run(["wsloc", "train", "--no-such-flag"]), 2);
        assert_eq!(run(["wsloc", "train", "--epochs", "many"]), 2);
        assert_eq!(run(["wsloc", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let out = dir.path().join("out");
        let code = run(["wsloc", "train", "--dataset", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert_eq!(run(["wsloc", "eval"]), 1);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "epochs=7\nseed=3\ntolerance=4\nbackbone.kernel=5\n").unwrap();
        let mut flags = KeyValues::new();
        flags.set("seed", 9);
        let kv = resolve(Some(&cfg), "train", TRAIN_KEYS, flags).unwrap();
        assert_eq!(kv.get("epochs"), Some("7"));
        assert_eq!(kv.get("seed"), Some("9"));
        assert_eq!(kv.get("backbone.kernel"), Some("5"));
        assert_eq!(kv.get("tolerance"), None);

        std::fs::write(&cfg, "epoch=7\n").unwrap();
        assert!(resolve(Some(&cfg), "train", TRAIN_KEYS, KeyValues::new()).is_err());
    }
}
