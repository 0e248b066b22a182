//! Experiment harness: text cells, reference configurations, grid sweeps
//! and CSV/JSON reports.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decoder::{train, train_with, Head, LinearDecoder, ModelFile, TrainConfig, TrainReport};
use crate::encoder::{HyperEncoder, IdealEncoder};
use crate::image::{self, BenchmarkEncoder, GrayImage};
use crate::error::{Error, Result};
use crate::seed;
use crate::text::{self, SecretKeyTable, Uniqueness, NUM_CLASSES};
use crate::xbar::{Crossbar, CrossbarConfig};

/// Character counts for the train, validation and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetSizes {
    /// 20K / 5K / 10K characters.
    pub const DESK: DatasetSizes = DatasetSizes {
        train: 20_000,
        val: 5_000,
        test: 10_000,
    };

    /// 100K / 100K / 10K characters.
    pub const FULL: DatasetSizes = DatasetSizes {
        train: 100_000,
        val: 100_000,
        test: 10_000,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if n == 0 {
                return Err(Error::config(format!("sizes.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Reads per secret vector used to calibrate the threshold.
pub const CALIBRATION_PASSES: usize = 20;

/// Everything produced by training one text cryptosystem.
#[derive(Debug, Clone)]
pub struct TextRun {
    pub crossbar: Crossbar,
    pub keys: SecretKeyTable,
    pub model: ModelFile,
    pub train_report: TrainReport,
    pub test_accuracy: f64,
    pub test_set: Vec<(crate::hv::BinaryHypervector, usize)>,
}

/// Build a crossbar and key table from `seed`, then [`train_text`].
///
/// `crossbar.seed` is replaced by a seed derived from `seed`.
pub fn run_text_cell(
    crossbar: &CrossbarConfig,
    sizes: DatasetSizes,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TextRun> {
    sizes.validate()?;
    let config = CrossbarConfig {
        seed: seed::derive(seed, "crossbar"),
        ..crossbar.clone()
    };
    let xbar = Crossbar::new_random(config)?;
    let keys = SecretKeyTable::generate(xbar.rows(), seed::derive(seed, "keys"))?;
    train_text(xbar, keys, sizes, train_cfg, seed)
}

/// Calibrate the threshold, train a decoder on fresh encryptions and score
/// it on a held-out set. All randomness is derived from `seed`.
pub fn train_text(
    xbar: Crossbar,
    keys: SecretKeyTable,
    sizes: DatasetSizes,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TextRun> {
    sizes.validate()?;
    let mut calib = seed::stream(seed::derive(seed, "calibrate"));
    let epsilon = text::calibrate_epsilon(&keys, &xbar, CALIBRATION_PASSES, &mut calib)?;

    let set = |label: &str, n: usize| {
        let mut rng = seed::stream(seed::derive(seed, label));
        text::build_dataset(n, &keys, &xbar, epsilon, &mut rng)
    };
    let train_set = set("data/train", sizes.train)?;
    let val_set = set("data/val", sizes.val)?;
    let test_set = set("data/test", sizes.test)?;

    let cfg = TrainConfig {
        seed: seed::derive(seed, "train"),
        ..train_cfg.clone()
    };
    let init = LinearDecoder::new(xbar.cols(), NUM_CLASSES, Head::SoftmaxClassifier, seed::derive(seed, "decoder"))?;
    let (decoder, train_report) = train(init, &train_set, &val_set, &cfg)?;
    let test_accuracy = text::evaluate_accuracy(&decoder, &test_set)?;
    Ok(TextRun {
        crossbar: xbar,
        keys,
        model: ModelFile {
            decoder,
            epsilon,
            train_config: Some(cfg),
            master_seed: seed,
        },
        train_report,
        test_accuracy,
        test_set,
    })
}

/// BHV-versus-benchmark reconstruction sweep over Gaussian noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSweep {
    pub multiplier: usize,
    pub sigmas: Vec<f64>,
    /// `W` entries are uniform in `(-half_range, half_range)`.
    pub half_range: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub bhv_train: TrainConfig,
    pub benchmark_train: TrainConfig,
}

impl ImageSweep {
    /// m = 4, sigma in {0, 0.5, 1, 2}, 1400/300/300 split of 2000 images.
    pub fn desk() -> Self {
        ImageSweep {
            multiplier: 4,
            sigmas: vec![0.0, 0.5, 1.0, 2.0],
            half_range: 2.0,
            train: 1400,
            val: 300,
            test: 300,
            bhv_train: TrainConfig::image_default(),
            benchmark_train: TrainConfig::image_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(Error::config("multiplier", "must be at least 1"));
        }
        if self.sigmas.is_empty() {
            return Err(Error::config("sigmas", "need at least one noise level"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::config("sigmas", format!("{s} is not a nonnegative number")));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::config("train/val/test", "every split needs at least one image"));
        }
        self.bhv_train.validate()?;
        self.benchmark_train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageComparisonRow {
    pub sigma: f64,
    pub bhv_rmse: f64,
    pub benchmark_rmse: f64,
    pub bhv_epochs: usize,
    pub benchmark_epochs: usize,
}

/// Train/validation/test images for a sweep.
#[derive(Debug, Clone, Copy)]
pub struct ImageSplit<'a> {
    pub train: &'a [GrayImage],
    pub val: &'a [GrayImage],
    pub test: &'a [GrayImage],
}

impl<'a> ImageSplit<'a> {
    /// Consecutive slices of `images` sized by the sweep.
    pub fn new(images: &'a [GrayImage], sweep: &ImageSweep) -> Result<Self> {
        sweep.validate()?;
        let need = sweep.train + sweep.val + sweep.test;
        if images.len() < need {
            return Err(Error::config(
                "train/val/test",
                format!("split needs {need} images, only {} available", images.len()),
            ));
        }
        let k = images[0].pixels().len();
        if let Some(i) = images.iter().position(|img| img.pixels().len() != k) {
            return Err(Error::Shape {
                context: "image sizes",
                expected: k,
                got: images[i].pixels().len(),
            });
        }
        let (train, rest) = images.split_at(sweep.train);
        let (val, rest) = rest.split_at(sweep.val);
        Ok(ImageSplit {
            train,
            val,
            test: &rest[..sweep.test],
        })
    }

    fn pixels(&self) -> usize {
        self.train[0].pixels().len()
    }
}

/// Outcome of one reconstructor training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub sigma: f64,
    pub test_rmse: f64,
    pub train_report: TrainReport,
}

fn sigma_seed(seed: u64, sigma: f64) -> u64 {
    seed::derive(seed, &format!("image/sigma/{}", sigma.to_bits()))
}

/// Expand by `sweep.multiplier`, threshold at the calibrated median and
/// train a regression decoder. Training images are re-encrypted with
/// fresh noise every epoch.
pub fn train_bhv_reconstructor(
    split: ImageSplit<'_>,
    sweep: &ImageSweep,
    sigma: f64,
    seed: u64,
) -> Result<(Reconstruction, LinearDecoder, IdealEncoder)> {
    let k = split.pixels();
    let cell = sigma_seed(seed, sigma);
    let mut rng = seed::stream(seed::derive(cell, "bhv/encrypt"));
    let enc = IdealEncoder::uniform(k, k * sweep.multiplier, sweep.half_range, sigma, seed::derive(seed, "image/w"))?;
    let eps = image::calibrate_image_epsilon(&enc, split.train, &mut rng)?;
    let enc = enc.with_epsilon(eps);
    let va = image::encrypt_images(split.val, &enc, &mut rng)?;
    let te = image::encrypt_images(split.test, &enc, &mut rng)?;
    let cfg = TrainConfig {
        seed: seed::derive(cell, "bhv/train"),
        ..sweep.bhv_train.clone()
    };
    let init = LinearDecoder::new(enc.output_dim(), k, Head::Regression, seed::derive(cell, "bhv/init"))?;
    let fresh = |_| image::encrypt_images(split.train, &enc, &mut rng).map(Cow::Owned);
    let (model, train_report) = train_with(init, fresh, &va, &cfg)?;
    let test_rmse = image::reconstruction_rmse(&model, &te)?;
    Ok((
        Reconstruction {
            sigma,
            test_rmse,
            train_report,
        },
        model,
        enc,
    ))
}

/// Square, unthresholded baseline with the same training schedule.
pub fn train_benchmark_reconstructor(
    split: ImageSplit<'_>,
    sweep: &ImageSweep,
    sigma: f64,
    seed: u64,
) -> Result<(Reconstruction, LinearDecoder, BenchmarkEncoder)> {
    let k = split.pixels();
    let cell = sigma_seed(seed, sigma);
    let mut rng = seed::stream(seed::derive(cell, "benchmark/encrypt"));
    let benc = BenchmarkEncoder::uniform(k, sweep.half_range, sigma, seed::derive(seed, "image/w"))?;
    let va = image::benchmark_pairs(split.val, &benc, &mut rng)?;
    let te = image::benchmark_pairs(split.test, &benc, &mut rng)?;
    let cfg = TrainConfig {
        seed: seed::derive(cell, "benchmark/train"),
        ..sweep.benchmark_train.clone()
    };
    let init = LinearDecoder::new(k, k, Head::Regression, seed::derive(cell, "benchmark/init"))?;
    let fresh = |_| image::benchmark_pairs(split.train, &benc, &mut rng).map(Cow::Owned);
    let (model, train_report) = train_with(init, fresh, &va, &cfg)?;
    let test_rmse = image::reconstruction_rmse(&model, &te)?;
    Ok((
        Reconstruction {
            sigma,
            test_rmse,
            train_report,
        },
        model,
        benc,
    ))
}

/// Both reconstructors at every sigma of the sweep.
pub fn run_image_comparison(
    images: &[GrayImage],
    sweep: &ImageSweep,
    seed: u64,
) -> Result<Vec<ImageComparisonRow>> {
    let split = ImageSplit::new(images, sweep)?;
    sweep
        .sigmas
        .iter()
        .map(|&sigma| {
            let (bhv, ..) = train_bhv_reconstructor(split, sweep, sigma, seed)?;
            let (bench, ..) = train_benchmark_reconstructor(split, sweep, sigma, seed)?;
            Ok(ImageComparisonRow {
                sigma,
                bhv_rmse: bhv.test_rmse,
                benchmark_rmse: bench.test_rmse,
                bhv_epochs: bhv.train_report.epochs_run,
                benchmark_epochs: bench.train_report.epochs_run,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Text,
    Image,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Text => "text",
            Task::Image => "image",
        }
    }

    fn parse(s: &str) -> Option<Task> {
        match s {
            "text" => Some(Task::Text),
            "image" => Some(Task::Image),
            _ => None,
        }
    }
}

fn default_repeats() -> usize {
    1
}

fn default_uniqueness_passes() -> usize {
    200
}

fn default_uniqueness_char() -> char {
    'A'
}

fn default_half_range() -> f64 {
    2.0
}

/// One experiment as a JSON document. Every defaulted field is written back
/// out in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: Task,
    /// Device template for text cells: resistances and stuck probabilities.
    /// `rows`, `cols`, `sigma_frac` and `seed` are set per cell.
    pub crossbar: CrossbarConfig,
    pub key_dim: usize,
    pub multipliers: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub sizes: DatasetSizes,
    pub train: TrainConfig,
    pub master_seed: u64,
    /// Independent seeds per (multiplier, sigma) cell.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_uniqueness_passes")]
    pub uniqueness_passes: usize,
    #[serde(default = "default_uniqueness_char")]
    pub uniqueness_char: char,
    /// IDX image file for image cells.
    #[serde(default)]
    pub images: Option<std::path::PathBuf>,
    #[serde(default = "default_half_range")]
    pub half_range: f64,
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

impl ExperimentSpec {
    /// k = 10, P_on = P_off = 0.05, m in {25, 50, 100}, sigma in {0.1, 0.4, 0.7}.
    pub fn text_grid() -> Self {
        ExperimentSpec {
            task: Task::Text,
            crossbar: CrossbarConfig {
                rows: 10,
                cols: 250,
                r_lrs: 1e3,
                r_hrs: 10e3,
                sigma_frac: 0.1,
                p_stuck_on: 0.05,
                p_stuck_off: 0.05,
                seed: 0,
            },
            key_dim: 10,
            multipliers: vec![25, 50, 100],
            sigmas: vec![0.1, 0.4, 0.7],
            sizes: DatasetSizes::DESK,
            train: TrainConfig::text_default(),
            master_seed: 0,
            repeats: 1,
            uniqueness_passes: default_uniqueness_passes(),
            uniqueness_char: default_uniqueness_char(),
            images: None,
            half_range: default_half_range(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| Error::config("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Read a spec file. A relative `images` path is taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let (Some(images), Some(dir)) = (&spec.images, path.parent()) {
            if images.is_relative() {
                spec.images = Some(dir.join(images));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim == 0 {
            return Err(Error::config("key_dim", "must be at least 1"));
        }
        if self.multipliers.is_empty() || self.multipliers.contains(&0) {
            return Err(Error::config("multipliers", "need at least one positive multiplier"));
        }
        if self.sigmas.is_empty() {
            return Err(Error::config("sigmas", "need at least one noise level"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::config("sigmas", format!("{s} is not a nonnegative number")));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        self.sizes.validate()?;
        self.train.validate()?;
        match self.task {
            Task::Text => {
                if self.uniqueness_passes < 2 {
                    return Err(Error::config("uniqueness_passes", "need at least 2"));
                }
                if text::class_of(self.uniqueness_char).is_none() {
                    return Err(Error::config("uniqueness_char", "outside the character set"));
                }
                self.cell_crossbar(self.multipliers[0], self.sigmas[0], 0).validate()
            }
            Task::Image => {
                if self.images.is_none() {
                    return Err(Error::config("images", "image tasks need an IDX image file"));
                }
                if !(self.half_range.is_finite() && self.half_range > 0.0) {
                    return Err(Error::config("half_range", "must be positive"));
                }
                Ok(())
            }
        }
    }

    fn cell_crossbar(&self, multiplier: usize, sigma: f64, seed: u64) -> CrossbarConfig {
        CrossbarConfig {
            rows: self.key_dim,
            cols: self.key_dim * multiplier,
            sigma_frac: sigma,
            seed,
            ..self.crossbar.clone()
        }
    }

    fn image_sweep(&self, multiplier: usize, sigma: f64) -> ImageSweep {
        ImageSweep {
            multiplier,
            sigmas: vec![sigma],
            half_range: self.half_range,
            train: self.sizes.train,
            val: self.sizes.val,
            test: self.sizes.test,
            bhv_train: self.train.clone(),
            benchmark_train: self.train.clone(),
        }
    }
}

/// One cell of a grid or reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: String,
    pub task: Task,
    pub multiplier: usize,
    pub rows: usize,
    pub cols: usize,
    pub sigma: f64,
    pub p_on: f64,
    pub p_off: f64,
    pub repeat: usize,
    /// Test accuracy for text cells, reconstruction RMSE for image cells.
    pub metric: Option<f64>,
    /// Published accuracy for reference configurations.
    pub reference: Option<f64>,
    pub distinct_fraction: Option<f64>,
    pub mean_hamming: Option<f64>,
    pub epochs: Option<usize>,
    pub wall_time_s: f64,
    pub good: bool,
    pub status: String,
}

/// Accuracy at or above which a text model counts as good.
pub const GOOD_ACCURACY: f64 = 0.999;

impl ReportRow {
    fn pending(cell: String, task: Task, cfg: &CrossbarConfig, repeat: usize) -> Self {
        ReportRow {
            cell,
            task,
            multiplier: cfg.cols / cfg.rows.max(1),
            rows: cfg.rows,
            cols: cfg.cols,
            sigma: cfg.sigma_frac,
            p_on: cfg.p_stuck_on,
            p_off: cfg.p_stuck_off,
            repeat,
            metric: None,
            reference: None,
            distinct_fraction: None,
            mean_hamming: None,
            epochs: None,
            wall_time_s: 0.0,
            good: false,
            status: "ok".into(),
        }
    }

    fn failed(mut self, reason: &str) -> Self {
        self.status = format!("failed: {reason}");
        self
    }

    /// The row as it reads back from CSV: values rounded to the printed
    /// precision, wall time dropped.
    pub fn quantized(&self) -> ReportRow {
        let q = |v: f64| round_to(v, 4);
        ReportRow {
            metric: self.metric.map(q),
            reference: self.reference.map(q),
            distinct_fraction: self.distinct_fraction.map(q),
            mean_hamming: self.mean_hamming.map(q),
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

fn round_to(v: f64, places: usize) -> f64 {
    format!("{v:.places$}").parse().expect("formatted float")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Configuration echo; absent for reports rebuilt from CSV.
    pub spec: Option<serde_json::Value>,
    pub rows: Vec<ReportRow>,
}

const CSV_COLUMNS: [&str; 17] = [
    "cell",
    "task",
    "multiplier",
    "rows",
    "cols",
    "sigma",
    "p_on",
    "p_off",
    "repeat",
    "metric",
    "reference",
    "distinct_fraction",
    "mean_hamming",
    "epochs",
    "good",
    "status",
    "wall_time_s",
];

impl ExperimentReport {
    pub fn new(spec: Option<serde_json::Value>, rows: Vec<ReportRow>) -> Self {
        ExperimentReport { spec, rows }
    }

    /// One line per row in a fixed column order. Metrics use four decimal
    /// places; `wall_time_s` is only written when asked for, so reruns can
    /// be compared byte for byte.
    pub fn to_csv(&self, with_wall_time: bool) -> Result<String> {
        let ncols = if with_wall_time { CSV_COLUMNS.len() } else { CSV_COLUMNS.len() - 1 };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&CSV_COLUMNS[..ncols])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.cell.clone(),
                r.task.name().to_string(),
                r.multiplier.to_string(),
                r.rows.to_string(),
                r.cols.to_string(),
                r.sigma.to_string(),
                r.p_on.to_string(),
                r.p_off.to_string(),
                r.repeat.to_string(),
                opt(r.metric),
                opt(r.reference),
                opt(r.distinct_fraction),
                opt(r.mean_hamming),
                r.epochs.map(|e| e.to_string()).unwrap_or_default(),
                r.good.to_string(),
                r.status.clone(),
            ];
            if with_wall_time {
                rec.push(format!("{:.2}", r.wall_time_s));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parse CSV written by [`to_csv`](Self::to_csv), with or without the
    /// wall-time column.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if !(n == CSV_COLUMNS.len() || n == CSV_COLUMNS.len() - 1) || header.iter().zip(CSV_COLUMNS).any(|(h, c)| h != c) {
            return Err(Error::format(0, "unexpected report header"));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let at = rec.position().map(|p| p.byte()).unwrap_or(0);
            let bad = |col: &str| Error::format(at, format!("row {}: bad {col}", line + 1));
            let get = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| get(i).parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
            let int = |i: usize| get(i).parse::<usize>().map_err(|_| bad(CSV_COLUMNS[i]));
            let opt = |i: usize| match get(i) {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(CSV_COLUMNS[i])),
            };
            rows.push(ReportRow {
                cell: get(0).to_string(),
                task: Task::parse(get(1)).ok_or_else(|| bad("task"))?,
                multiplier: int(2)?,
                rows: int(3)?,
                cols: int(4)?,
                sigma: num(5)?,
                p_on: num(6)?,
                p_off: num(7)?,
                repeat: int(8)?,
                metric: opt(9)?,
                reference: opt(10)?,
                distinct_fraction: opt(11)?,
                mean_hamming: opt(12)?,
                epochs: match get(13) {
                    "" => None,
                    _ => Some(int(13)?),
                },
                good: get(14).parse().map_err(|_| bad("good"))?,
                status: get(15).to_string(),
                wall_time_s: if n == CSV_COLUMNS.len() { num(16)? } else { 0.0 },
            });
        }
        Ok(ExperimentReport { spec: None, rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.column() as u64, e.to_string()))
    }

    /// `report.csv` (with wall time) and `report.json` in `dir`.
    pub fn write_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv(true)?)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }
}

/// Run `f(0..n)` on up to `jobs` threads and return results in index
/// order. A panic in one job becomes an `Err` for that index only.
fn run_pool<T, F>(n: usize, jobs: usize, f: F) -> Vec<std::result::Result<T, String>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    use std::panic::{catch_unwind, AssertUnwindSafe};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<T, String>>>> = Mutex::new((0..n).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= n {
            break;
        }
        let out = match catch_unwind(AssertUnwindSafe(|| f(i))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err(e.to_string()),
            Err(p) => Err(p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into())),
        };
        slots.lock().expect("pool lock")[i] = Some(out);
    };
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    slots
        .into_inner()
        .expect("pool lock")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect()
}

/// Stable identifier of a grid cell; also the label its seed is derived from.
pub fn cell_id(multiplier: usize, sigma: f64, repeat: usize) -> String {
    format!("m{multiplier}/s{sigma}/r{repeat}")
}

fn text_metrics(
    cfg: &CrossbarConfig,
    sizes: DatasetSizes,
    train_cfg: &TrainConfig,
    uniqueness: Option<(char, usize)>,
    seed: u64,
    row: &mut ReportRow,
) -> Result<()> {
    let run = run_text_cell(cfg, sizes, train_cfg, seed)?;
    row.metric = Some(run.test_accuracy);
    row.epochs = Some(run.train_report.epochs_run);
    row.good = run.test_accuracy >= GOOD_ACCURACY;
    if let Some((ch, passes)) = uniqueness {
        let mut rng = seed::stream(seed::derive(seed, "uniqueness"));
        let u: Uniqueness = text::uniqueness_stats(ch, passes, &run.keys, &run.crossbar, run.model.epsilon, &mut rng)?;
        row.distinct_fraction = Some(u.distinct_fraction);
        row.mean_hamming = Some(u.mean_pairwise_hamming);
    }
    Ok(())
}

/// Every (multiplier, sigma, repeat) cell of `spec`, run on `jobs` worker
/// threads. Rows come back in cell order whatever the scheduling; a failing
/// cell is reported with its reason and does not stop the others.
pub fn run_grid(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let images = match spec.task {
        Task::Image => Some(image::load_idx_images(spec.images.as_ref().expect("validated"))?),
        Task::Text => None,
    };
    let mut cells = Vec::new();
    for &m in &spec.multipliers {
        for &s in &spec.sigmas {
            for r in 0..spec.repeats {
                cells.push((m, s, r));
            }
        }
    }
    let results = run_pool(cells.len(), jobs, |i| {
        let (m, sigma, rep) = cells[i];
        let id = cell_id(m, sigma, rep);
        let seed = seed::derive(spec.master_seed, &id);
        let start = Instant::now();
        let mut row = ReportRow::pending(id, spec.task, &spec.cell_crossbar(m, sigma, 0), rep);
        let outcome = match &images {
            None => text_metrics(
                &spec.cell_crossbar(m, sigma, 0),
                spec.sizes,
                &spec.train,
                Some((spec.uniqueness_char, spec.uniqueness_passes)),
                seed,
                &mut row,
            ),
            Some(images) => image_metrics(images, spec, m, sigma, seed, &mut row),
        };
        row.wall_time_s = start.elapsed().as_secs_f64();
        Ok(match outcome {
            Ok(()) => row,
            Err(e) => row.failed(&e.to_string()),
        })
    });
    let rows = results
        .into_iter()
        .zip(&cells)
        .map(|(r, &(m, s, rep))| {
            r.unwrap_or_else(|e| {
                ReportRow::pending(cell_id(m, s, rep), spec.task, &spec.cell_crossbar(m, s, 0), rep).failed(&e)
            })
        })
        .collect();
    Ok(ExperimentReport::new(Some(serde_json::to_value(spec)?), rows))
}

fn image_metrics(
    images: &[GrayImage],
    spec: &ExperimentSpec,
    multiplier: usize,
    sigma: f64,
    seed: u64,
    row: &mut ReportRow,
) -> Result<()> {
    let sweep = spec.image_sweep(multiplier, sigma);
    let split = ImageSplit::new(images, &sweep)?;
    let (rec, _, enc) = train_bhv_reconstructor(split, &sweep, sigma, seed)?;
    row.rows = split.pixels();
    row.cols = enc.output_dim();
    row.p_on = 0.0;
    row.p_off = 0.0;
    row.metric = Some(rec.test_rmse);
    row.epochs = Some(rec.train_report.epochs_run);
    let mut rng = seed::stream(seed::derive(seed, "uniqueness"));
    let probe = vec![split.test[0].clone(); spec.uniqueness_passes.max(2)];
    let blocks: Vec<_> = image::encrypt_images(&probe, &enc, &mut rng)?.into_iter().map(|(b, _)| b).collect();
    let u = text::uniqueness_of(&blocks)?;
    row.distinct_fraction = Some(u.distinct_fraction);
    row.mean_hamming = Some(u.mean_pairwise_hamming);
    Ok(())
}

/// A published crossbar configuration and its decryption accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub rows: usize,
    pub cols: usize,
    pub r_lrs_kohm: f64,
    pub r_hrs_kohm: f64,
    pub sigma: f64,
    pub p_on: f64,
    pub p_off: f64,
    pub accuracy: f64,
}

impl ReferenceRow {
    pub fn crossbar(&self) -> CrossbarConfig {
        CrossbarConfig {
            rows: self.rows,
            cols: self.cols,
            r_lrs: self.r_lrs_kohm * 1e3,
            r_hrs: self.r_hrs_kohm * 1e3,
            sigma_frac: self.sigma,
            p_stuck_on: self.p_on,
            p_stuck_off: self.p_off,
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

const fn reference(rows: usize, cols: usize, r_hrs_kohm: f64, sigma: f64, p: f64, accuracy: f64) -> ReferenceRow {
    ReferenceRow {
        rows,
        cols,
        r_lrs_kohm: 1.0,
        r_hrs_kohm,
        sigma,
        p_on: p,
        p_off: p,
        accuracy,
    }
}

/// The six sample crossbars with their reported test accuracy.
pub const TABLE1: [ReferenceRow; 6] = [
    reference(5, 250, 100.0, 0.1, 0.01, 0.9955),
    reference(5, 500, 100.0, 0.1, 0.01, 0.9996),
    reference(10, 500, 10.0, 0.1, 0.02, 1.0),
    reference(10, 1000, 10.0, 0.4, 0.05, 0.9997),
    reference(15, 300, 10.0, 0.2, 0.02, 1.0),
    reference(15, 600, 10.0, 0.7, 0.02, 0.9817),
];

/// Noiseless, fault-free control: must decrypt perfectly.
pub const CONTROL: ReferenceRow = reference(10, 500, 10.0, 0.0, 0.0, 1.0);

/// Every [`TABLE1`] row plus [`CONTROL`], one seed each.
pub fn run_table1(sizes: DatasetSizes, train_cfg: &TrainConfig, master_seed: u64, jobs: usize) -> Result<ExperimentReport> {
    sizes.validate()?;
    train_cfg.validate()?;
    let refs: Vec<(ReferenceRow, Option<f64>, String)> = TABLE1
        .iter()
        .map(|r| (*r, Some(r.accuracy), r.label()))
        .chain(std::iter::once((CONTROL, None, format!("{}-control", CONTROL.label()))))
        .collect();
    let results = run_pool(refs.len(), jobs, |i| {
        let (r, published, label) = &refs[i];
        let cfg = r.crossbar();
        let mut row = ReportRow::pending(label.clone(), Task::Text, &cfg, 0);
        row.reference = *published;
        let start = Instant::now();
        let seed = seed::derive(master_seed, label);
        let outcome = text_metrics(&cfg, sizes, train_cfg, Some(('A', default_uniqueness_passes())), seed, &mut row);
        row.wall_time_s = start.elapsed().as_secs_f64();
        Ok(match outcome {
            Ok(()) => row,
            Err(e) => row.failed(&e.to_string()),
        })
    });
    let rows = results
        .into_iter()
        .zip(&refs)
        .map(|(r, (rf, published, label))| {
            r.unwrap_or_else(|e| {
                let mut row = ReportRow::pending(label.clone(), Task::Text, &rf.crossbar(), 0);
                row.reference = *published;
                row.failed(&e)
            })
        })
        .collect();
    let echo = serde_json::json!({
        "kind": "table1",
        "sizes": sizes,
        "train": train_cfg,
        "master_seed": master_seed,
    });
    Ok(ExperimentReport::new(Some(echo), rows))
}
