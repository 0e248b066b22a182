//! Command-line front end. The `hyperlock` binary only forwards to [`run`].
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error,
//! 4 training divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::decoder::{ModelFile, TrainConfig};
use crate::encoder::IdealEncoder;
use crate::error::{Error, Result};
use crate::experiment::{self, DatasetSizes, ExperimentReport, ExperimentSpec, ImageSweep};
use crate::image::{self, EncryptionStages, GrayImage};
use crate::seed;
use crate::text::{self, CipherText, SecretKeyTable};
use crate::xbar::{Crossbar, CrossbarConfig};

/// Bundled 150x150 grayscale test image.
pub const CAMERA_PGM: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/camera-150.pgm");
/// Bundled 2000-image MNIST subset (IDX, gzip).
pub const MNIST_IMAGES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/mnist-2k-images-idx3-ubyte.gz");
pub const MNIST_LABELS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/mnist-2k-labels-idx1-ubyte.gz");

#[derive(Debug, Parser)]
#[command(name = "hyperlock", version, about = "Stochastic crossbar encryption with hypervector decoding")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; subcommands that encrypt draw a random one when absent
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for sweeps
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// 100K/100K/10K characters instead of 20K/5K/10K
    #[arg(long, global = true)]
    pub paper_scale: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a crossbar (conductances and stuck cells) and save it
    GenCrossbar(GenCrossbar),
    /// Generate a secret key table
    GenKeys(GenKeys),
    /// Train a text decoder for a crossbar and key table
    TrainText(TrainText),
    /// Encrypt a text file to HLCT ciphertext
    Encrypt(Encrypt),
    /// Decrypt HLCT ciphertext with a trained model
    Decrypt(Decrypt),
    /// Test accuracy and ciphertext freshness of a trained model
    Eval(Eval),
    /// Sweep multipliers and noise levels from an experiment spec
    Grid(Grid),
    /// Run the reference crossbar configurations
    Table1,
    /// Encrypt an image and write stage images, histograms and correlations
    ImageDemo(ImageDemo),
    /// Re-emit a report as CSV and JSON
    Report(Report),
}

#[derive(Debug, Args)]
pub struct GenCrossbar {
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 500)]
    pub cols: usize,
    /// Low-resistance state, ohms
    #[arg(long, default_value_t = 1e3)]
    pub r_lrs: f64,
    /// High-resistance state, ohms
    #[arg(long, default_value_t = 10e3)]
    pub r_hrs: f64,
    /// Read noise as a fraction of the conductance range
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_on: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_off: f64,
}

#[derive(Debug, Args)]
pub struct GenKeys {
    /// Secret vector length; defaults to the rows of --crossbar, else 10
    #[arg(long)]
    pub key_dim: Option<usize>,
    #[arg(long)]
    pub crossbar: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainText {
    #[arg(long)]
    pub crossbar: PathBuf,
    #[arg(long)]
    pub keys: PathBuf,
}

#[derive(Debug, Args)]
pub struct Encrypt {
    /// Plaintext file
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub crossbar: PathBuf,
    #[arg(long)]
    pub keys: PathBuf,
    /// Model file; supplies the threshold
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct Decrypt {
    /// HLCT ciphertext file
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub crossbar: PathBuf,
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Test characters
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Encryptions per character for the freshness check
    #[arg(long, default_value_t = 200)]
    pub passes: usize,
}

#[derive(Debug, Args)]
pub struct Grid {
    /// Leave wall-clock times out of the outputs so reruns compare equal
    #[arg(long)]
    pub no_wall_time: bool,
}

#[derive(Debug, Args)]
pub struct ImageDemo {
    /// Binary PGM; the bundled 150x150 image when absent
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub multiplier: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Also train BHV and benchmark reconstructors on MNIST over these sigmas
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<f64>,
    /// IDX image file for --compare; the bundled subset when absent
    #[arg(long)]
    pub mnist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Report {
    /// report.json or report.csv
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub no_wall_time: bool,
}

/// Parse `args`, run the subcommand and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if c.jobs == 0 {
        return Err(Error::config("--jobs", "must be at least 1"));
    }
    match &cli.command {
        Command::GenCrossbar(a) => gen_crossbar(c, a),
        Command::GenKeys(a) => gen_keys(c, a),
        Command::TrainText(a) => train_text(c, a),
        Command::Encrypt(a) => encrypt(c, a),
        Command::Decrypt(a) => decrypt(c, a),
        Command::Eval(a) => eval(c, a),
        Command::Grid(a) => grid(c, a),
        Command::Table1 => table1(c),
        Command::ImageDemo(a) => image_demo(c, a),
        Command::Report(a) => report(c, a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(what, format!("{}: {e}", path.display())))
}

fn out_file(c: &Common, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&c.out)?;
    Ok(c.out.join(name))
}

fn sizes(c: &Common) -> DatasetSizes {
    if c.paper_scale {
        DatasetSizes::FULL
    } else {
        DatasetSizes::DESK
    }
}

fn seed_or_random(c: &Common) -> u64 {
    c.seed.unwrap_or_else(|| rand::rng().random())
}

fn text_train_config(c: &Common) -> Result<TrainConfig> {
    let cfg = match &c.config {
        Some(p) => read_json(p, "train config")?,
        None => TrainConfig::text_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn gen_crossbar(c: &Common, a: &GenCrossbar) -> Result<()> {
    let mut cfg: CrossbarConfig = match &c.config {
        Some(p) => read_json(p, "crossbar config")?,
        None => CrossbarConfig {
            rows: a.rows,
            cols: a.cols,
            r_lrs: a.r_lrs,
            r_hrs: a.r_hrs,
            sigma_frac: a.sigma,
            p_stuck_on: a.p_on,
            p_stuck_off: a.p_off,
            seed: 0,
        },
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let xbar = Crossbar::new_random(cfg)?;
    let path = out_file(c, "crossbar.json")?;
    xbar.save(&path)?;
    println!(
        "crossbar {}x{}: {} stuck cells, written to {}",
        xbar.rows(),
        xbar.cols(),
        xbar.stuck_count(),
        path.display()
    );
    Ok(())
}

fn gen_keys(c: &Common, a: &GenKeys) -> Result<()> {
    let k = match (a.key_dim, &a.crossbar) {
        (Some(k), _) => k,
        (None, Some(p)) => Crossbar::load(p)?.rows(),
        (None, None) => 10,
    };
    let keys = SecretKeyTable::generate(k, seed_or_random(c))?;
    let path = out_file(c, "keys.json")?;
    keys.save(&path)?;
    println!("{} secret vectors of length {k}, written to {}", text::NUM_CLASSES, path.display());
    Ok(())
}

fn train_text(c: &Common, a: &TrainText) -> Result<()> {
    let xbar = Crossbar::load(&a.crossbar)?;
    let keys = SecretKeyTable::load(&a.keys)?;
    let cfg = text_train_config(c)?;
    let run = experiment::train_text(xbar, keys, sizes(c), &cfg, c.seed.unwrap_or(0))?;
    let path = out_file(c, "model.json")?;
    run.model.save(&path)?;
    fs::write(out_file(c, "train_report.json")?, serde_json::to_string_pretty(&run.train_report)?)?;
    println!(
        "test accuracy {:.4} after {} epochs (best {}), model written to {}",
        run.test_accuracy,
        run.train_report.epochs_run,
        run.train_report.best_epoch,
        path.display()
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
}

fn encrypt(c: &Common, a: &Encrypt) -> Result<()> {
    let xbar = Crossbar::load(&a.crossbar)?;
    let keys = SecretKeyTable::load(&a.keys)?;
    let model = ModelFile::load(&a.model)?;
    let plain = fs::read(&a.input)?;
    let plain = String::from_utf8(plain).map_err(|e| Error::format(e.utf8_error().valid_up_to() as u64, "input is not UTF-8"))?;
    let mut rng = seed::stream(seed_or_random(c));
    let ct = text::encrypt_text(&plain, &keys, &xbar, model.epsilon, &mut rng)?;
    let path = out_file(c, &format!("{}.hlct", stem(&a.input)))?;
    fs::write(&path, ct.to_bytes())?;
    println!("{} characters encrypted to {}", ct.len(), path.display());
    Ok(())
}

fn decrypt(c: &Common, a: &Decrypt) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let ct = CipherText::from_bytes(&fs::read(&a.input)?)?;
    let plain = text::decrypt_text(&ct, &model.decoder)?;
    let path = out_file(c, &format!("{}.dec.txt", stem(&a.input)))?;
    fs::write(&path, &plain)?;
    println!("{} characters decrypted to {}", plain.chars().count(), path.display());
    Ok(())
}

fn eval(c: &Common, a: &Eval) -> Result<()> {
    let xbar = Crossbar::load(&a.crossbar)?;
    let keys = SecretKeyTable::load(&a.keys)?;
    let model = ModelFile::load(&a.model)?;
    let seed = c.seed.unwrap_or(0);
    let mut rng = seed::stream(seed::derive(seed, "eval"));
    let test = text::build_dataset(a.n, &keys, &xbar, model.epsilon, &mut rng)?;
    let acc = text::evaluate_accuracy(&model.decoder, &test)?;
    println!("accuracy {acc:.4} over {} characters", a.n);
    for ch in ['A', 'B', 'C', 'D', 'E'] {
        let u = text::uniqueness_stats(ch, a.passes, &keys, &xbar, model.epsilon, &mut rng)?;
        println!(
            "{ch}: {} distinct of {} ({:.4}), mean normalized hamming {:.4}",
            u.distinct_count, u.passes, u.distinct_fraction, u.mean_pairwise_hamming
        );
    }
    Ok(())
}

fn emit(c: &Common, report: &ExperimentReport, with_wall_time: bool) -> Result<()> {
    let mut report = report.clone();
    if !with_wall_time {
        for r in &mut report.rows {
            r.wall_time_s = 0.0;
        }
    }
    fs::write(out_file(c, "report.csv")?, report.to_csv(with_wall_time)?)?;
    fs::write(out_file(c, "report.json")?, report.to_json()?)?;
    Ok(())
}

fn print_rows(report: &ExperimentReport) {
    for r in &report.rows {
        let metric = r.metric.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        let reference = r.reference.map(|m| format!(" (reference {m:.4})")).unwrap_or_default();
        println!("{:<18} {metric}{reference} {}", r.cell, if r.status == "ok" { "" } else { &r.status });
    }
}

fn grid(c: &Common, a: &Grid) -> Result<()> {
    let mut spec = match &c.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::text_grid(),
    };
    if let Some(s) = c.seed {
        spec.master_seed = s;
    }
    if c.paper_scale {
        spec.sizes = DatasetSizes::FULL;
    }
    let report = experiment::run_grid(&spec, c.jobs)?;
    emit(c, &report, !a.no_wall_time)?;
    print_rows(&report);
    Ok(())
}

fn table1(c: &Common) -> Result<()> {
    let cfg = text_train_config(c)?;
    let report = experiment::run_table1(sizes(c), &cfg, c.seed.unwrap_or(0), c.jobs)?;
    emit(c, &report, true)?;
    print_rows(&report);
    Ok(())
}

fn image_demo(c: &Common, a: &ImageDemo) -> Result<()> {
    let img = GrayImage::read_pgm(a.image.as_deref().unwrap_or(Path::new(CAMERA_PGM)))?;
    if a.multiplier == 0 {
        return Err(Error::config("--multiplier", "must be at least 1"));
    }
    let seed = c.seed.unwrap_or(0);
    let k = img.pixels().len();
    let enc = IdealEncoder::uniform_lazy(k, k * a.multiplier, 2.0, a.sigma, seed::derive(seed, "image/w"))?;
    let mut rng = seed::stream(seed::derive(seed, "image/encrypt"));
    let eps = image::calibrate_image_epsilon(&enc, std::slice::from_ref(&img), &mut rng)?;
    let stages = EncryptionStages::capture(&img, &enc.with_epsilon(eps), &mut rng)?;

    img.write_pgm(out_file(c, "original.pgm")?)?;
    stages.expanded_image()?.write_pgm(out_file(c, "expanded.pgm")?)?;
    stages.bits_image()?.write_pgm(out_file(c, "binarized.pgm")?)?;

    let rows = stages.statistics();
    image::write_stats_csv(&rows, fs::File::create(out_file(c, "correlation.csv")?)?)?;
    let mut w = csv::Writer::from_path(out_file(c, "histogram.csv")?)?;
    w.write_record(["stage", "bin", "count"])?;
    let hists = [
        ("original", image::pixel_histogram(&img)),
        ("expanded", image::real_stage_histogram(&stages.expanded)?),
        ("binarized", image::binary_histogram(&stages.bits).to_vec()),
    ];
    for (stage, h) in &hists {
        for (b, n) in h.iter().enumerate() {
            w.write_record([stage.to_string(), b.to_string(), n.to_string()])?;
        }
    }
    w.flush()?;
    for r in &rows {
        println!("{:<9} {:<10} r = {:+.4}", r.stage, r.direction.name(), r.r);
    }

    if !a.compare.is_empty() {
        let images = image::load_idx_images(a.mnist.as_deref().unwrap_or(Path::new(MNIST_IMAGES)))?;
        let sweep = ImageSweep {
            sigmas: a.compare.clone(),
            ..ImageSweep::desk()
        };
        let table = experiment::run_image_comparison(&images, &sweep, seed)?;
        let mut w = csv::Writer::from_path(out_file(c, "comparison.csv")?)?;
        w.write_record(["sigma", "bhv_rmse", "benchmark_rmse", "bhv_epochs", "benchmark_epochs"])?;
        for r in &table {
            w.write_record([
                r.sigma.to_string(),
                format!("{:.4}", r.bhv_rmse),
                format!("{:.4}", r.benchmark_rmse),
                r.bhv_epochs.to_string(),
                r.benchmark_epochs.to_string(),
            ])?;
            println!("sigma {:<4} bhv {:.4} benchmark {:.4}", r.sigma, r.bhv_rmse, r.benchmark_rmse);
        }
        w.flush()?;
    }
    Ok(())
}

fn report(c: &Common, a: &Report) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let report = if a.input.extension().is_some_and(|e| e == "csv") {
        ExperimentReport::from_csv(&text)?
    } else {
        ExperimentReport::from_json(&text)?
    };
    emit(c, &report, !a.no_wall_time)?;
    println!("{} rows written to {}", report.rows.len(), c.out.display());
    Ok(())
}
