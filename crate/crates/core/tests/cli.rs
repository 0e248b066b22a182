use std::path::Path;
use std::process::{Command, Output};

use hyperlock::TrainConfig;

fn hyperlock(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperlock"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn hyperlock")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hyperlock(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    hyperlock(dir, args).status.code().expect("exit code")
}

/// Small crossbar, keys and a model trained on reduced data.
fn setup(dir: &Path) {
    let train = TrainConfig { max_epochs: 30, ..TrainConfig::text_default() };
    std::fs::write(dir.join("train.json"), serde_json::to_string(&train).unwrap()).unwrap();
    ok(dir, &["gen-crossbar", "--rows", "10", "--cols", "200", "--seed", "1"]);
    ok(dir, &["gen-keys", "--crossbar", "crossbar.json", "--seed", "2"]);
    ok(dir, &["train-text", "--crossbar", "crossbar.json", "--keys", "keys.json", "--seed", "3", "--config", "train.json"]);
}

#[test]
fn text_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    assert!(d.join("train_report.json").exists());

    let message = "The quick brown fox {jumps} over 13 lazy dogs!";
    std::fs::write(d.join("msg.txt"), message).unwrap();
    let enc = ["encrypt", "--input", "msg.txt", "--crossbar", "crossbar.json", "--keys", "keys.json", "--model", "model.json"];
    ok(d, &enc);
    let first = std::fs::read(d.join("msg.hlct")).unwrap();
    ok(d, &enc);
    assert_ne!(std::fs::read(d.join("msg.hlct")).unwrap(), first, "ciphertext repeated");

    ok(d, &["decrypt", "--input", "msg.hlct", "--model", "model.json"]);
    assert_eq!(std::fs::read_to_string(d.join("msg.dec.txt")).unwrap(), message);

    let eval = ok(d, &["eval", "--crossbar", "crossbar.json", "--keys", "keys.json", "--model", "model.json", "--n", "500", "--passes", "20"]);
    assert!(eval.contains("accuracy"));
}

#[test]
fn empty_plaintext_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    std::fs::write(d.join("empty.txt"), "").unwrap();
    ok(d, &["encrypt", "--input", "empty.txt", "--crossbar", "crossbar.json", "--keys", "keys.json", "--model", "model.json", "--seed", "4"]);
    ok(d, &["decrypt", "--input", "empty.hlct", "--model", "model.json"]);
    assert_eq!(std::fs::read(d.join("empty.dec.txt")).unwrap(), b"");
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);

    assert_eq!(code(d, &["no-such-command"]), 2);
    assert_eq!(code(d, &["gen-crossbar", "--rows", "0"]), 2);
    assert_eq!(code(d, &["gen-crossbar", "--p-on", "0.7", "--p-off", "0.7"]), 2);
    assert_eq!(code(d, &["grid", "--jobs", "0"]), 2);
    std::fs::write(d.join("bad.json"), "{\"task\": \"text\", \"colour\": 3}").unwrap();
    assert_eq!(code(d, &["grid", "--config", "bad.json"]), 2);

    std::fs::write(d.join("tilde.txt"), "a~b").unwrap();
    let enc = ["encrypt", "--input", "tilde.txt", "--crossbar", "crossbar.json", "--keys", "keys.json", "--model", "model.json"];
    assert_eq!(code(d, &enc), 3);

    std::fs::write(d.join("ok.txt"), "abc").unwrap();
    ok(d, &["encrypt", "--input", "ok.txt", "--crossbar", "crossbar.json", "--keys", "keys.json", "--model", "model.json"]);
    let full = std::fs::read(d.join("ok.hlct")).unwrap();
    std::fs::write(d.join("cut.hlct"), &full[..full.len() - 5]).unwrap();
    assert_eq!(code(d, &["decrypt", "--input", "cut.hlct", "--model", "model.json"]), 3);
    std::fs::write(d.join("junk.hlct"), b"not a ciphertext").unwrap();
    assert_eq!(code(d, &["decrypt", "--input", "junk.hlct", "--model", "model.json"]), 3);
    assert_eq!(code(d, &["decrypt", "--input", "missing.hlct", "--model", "model.json"]), 3);
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-crossbar", "--rows", "10", "--cols", "100", "--seed", "1"]);
    ok(d, &["gen-keys", "--crossbar", "crossbar.json", "--seed", "2"]);
    let train = TrainConfig { learning_rate: 1e308, max_epochs: 5, ..TrainConfig::text_default() };
    std::fs::write(d.join("hot.json"), serde_json::to_string(&train).unwrap()).unwrap();
    assert_eq!(code(d, &["train-text", "--crossbar", "crossbar.json", "--keys", "keys.json", "--config", "hot.json"]), 4);
}

#[test]
fn report_converts_between_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/grid-small.json");
    ok(d, &["grid", "--config", spec, "--out", "g", "--no-wall-time"]);
    ok(d, &["report", "--input", "g/report.csv", "--out", "from-csv", "--no-wall-time"]);
    ok(d, &["report", "--input", "g/report.json", "--out", "from-json", "--no-wall-time"]);
    let csv = std::fs::read(d.join("g/report.csv")).unwrap();
    assert_eq!(std::fs::read(d.join("from-csv/report.csv")).unwrap(), csv);
    assert_eq!(std::fs::read(d.join("from-json/report.csv")).unwrap(), csv);
    let lines = String::from_utf8(csv).unwrap().lines().count();
    assert_eq!(lines, 1 + 2 * 2 * 2);
}

#[test]
fn image_demo_writes_stage_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let img = hyperlock::image::GrayImage::from_u8(24, 24, &(0..576).map(|i| (i % 24 * 10) as u8).collect::<Vec<_>>()).unwrap();
    img.write_pgm(d.join("ramp.pgm")).unwrap();
    ok(d, &["image-demo", "--image", "ramp.pgm", "--multiplier", "4", "--sigma", "0.5", "--out", "demo"]);
    for f in ["original.pgm", "expanded.pgm", "binarized.pgm", "correlation.csv", "histogram.csv"] {
        assert!(d.join("demo").join(f).exists(), "{f}");
    }
    let stats = std::fs::read_to_string(d.join("demo/correlation.csv")).unwrap();
    assert_eq!(stats.lines().next().unwrap(), "stage,direction,r,n00,n01,n10,n11");
}

#[test]
fn table1_subcommand_runs_at_tiny_scale() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = TrainConfig { max_epochs: 2, ..TrainConfig::text_default() };
    std::fs::write(d.join("train.json"), serde_json::to_string(&train).unwrap()).unwrap();
    // table1 always uses desk sizes; two epochs keeps it short
    let out = ok(d, &["table1", "--config", "train.json", "--out", "t"]);
    assert_eq!(out.lines().count(), 7);
    assert!(d.join("t/report.json").exists());
}
