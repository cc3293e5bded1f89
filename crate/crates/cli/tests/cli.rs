use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meltstream_core::dataio::{mpv, Manifest, Split};
use meltstream_core::harness::{self, setting, Dataset, Manifests, Origin, Sampling, SplitPlan, TrainOptions};
use meltstream_core::models::{Model, ModelConfig, ModelKind};
use meltstream_core::optflow::read_flow_dump;
use meltstream_core::Tensor;

fn meltstream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meltstream"))
        .args(args)
        .env_remove("MELTSTREAM_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = meltstream(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = meltstream(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Eight small 12-frame videos (one train and one val per class).
fn small_synth(dir: &Path) -> PathBuf {
    let out = dir.join("org");
    ok(&[
        "synth", "--out", s(&out), "--videos-per-class", "1", "--frames", "12", "--height", "40", "--width", "56",
        "--seed", "2",
    ]);
    out.join("manifest.json")
}

#[test]
fn synth_counts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let args = ["synth", "--out", s(&a), "--videos-per-class", "1", "--frames", "64", "--height", "24", "--width", "32", "--seed", "7"];
    ok(&args);
    let m = Manifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!(m.split(Split::Train).count(), 4);
    assert_eq!(m.frame_total(Split::Train), 256);
    let first = std::fs::read(a.join("manifest.json")).unwrap();
    let clip = std::fs::read(m.resolve(&m.entries[0])).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), first);
    assert_eq!(std::fs::read(m.resolve(&m.entries[0])).unwrap(), clip);
}

#[test]
fn data_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_meltstream"))
        .args(["synth", "--videos-per-class", "1", "--frames", "10", "--height", "16", "--width", "16"])
        .env("MELTSTREAM_DATA", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("original/manifest.json").is_file());
    // without either, the command refuses rather than guessing
    assert_eq!(code(&["synth", "--frames", "10"]).0, 1);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let (c, err) = code(&["synth", "--out", s(&blocker.join("sub")), "--frames", "10", "--height", "16", "--width", "16"]);
    assert_eq!(c, 2, "{err}");
}

#[test]
fn malformed_manifest_is_a_format_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.json");
    std::fs::write(&p, "{\n  \"entries\": [\n    {\"path\": 3,}\n  ]\n}\n").unwrap();
    let (c, err) = code(&["augment", "--manifest", s(&p), "--out", s(&dir.path().join("aug"))]);
    assert_eq!(c, 3);
    assert!(err.contains(&format!("{}:3:", p.display())), "{err}");
}

#[test]
fn sixteen_sources_give_624_augmented_videos() {
    let dir = tempfile::tempdir().unwrap();
    let org = dir.path().join("org");
    ok(&[
        "synth", "--out", s(&org), "--videos-per-class", "3", "--frames", "10", "--height", "40", "--width", "56",
    ]);
    let aug = dir.path().join("aug");
    ok(&["augment", "--manifest", s(&org.join("manifest.json")), "--out", s(&aug), "--jobs", "2"]);
    let m = Manifest::load(&aug.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 624);
    assert!(m.entries.iter().all(|e| m.resolve(e).is_file()));
}

#[test]
fn static_clip_has_all_zero_flow() {
    let dir = tempfile::tempdir().unwrap();
    let frame: Vec<f32> = (0..3 * 20 * 24).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    let clip = Tensor::from_vec(&[5, 3, 20, 24], frame.repeat(5)).unwrap();
    let path = dir.path().join("static.mpv");
    mpv::write(&path, &clip).unwrap();
    let out = dir.path().join("flow.mpv");
    ok(&["flow", "--clip", s(&path), "--out", s(&out), "--iters", "30", "--jobs", "2"]);
    let flow = read_flow_dump(&out).unwrap();
    assert_eq!(flow.shape(), [8, 20, 24]);
    assert!(flow.data().iter().all(|&v| v == 0.0));
    assert_eq!(code(&["flow", "--clip", s(&dir.path().join("none.mpv")), "--out", s(&out)]).0, 5);
}

#[test]
fn missing_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(dir.path());
    let (c, err) = code(&["eval", "--checkpoint", s(&dir.path().join("none.msck")), "--manifest", s(&manifest)]);
    assert_eq!(c, 5, "{err}");
    assert_eq!(code(&["report", "--runs-dir", s(&dir.path().join("no-runs"))]).0, 5);
}

#[test]
fn overfit_checkpoint_scores_its_training_split_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(dir.path());
    let m = Manifest::load(&manifest).unwrap();
    let cfg = ModelConfig::new(ModelKind::Cnn1, 0.125);
    let train = setting::samples(&m, Origin::Original, Split::Train, Sampling::for_model(&cfg)).unwrap();
    // validating on the training clips makes the best checkpoint the overfit one
    let plan = SplitPlan {
        setting: harness::Setting::A,
        train: train.clone(),
        val: train,
        tests: vec![],
    };
    let data = Dataset::new(Manifests {
        original: Some(m),
        augmented: None,
    });
    let ckpt = dir.path().join("best.msck");
    let mut model = Model::<f32>::build(&cfg, 1).unwrap();
    let mut hp = cfg.kind.default_hyperparams();
    hp.epochs = 200;
    let opts = TrainOptions {
        stop_at_val_acc: Some(1.0),
        checkpoint: Some(ckpt.clone()),
        ..Default::default()
    };
    let out = harness::train(&mut model, &data, &plan, &hp, 1, &opts).unwrap();
    assert_eq!(out.best_val_acc, 1.0);

    let json = dir.path().join("eval.json");
    let stdout = ok(&[
        "eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", "train", "--out", s(&json),
    ]);
    assert!(stdout.contains("accuracy 1.000000"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["accuracy"], 1.0);
}

/// Original and augmented small datasets plus a config file shrinking the frame-level baseline.
fn train_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let org = small_synth(dir);
    let aug = dir.join("aug");
    ok(&["augment", "--manifest", s(&org), "--out", s(&aug), "--seed", "3"]);
    let config = dir.join("train.json");
    std::fs::write(&config, "{\n  \"input\": [1, 35, 50],\n  \"epochs\": 5,\n  \"width\": 0.125\n}\n").unwrap();
    (org, aug.join("manifest.json"), config)
}

#[test]
fn train_is_deterministic_and_reports_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let (org, aug, config) = train_fixture(dir.path());
    let runs = dir.path().join("runs");
    let args = [
        "train", "--model", "cnn1", "--setting", "C", "--manifest-org", s(&org), "--manifest-aug", s(&aug), "--config",
        s(&config), "--epochs", "2", "--seed", "4", "--repeats", "2", "--deterministic", "--out", s(&runs),
    ];
    let stdout = ok(&args);
    assert!(stdout.contains("over 2 run(s)"), "{stdout}");
    let plan_dir = std::fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(plan_dir.join("plan.json")).unwrap()).unwrap();
    // flag beats file, file beats defaults
    assert_eq!(plan["hyperparams"]["epochs"], 2);
    assert_eq!(plan["hyperparams"]["learning_rate"], 0.001);
    assert_eq!(plan["config"]["input"], serde_json::json!([1, 35, 50]));
    assert_eq!(plan["seeds"], serde_json::json!([4, 5]));

    let metrics = plan_dir.join("4/metrics.json");
    let first = std::fs::read(&metrics).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(&metrics).unwrap(), first);

    let summary = std::fs::read_to_string(plan_dir.join("summary.csv")).unwrap();
    let header = summary.lines().next().unwrap();
    assert!(header.contains("test_org_acc") && header.contains("test_aug_acc"));
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[3].is_empty() && !row[4].is_empty());

    let report = ok(&["report", "--runs-dir", s(&runs)]);
    assert_eq!(report.lines().count(), 1 + 2);
    let agg = ok(&["report", "--runs-dir", s(&runs), "--aggregate", "--out", s(&dir.path().join("agg.csv"))]);
    assert_eq!(agg.lines().count(), 1 + 1);
}

#[test]
fn bad_config_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\n  \"epochs\": \"many\"\n}\n").unwrap();
    let (c, err) = code(&[
        "train", "--model", "lrcn", "--setting", "A", "--manifest-org", "o.json", "--manifest-aug", "a.json", "--config",
        s(&cfg),
    ]);
    assert_eq!(c, 3);
    assert!(err.contains(":2:"), "{err}");
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (org, aug, config) = train_fixture(dir.path());
    let (c, err) = code(&[
        "train", "--model", "cnn1", "--setting", "A", "--manifest-org", s(&org), "--manifest-aug", s(&aug), "--config",
        s(&config), "--lr", "1e30", "--batch-size", "10", "--out", s(&dir.path().join("runs")),
    ]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("non-finite loss"), "{err}");
}
