use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rangediff::data::{load_range_image, save_range_image, synth_dataset, SceneConfig};
use rangediff::geometry::ProjectionConfig;

const SMALL: &[&str] = &[
    "--set",
    "projection.height=16",
    "--set",
    "projection.width=64",
    "--set",
    "net.base_channels=4",
    "--set",
    "net.temb_dim=8",
    "--set",
    "net.blocks=1,1,1",
    "--set",
    "train.steps=3",
];

fn rangediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangediff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rangediff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A directory of small synthetic scans.
fn dataset(root: &Path, name: &str, count: usize, scene: SceneConfig) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let proj = ProjectionConfig::desk().with_size(16, 64);
    for (id, img) in synth_dataset(&scene, &proj, count, name).unwrap() {
        save_range_image(&img, &dir.join(format!("{id}.rimg"))).unwrap();
    }
    dir
}

fn train(root: &Path, data: &Path, out: &str) -> PathBuf {
    let out = root.join(out);
    ok(&with_small(&["train", "--data", s(data), "--out", s(&out), "--seed", "5"]));
    out
}

#[test]
fn missing_data_directory_is_a_clean_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rangediff(&["train", "--data", "/nonexistent/scans", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scans"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_config_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 2, SceneConfig::default());
    let out = rangediff(&["train", "--data", s(&data), "--out", s(&tmp.path().join("o")), "--set", "net.width=3"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "schedule.kind = quadratic\n").unwrap();
    let out = rangediff(&["train", "--data", s(&data), "--out", s(&tmp.path().join("o")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn training_is_deterministic_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 6, SceneConfig::default());
    let a = train(tmp.path(), &data, "run1");
    let b = train(tmp.path(), &data, "run2");
    let log = std::fs::read_to_string(a.join("loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert_eq!(log, std::fs::read_to_string(b.join("loss.tsv")).unwrap());
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    let cfg = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(cfg.contains("projection.height = 16"));
    assert!(cfg.contains("seed = 5"));
    for f in ["train.txt", "val.txt", "test.txt"] {
        assert!(a.join(f).exists());
    }
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 4, SceneConfig::default());
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\ntrain.steps = 7\nseed = 1\n").unwrap();
    let out = tmp.path().join("o");
    let mut args = with_small(&["train", "--data", s(&data), "--out", s(&out), "--config", s(&cfg), "--seed", "2"]);
    args.extend(["--steps", "2"]);
    ok(&args);
    let resolved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("train.steps = 2"));
    assert!(resolved.contains("seed = 2"));
}

#[test]
fn resume_continues_to_the_target_step() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 4, SceneConfig::default());
    let first = train(tmp.path(), &data, "first");
    let out = tmp.path().join("second");
    let ckpt = first.join("model.ckpt");
    let mut args = with_small(&["train", "--data", s(&data), "--out", s(&out), "--seed", "5", "--resume", s(&ckpt)]);
    args.extend(["--steps", "5"]);
    ok(&args);
    let log = std::fs::read_to_string(out.join("loss.tsv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(steps, ["4", "5"]);
}

#[test]
fn multi_source_training_accepts_several_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(tmp.path(), "a", 3, SceneConfig::default());
    let b = dataset(tmp.path(), "b", 3, SceneConfig::urban());
    let out = tmp.path().join("o");
    let msg = ok(&with_small(&["train", "--data", s(&a), s(&b), "--out", s(&out)]));
    assert!(msg.contains("trained 3 steps"));
    let ids = std::fs::read_to_string(out.join("train.txt")).unwrap();
    assert!(ids.contains("0:") || ids.contains("1:"));
}

#[test]
fn upsample_preserves_known_rows_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 4, SceneConfig::default());
    let run = train(tmp.path(), &data, "run");
    let ckpt = run.join("model.ckpt");
    let input = std::fs::read_dir(&data).unwrap().next().unwrap().unwrap().path();
    let scan = load_range_image(&input).unwrap();
    let mut bytes = Vec::new();
    for steps in ["2", "4", "8", "16", "32", "64", "128"] {
        let out = tmp.path().join(format!("up{steps}"));
        ok(&with_small(&[
            "upsample", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&out), "--rate", "4", "--steps", steps,
        ]));
        let up = load_range_image(&out.join("upsampled.rimg")).unwrap();
        for i in (0..16).step_by(4).flat_map(|r| r * 64..(r + 1) * 64) {
            assert_eq!(up.depth[i].to_bits(), scan.depth[i].to_bits());
            assert_eq!(up.valid[i], scan.valid[i]);
        }
        for f in ["depth.png", "reflectance.png", "mask.png", "points.bin", "config.txt"] {
            assert!(out.join(f).exists(), "{f}");
        }
        if steps == "8" {
            bytes = std::fs::read(out.join("upsampled.rimg")).unwrap();
        }
    }
    let again = tmp.path().join("again");
    ok(&with_small(&[
        "upsample", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&again), "--rate", "4", "--steps", "8",
    ]));
    assert_eq!(std::fs::read(again.join("upsampled.rimg")).unwrap(), bytes);

    let bad = rangediff(&with_small(&[
        "upsample", "--checkpoint", s(&ckpt), "--input", s(&input), "--out", s(&again), "--rate", "17",
    ]));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_baselines_need_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 20, SceneConfig::default());
    let out = tmp.path().join("eval");
    let text = ok(&with_small(&["eval", "--data", s(&data), "--out", s(&out), "--method", "bilinear"]));
    assert!(text.contains("bilinear"));
    let records = std::fs::read_to_string(out.join("records.tsv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2);
    let again = ok(&with_small(&["eval", "--data", s(&data), "--out", s(&out), "--method", "bilinear"]));
    assert_eq!(text, again);

    let bad = rangediff(&with_small(&["eval", "--data", s(&data), "--out", s(&out), "--method", "lanczos"]));
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("nearest") && err.contains("bicubic"));

    let missing = rangediff(&with_small(&["eval", "--data", s(&data), "--out", s(&out)]));
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn eval_with_model_uses_the_training_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 10, SceneConfig::default());
    let run = train(tmp.path(), &data, "run");
    let out = tmp.path().join("eval");
    ok(&with_small(&[
        "eval", "--data", s(&data), "--out", s(&out), "--checkpoint", s(&run.join("model.ckpt")), "--steps", "2", "--seed", "5",
    ]));
    let test_ids = std::fs::read_to_string(run.join("test.txt")).unwrap();
    let records = std::fs::read_to_string(out.join("records.tsv")).unwrap();
    let ids: Vec<&str> = records.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, test_ids.lines().collect::<Vec<_>>());
}

#[test]
fn bench_reports_requested_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "a", 2, SceneConfig::default());
    let run = train(tmp.path(), &data, "run");
    let out = tmp.path().join("bench");
    let text = ok(&with_small(&[
        "bench", "--checkpoint", s(&run.join("model.ckpt")), "--out", s(&out), "--steps", "8,320", "--runs", "2",
    ]));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), [8, 320]);
    for r in &rows {
        // fps column against 1 / median seconds, at the printed precision
        assert!((r[4] - 1.0 / r[1]).abs() <= 1e-3 + 1e-6 * r[4] / r[1]);
    }
    assert!(out.join("bench.txt").exists());
}

#[test]
fn synth_writes_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let rimg = tmp.path().join("rimg");
    ok(&with_small(&["synth", "--out", s(&rimg), "--count", "3"]));
    let bin = tmp.path().join("bin");
    ok(&with_small(&["synth", "--out", s(&bin), "--count", "2", "--format", "bin", "--scene", "urban"]));
    let count = |d: &Path, ext: &str| {
        std::fs::read_dir(d)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
            .count()
    };
    assert_eq!(count(&rimg, "rimg"), 3);
    assert_eq!(count(&bin, "bin"), 2);
    let again = tmp.path().join("again");
    ok(&with_small(&["synth", "--out", s(&again), "--count", "3"]));
    let a = std::fs::read(rimg.join("scan-00000.rimg")).unwrap();
    assert_eq!(a, std::fs::read(again.join("scan-00000.rimg")).unwrap());
    let bad = rangediff(&["synth", "--out", s(&again), "--scene", "forest"]);
    assert_eq!(bad.status.code(), Some(2));
}
