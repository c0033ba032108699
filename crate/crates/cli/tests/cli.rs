use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fcnt_core::imageio::{read_labels, write_gray, write_labels};
use fcnt_core::manifest::Manifest;
use fcnt_core::patches::connected_components;
use fcnt_core::{LabelMap, Tensor};

fn fcnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcnt"))
        .arg("-q")
        .args(args)
        .output()
        .expect("run fcnt")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "fcnt failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) {
    ok(fcnt(&[
        "generate",
        "--classes",
        "3",
        "--train-per-class",
        "2",
        "--test-mosaics",
        "2",
        "--regions",
        "2..3",
        "--train-size",
        "32",
        "--test-size",
        "48",
        "--out",
        s(dir),
    ]));
}

fn trained(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    small_dataset(&data);
    let model = dir.join("model");
    ok(fcnt(&[
        "train",
        "--data",
        s(&data),
        "--iters",
        "4",
        "--crop",
        "32",
        "--network",
        "reduced",
        "--out",
        s(&model),
    ]));
    model.join("model.ckpt")
}

#[test]
fn generate_writes_the_requested_counts() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    ok(fcnt(&[
        "generate",
        "--classes",
        "5",
        "--train-per-class",
        "8",
        "--test-mosaics",
        "20",
        "--regions",
        "2..5",
        "--train-size",
        "32",
        "--test-size",
        "32",
        "--out",
        s(&out),
    ]));
    let count = |sub: &str, suffix: &str| {
        std::fs::read_dir(out.join(sub))
            .unwrap()
            .filter(|e| {
                let n = e.as_ref().unwrap().file_name().into_string().unwrap();
                n.ends_with(".pgm") && !n.ends_with(suffix)
            })
            .count()
    };
    assert_eq!(count("train", "_labels.pgm"), 40);
    assert_eq!(count("test", "_gt.pgm"), 20);
}

#[test]
fn regions_outside_two_to_five_need_opt_in() {
    let t = tempfile::tempdir().unwrap();
    let args = [
        "generate",
        "--classes",
        "10",
        "--train-per-class",
        "1",
        "--test-mosaics",
        "1",
        "--regions",
        "6..9",
    ];
    let out = t.path().join("a");
    let o = fcnt(&[&args[..], &["--out", s(&out)]].concat());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("allow_nonpaper"));
    ok(fcnt(
        &[&args[..], &["--allow-nonpaper", "--out", s(&out)]].concat(),
    ));
}

#[test]
fn generate_rerun_is_byte_identical_and_detects_tampering() {
    let t = tempfile::tempdir().unwrap();
    let first = t.path().join("first");
    small_dataset(&first);
    let again = t.path().join("again");
    let o = ok(fcnt(&[
        "rerun",
        s(&first.join("run.txt")),
        "--out",
        s(&again),
    ]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduced"));

    let mut m = Manifest::read(first.join("run.txt")).unwrap();
    m.set("output.test/m000.pgm", "0".repeat(64));
    m.write(first.join("run.txt")).unwrap();
    let o = fcnt(&[
        "rerun",
        s(&first.join("run.txt")),
        "--out",
        s(&t.path().join("third")),
    ]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("test/m000.pgm"));
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fcnt"))
        .env("FCNT_OUT", t.path())
        .args([
            "-q",
            "generate",
            "--classes",
            "2",
            "--train-per-class",
            "1",
            "--test-mosaics",
            "0",
        ])
        .args(["--train-size", "32"])
        .output()
        .unwrap();
    ok(o);
    assert!(t.path().join("generate").join("dataset.txt").is_file());
}

#[test]
fn train_without_data_is_a_usage_error() {
    let o = fcnt(&["train", "--iters", "1"]);
    assert_eq!(code(&o), 2);
    let t = tempfile::tempdir().unwrap();
    let o = fcnt(&["train", "--data", s(t.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn segment_raw_refined_and_rerun() {
    let t = tempfile::tempdir().unwrap();
    let ckpt = trained(t.path());
    let image = t.path().join("data/test/m000.pgm");

    let raw = t.path().join("raw");
    ok(fcnt(&[
        "segment",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--scores",
        "--out",
        s(&raw),
    ]));
    assert_eq!(
        read_labels(raw.join("raw.pgm")).unwrap(),
        read_labels(raw.join("labels.pgm")).unwrap()
    );
    let scores = std::fs::metadata(raw.join("scores.f64")).unwrap().len();
    assert_eq!(scores, 3 * 48 * 48 * 8);
    assert!(raw.join("overlay.png").is_file());

    let refined = t.path().join("refined");
    ok(fcnt(&[
        "segment",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--refine",
        "--classes",
        "2",
        "--out",
        s(&refined),
    ]));
    let labels = read_labels(refined.join("labels.pgm")).unwrap();
    assert_eq!(connected_components(&labels).patch_count(), 2);

    let again = t.path().join("again");
    ok(fcnt(&[
        "rerun",
        s(&refined.join("run.txt")),
        "--out",
        s(&again),
    ]));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    let img = t.path().join("x.pgm");
    write_gray(&img, &Tensor::full([1, 1, 32, 32], 0.5)).unwrap();
    let o = fcnt(&[
        "segment",
        "--checkpoint",
        s(&t.path().join("none.ckpt")),
        "--image",
        s(&img),
    ]);
    assert_eq!(code(&o), 3);
}

fn two_texture_image(dir: &Path) -> PathBuf {
    let img = dir.join("img.pgm");
    let t = Tensor::from_fn([1, 1, 32, 32], |_, _, y, x| {
        if x < 16 {
            0.5 + 0.3 * ((y + x) % 2) as f64
        } else {
            0.5 - 0.3 * ((x / 2) % 2) as f64
        }
    });
    write_gray(&img, &t).unwrap();
    img
}

#[test]
fn unsup_with_external_preseg() {
    let t = tempfile::tempdir().unwrap();
    let img = two_texture_image(t.path());
    let pre = t.path().join("pre.pgm");
    write_labels(
        &pre,
        &LabelMap::from_fn(32, 32, |_, x| if x < 16 { 3 } else { 7 }),
    )
    .unwrap();
    let out = t.path().join("u");
    let file_arg = format!("file:{}", s(&pre));
    ok(fcnt(&[
        "unsup",
        "--image",
        s(&img),
        "--preseg",
        &file_arg,
        "--grace",
        "2",
        "--cap",
        "6",
        "--out",
        s(&out),
    ]));
    let labels = read_labels(out.join("labels.pgm")).unwrap();
    assert!(labels.classes().iter().all(|c| [3, 7].contains(c)));
    let m = Manifest::read(out.join("run.txt")).unwrap();
    let stopped: usize = m.parse("stop.stopped_at").unwrap();
    let want = match m.get("stop.trigger").and_then(|v| v.parse::<usize>().ok()) {
        Some(trigger) => (trigger + 2).min(6),
        None => 6,
    };
    assert_eq!(stopped, want);
    ok(fcnt(&[
        "rerun",
        s(&out.join("run.txt")),
        "--out",
        s(&t.path().join("again")),
    ]));
}

#[test]
fn unsup_rejects_single_class_and_missing_network() {
    let t = tempfile::tempdir().unwrap();
    let img = two_texture_image(t.path());
    let pre = t.path().join("pre.pgm");
    write_labels(&pre, &LabelMap::filled(32, 32, 1)).unwrap();
    let file_arg = format!("file:{}", s(&pre));
    let o = fcnt(&[
        "unsup",
        "--image",
        s(&img),
        "--preseg",
        &file_arg,
        "--out",
        s(&t.path().join("a")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least two"));
    let o = fcnt(&[
        "unsup",
        "--image",
        s(&img),
        "--classes",
        "2",
        "--out",
        s(&t.path().join("b")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unsup_kmeans_path_runs() {
    let t = tempfile::tempdir().unwrap();
    let ckpt = trained(t.path());
    let image = t.path().join("data/test/m000.pgm");
    let out = t.path().join("k");
    ok(fcnt(&[
        "unsup",
        "--image",
        s(&image),
        "--checkpoint",
        s(&ckpt),
        "--classes",
        "2",
        "--grace",
        "1",
        "--cap",
        "3",
        "--out",
        s(&out),
    ]));
    let pre = read_labels(out.join("preseg.pgm")).unwrap();
    assert!(pre.classes().len() <= 2);
}

#[test]
fn eval_identical_dirs_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    small_dataset(&data);
    let out = t.path().join("e");
    let pred = t.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    for n in ["m000", "m001"] {
        std::fs::copy(
            data.join("test").join(format!("{n}_gt.pgm")),
            pred.join(format!("{n}.pgm")),
        )
        .unwrap();
    }
    // The test directory holds images and ground truth side by side.
    let o = ok(fcnt(&[
        "eval",
        "--pred",
        s(&pred),
        "--gt",
        s(&data.join("test")),
        "--out",
        s(&out),
    ]));
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(table.contains('↑') && table.contains('↓'));
    let m = Manifest::read(out.join("eval.txt")).unwrap();
    assert_eq!(m.parse::<f64>("mean.CO").unwrap(), 100.0);
    assert_eq!(m.parse::<f64>("mean.GCE").unwrap(), 0.0);
}

#[test]
fn eval_mismatched_sets_are_listed() {
    let t = tempfile::tempdir().unwrap();
    let (p, g) = (t.path().join("p"), t.path().join("g"));
    write_labels(p.join("a.pgm"), &LabelMap::filled(4, 4, 0)).unwrap();
    write_labels(g.join("b_gt.pgm"), &LabelMap::filled(4, 4, 0)).unwrap();
    let o = fcnt(&[
        "eval",
        "--pred",
        s(&p),
        "--gt",
        s(&g),
        "--out",
        s(&t.path().join("e")),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("prediction a") && err.contains("ground truth b"));
}

#[test]
fn unknown_experiment_is_rejected() {
    let o = fcnt(&["run", "--experiment", "D"]);
    assert_eq!(code(&o), 2);
}
