use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occlusion_core::image::Image;
use occlusion_core::model::load_network_str;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn occverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occverify"))
        .args(args)
        .output()
        .expect("cannot run occverify")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by a signal")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn occlude_sample2x2(dir: &Path, extra: &[&str]) -> Vec<f64> {
    let out = dir.join("out.img");
    let sample2x2 = fixture("sample2x2.img");
    let mut args = vec![
        "occlude",
        "--image",
        path(&sample2x2),
        "--occ-size",
        "1x1",
        "--out",
        path(&out),
    ];
    args.extend_from_slice(extra);
    let run = occverify(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    Image::load(&out).unwrap().into_vec()
}

fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn occlude_reproduces_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_close(
        &occlude_sample2x2(d, &["--color", "uniform:0", "--at", "1,2"]),
        &[0.4, 0.0, 0.55, 0.72],
    );
    assert_close(
        &occlude_sample2x2(d, &["--color", "uniform:0", "--positions", "real", "--at", "1.5,2"]),
        &[0.4, 0.3, 0.55, 0.36],
    );
    assert_close(
        &occlude_sample2x2(d, &["--color", "multiform:0.1", "--at", "1,2", "--delta", "0.1"]),
        &[0.4, 0.7, 0.55, 0.72],
    );
    assert_close(
        &occlude_sample2x2(d, &["--color", "multiform:0.1", "--at", "1,2", "--delta", "-0.1"]),
        &[0.4, 0.5, 0.55, 0.72],
    );
}

fn verify(net: &str, image: &str, out_dir: &Path, extra: &[&str]) -> Output {
    let (net, image) = (fixture(net), fixture(image));
    let mut args = vec![
        "verify",
        "--net",
        path(&net),
        "--image",
        path(&image),
        "--workers",
        "1",
        "--out-dir",
        path(out_dir),
        "--json",
    ];
    args.extend_from_slice(extra);
    occverify(&args)
}

#[test]
fn exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let flip = verify(
        "tiny2x2.fnn",
        "sample2x2.img",
        dir.path(),
        &["--occ-size", "1x1", "--color", "uniform:0"],
    );
    assert_eq!(code(&flip), 1, "{}", String::from_utf8_lossy(&flip.stderr));
    let constant = verify(
        "constant2x2.fnn",
        "sample2x2.img",
        dir.path(),
        &["--occ-size", "2x2", "--color", "multiform:1"],
    );
    assert_eq!(code(&constant), 0);
    let starved = verify(
        "tiny6x6.fnn",
        "img6x6.pgm",
        dir.path(),
        &[
            "--occ-size",
            "2x2",
            "--color",
            "multiform:0.5",
            "--timeout",
            "0",
            "--falsify-first",
            "off",
        ],
    );
    assert_eq!(code(&starved), 2);
    let report: Value = serde_json::from_slice(&starved.stdout).unwrap();
    assert_eq!(report["overall"], "inconclusive");
    assert_eq!(report["totals"]["timeout_percent"], 100.0);
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for extra in [
        &["--occ-size", "0x1", "--color", "uniform:0"][..],
        &["--occ-size", "3x1", "--color", "uniform:0"][..],
        &["--occ-size", "1x1", "--color", "uniform:2"][..],
        &["--occ-size", "1x1", "--color", "multiform:0"][..],
        &["--occ-size", "1x1", "--color", "uniform:0", "--split", "3x1"][..],
        &["--occ-size", "1x1", "--color", "uniform:0", "--sort-labels", "maybe"][..],
    ] {
        assert_eq!(code(&verify("tiny2x2.fnn", "sample2x2.img", d, extra)), 64, "{extra:?}");
    }
    let wrong_size = verify(
        "tiny4x4.fnn",
        "sample2x2.img",
        d,
        &["--occ-size", "1x1", "--color", "uniform:0"],
    );
    assert_eq!(code(&wrong_size), 64);
    let missing = verify(
        "nope.fnn",
        "sample2x2.img",
        d,
        &["--occ-size", "1x1", "--color", "uniform:0"],
    );
    assert_eq!(code(&missing), 64);
    assert_eq!(code(&occverify(&["frobnicate"])), 64);
}

#[test]
fn exported_counterexample_reclassifies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = verify(
        "tiny4x4.fnn",
        "img4x4.pgm",
        d,
        &["--occ-size", "4x4", "--color", "multiform:0.8"],
    );
    assert_eq!(code(&run), 1, "{}", String::from_utf8_lossy(&run.stderr));
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("counterexample.json")).unwrap()).unwrap();
    let image = Image::load(&d.join(sidecar["exact_image"].as_str().unwrap())).unwrap();
    let f = load_network_str(&std::fs::read_to_string(fixture("tiny4x4.fnn")).unwrap()).unwrap();
    let predicted = f.classify(image.as_slice()).unwrap();
    assert_eq!(Value::from(predicted.0), sidecar["adversarial_label"]);
    assert_ne!(sidecar["adversarial_label"], sidecar["original_label"]);
    assert!(d.join(sidecar["image"].as_str().unwrap()).exists());
}

/// Drops every timing field so two runs can be compared byte for byte.
fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["seconds", "t_build", "t_verify", "t_plus", "t_minus"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn repeated_runs_match_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--occ-size", "2x2", "--color", "multiform:0.3", "--split", "2x2"][..],
        &["--occ-size", "4x4", "--color", "multiform:0.8", "--split", "2x2"][..],
    ] {
        let first = verify("tiny4x4.fnn", "img4x4.pgm", dir.path(), args);
        let second = verify("tiny4x4.fnn", "img4x4.pgm", dir.path(), args);
        assert_eq!(code(&first), code(&second));
        let mut a: Value = serde_json::from_slice(&first.stdout).unwrap();
        let mut b: Value = serde_json::from_slice(&second.stdout).unwrap();
        strip_timings(&mut a);
        strip_timings(&mut b);
        assert_eq!(a.to_string(), b.to_string());
    }
}

#[test]
fn build_onn_writes_a_loadable_network_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("onn.fnn");
    let (img, net) = (fixture("img4x4.pgm"), fixture("tiny4x4.fnn"));
    let run = occverify(&[
        "build-onn",
        "--image",
        path(&img),
        "--occ-size",
        "2x2",
        "--color",
        "uniform:0.5",
        "--net",
        path(&net),
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let composed = load_network_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(composed.input_dim(), 4);
    assert_eq!(composed.output_dim(), 3);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 4);
    assert_eq!(inputs[0]["name"], "a");
    assert_eq!(inputs[0]["upper"], 4.0);
}

#[test]
fn emit_smt_prints_an_encoding() {
    let (img, net) = (fixture("sample2x2.img"), fixture("tiny2x2.fnn"));
    let run = occverify(&[
        "emit-smt",
        "--net",
        path(&net),
        "--image",
        path(&img),
        "--occ-size",
        "1x1",
        "--color",
        "uniform:0",
    ]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("(declare-fun a () Real)"));
    assert!(text.contains("(check-sat)"));
    let multi = occverify(&[
        "emit-smt",
        "--net",
        path(&net),
        "--image",
        path(&img),
        "--occ-size",
        "1x1",
        "--color",
        "multiform:0.1",
    ]);
    assert_eq!(code(&multi), 64);
}

#[test]
fn bench_writes_tables_and_compares_configs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("bench.toml");
    let fixtures = fixture("");
    std::fs::write(
        &manifest,
        format!(
            r#"
timeout = 10.0
workers = 1
images = ["{f}/img4x4.pgm"]
sizes = ["1x1", "2x2"]
colors = ["uniform:0", "multiform:0.2"]

[[networks]]
name = "tiny"
path = "{f}/tiny4x4.fnn"

[[configs]]
name = "base"

[[configs]]
name = "split"
split = "2x2"
sort_labels = false
"#,
            f = fixtures.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let run = occverify(&["bench", "--manifest", path(&manifest), "--out-dir", path(&out_dir)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out_dir.join("bench.txt").exists());
    let result: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("bench.json")).unwrap()).unwrap();
    assert_eq!(result["rows"].as_array().unwrap().len(), 8);
    let comparisons = result["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 4);
    assert!(comparisons.iter().all(|c| c["verdicts_agree"] == true));

    std::fs::write(
        &manifest,
        "images = []\nsizes = [\"1x1\"]\ncolors = [\"uniform:0\"]\nnetworks = []\nbogus = 1\n",
    )
    .unwrap();
    let bad = occverify(&["bench", "--manifest", path(&manifest), "--out-dir", path(&out_dir)]);
    assert_eq!(code(&bad), 64);
}
