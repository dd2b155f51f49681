use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cbir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbir"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two classes of three 72x72 images: dark stripes and bright checks.
fn png_dataset(root: &Path) {
    for (class, base) in [("dark", 40u8), ("bright", 200u8)] {
        let d = root.join(class);
        fs::create_dir_all(&d).unwrap();
        for i in 0..3u32 {
            let img = image::RgbImage::from_fn(72, 72, |x, y| {
                let t = if class == "dark" { (x / (3 + i)) % 2 } else { ((x / 4) + (y / (4 + i))) % 2 };
                let v = base.saturating_add((t * 30) as u8);
                image::Rgb([v, v / 2 + 10 * i as u8, 255 - v])
            });
            img.save(d.join(format!("{class}{i}.png"))).unwrap();
        }
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn synthetic_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = cbir(dir.path(), &["eval", "--dataset", "synthetic", "--seed", "3", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("features\tANMRR\tMAP"));
    let r = read_json(&dir.path().join("r/synthetic.blobs.basic.euclidean.json"));
    assert!(r["anmrr"].as_f64().unwrap() < 0.05);
    assert!(dir.path().join("r/synthetic.blobs.basic.euclidean.pr.tsv").exists());
}

#[test]
fn extract_skips_complete_tables_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    png_dataset(&data);
    let args = ["extract", "--dataset", "toy", "--kinds", "hist_rgb,lbp_rgb,gabor_l", "--out", "f"];
    let o = cbir(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("f/toy.hist_rgb.cbf").exists());
    assert!(dir.path().join("f/toy.labels.json").exists());
    let again = cbir(dir.path(), &args);
    assert!(again.status.success());
    assert_eq!(stderr(&again).matches("up to date").count(), 3, "{}", stderr(&again));

    let o = cbir(
        dir.path(),
        &["eval", "--dataset", "f/toy.labels.json", "--features", "f", "--kinds", "hist_rgb,lbp_rgb", "--metric", "histint", "--out", "r"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&dir.path().join("r/toy.hist_rgb.basic.histint.json"));
    assert_eq!(r["n_queries"].as_u64(), Some(6));
    assert!(r["map"].as_f64().unwrap() > 0.9);
}

#[test]
fn missing_dataset_and_bad_flags_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["extract", "--dataset", "nowhere", "--kinds", "hist_l"],
        &["eval", "--dataset", "synthetic", "--scheme", "alrf", "--n", "4"],
        &["eval", "--dataset", "synthetic", "--scheme", "pseudo", "--alrf-iters", "3"],
        &["eval", "--kinds", "hist_l"],
        &["eval", "--dataset", "synthetic", "--metric", "hamming"],
    ];
    for args in cases {
        let o = cbir(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn local_kinds_need_a_quantizer_first() {
    let dir = tempfile::tempdir().unwrap();
    png_dataset(&dir.path().join("toy"));
    let o = cbir(dir.path(), &["extract", "--dataset", "toy", "--kinds", "dense_sift", "--out", "f"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("codebook"));

    let o = cbir(dir.path(), &["codebook", "--dataset", "toy", "--kinds", "dense_sift", "--k", "4", "--out", "f"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("f/toy.dense_sift.model.cbf").exists());
    let o = cbir(dir.path(), &["extract", "--dataset", "toy", "--kinds", "dense_sift", "--out", "f"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cbir(dir.path(), &["eval", "--dataset", "toy", "--features", "f", "--kinds", "dense_sift", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("dense_sift"));
}

#[test]
fn manual_shortfall_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = cbir(
        dir.path(),
        &["eval", "--dataset", "synthetic", "--scheme", "manual", "--n", "5", "--out", "r"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&dir.path().join("r/synthetic.blobs.manual-n5.euclidean.json"));
    assert!(r.get("shortfall").is_some(), "{r}");
}

#[test]
fn reports_merge_and_inconsistent_sets_fail() {
    let dir = tempfile::tempdir().unwrap();
    for scheme in ["basic", "pseudo"] {
        let o = cbir(dir.path(), &["eval", "--dataset", "synthetic", "--scheme", scheme, "--out", "r"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = cbir(dir.path(), &["report", "r", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("average rank"));
    assert!(dir.path().join("m/merged.tsv").exists());

    let mut r = read_json(&dir.path().join("r/synthetic.blobs.basic.euclidean.json"));
    r["n_images"] = Value::from(r["n_images"].as_u64().unwrap() + 1);
    r["features"] = Value::from("other");
    fs::create_dir_all(dir.path().join("bad")).unwrap();
    fs::write(dir.path().join("bad/x.json"), r.to_string()).unwrap();
    let o = cbir(dir.path(), &["report", "r/synthetic.blobs.basic.euclidean.json", "bad/x.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn ingested_vectors_can_be_evaluated() {
    let dir = tempfile::tempdir().unwrap();
    png_dataset(&dir.path().join("toy"));
    let rows: String = (0..6)
        .map(|i| {
            let c = if i < 3 { 1.0 } else { 5.0 };
            format!("{},{},{}\n", c + i as f64 * 0.01, c, 1.0)
        })
        .collect();
    fs::write(dir.path().join("vec.csv"), rows).unwrap();
    let o = cbir(
        dir.path(),
        &["ingest", "--dataset", "toy", "--kinds", "cnn", "--input", "vec.csv", "--out", "f"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cbir(dir.path(), &["eval", "--dataset", "toy", "--features", "f", "--kinds", "cnn", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&dir.path().join("r/toy.cnn.basic.euclidean.json"));
    assert!((r["map"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn config_file_supplies_defaults_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "dataset = \"synthetic\"\nscheme = \"pseudo\"\nn = 3\nmetric = \"cosine\"\nout = \"cfg\"\n",
    )
    .unwrap();
    let o = cbir(dir.path(), &["eval", "--config", "run.toml", "--metric", "manhattan"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("cfg/synthetic.blobs.pseudo-n3.manhattan.json").exists());

    fs::write(dir.path().join("bad.toml"), "dataset = \"synthetic\"\nlearning_rate = 1\n").unwrap();
    let o = cbir(dir.path(), &["eval", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
