use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sievelab::data::{ImageMeta, PredictionRecord, ReaderKind, RoiAnnotation, RoiBox, View};
use sievelab::filter::{read_gray_image, write_png16, GrayImage};
use sievelab::io::{write_json, write_jsonl};

const TOY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy.json");

fn sievelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sievelab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = sievelab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn error_body(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

#[test]
fn help_and_usage_errors() {
    let out = sievelab(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["filter", "simulate", "calibrate", "fit", "compare-models", "analyze", "simpsons", "serve"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(sievelab(&["fit", "--help"]).status.code(), Some(0));
    assert_eq!(sievelab(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(sievelab(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sievelab(&["simulate", "--config", TOY]).status.code(), Some(2), "missing --out");
    assert_eq!(sievelab(&["fit", "--model", "nope", "--data", "x", "--cases", "y", "--out", "z"]).status.code(), Some(2));
}

#[test]
fn validation_failure_is_json_and_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = read_json(Path::new(TOY));
    config["readers"] = 0.into();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, config.to_string()).unwrap();
    let out_dir = dir.path().join("run");
    let out = sievelab(&["simulate", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let body = error_body(&out);
    assert!(body["error"].is_string());
    assert!(body["message"].as_str().unwrap().contains("reader"), "{body}");
    assert!(!out_dir.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "staging debris left behind");

    let missing = sievelab(&["fit", "--data", "/nonexistent.jsonl", "--cases", "/nonexistent.jsonl", "--out", p(&out_dir)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(error_body(&missing)["error"].is_string());
    assert!(!out_dir.exists());
}

fn pipeline(root: &Path, seed: &str) -> PathBuf {
    let sim = root.join("sim");
    let fit = root.join("fit");
    let an = root.join("an");
    ok(&["simulate", "--config", TOY, "--seed", seed, "--out", p(&sim)]);
    ok(&[
        "fit",
        "--data",
        p(&sim.join("predictions.jsonl")),
        "--cases",
        p(&sim.join("cases.jsonl")),
        "--seed",
        seed,
        "--out",
        p(&fit),
    ]);
    ok(&[
        "analyze",
        "--posterior",
        p(&fit.join("posterior.json")),
        "--spec",
        p(&fit.join("model.json")),
        "--replicates",
        "40",
        "--seed",
        seed,
        "--out",
        p(&an),
    ]);
    an
}

#[test]
fn toy_pipeline_report_schema_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let an = pipeline(a.path(), "5");
    let report = read_json(&an.join("report.json"));
    assert_eq!(report["subgroups"].as_array().unwrap().len(), 2);
    assert_eq!(report["severities"], 3);
    assert_eq!(report["replicates"], 40);
    let axes = report["axes"].as_array().unwrap();
    assert_eq!(axes.len(), 2);
    for axis in axes {
        assert!(axis["name"].is_string());
        let sev = axis["separability"]["severities"].as_array().unwrap();
        assert_eq!(sev.len(), 3);
        assert!(sev[0]["p_value"].is_null());
        for s in &sev[1..] {
            let pv = s["p_value"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&pv));
        }
        for s in sev {
            assert_eq!(s["ks"].as_array().unwrap().len(), 40);
        }
    }
    let conf = report["confidence"].as_array().unwrap();
    assert_eq!(conf.len(), 2 * 3);
    for c in conf {
        let pp = c["prob_positive"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&pp));
        assert!(c["std"].as_f64().unwrap() >= 0.0);
    }
    let csv = std::fs::read_to_string(an.join("confidence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(std::fs::read_to_string(an.join("figure.svg")).unwrap().starts_with("<svg"));
    let manifest = read_json(&an.join("manifest.json"));
    assert_eq!(manifest["command"], "analyze");
    assert_eq!(manifest["seed"], 5);

    let an_b = pipeline(b.path(), "5");
    for f in ["report.json", "confidence.csv", "separability.csv", "figure.svg"] {
        assert_eq!(std::fs::read(an.join(f)).unwrap(), std::fs::read(an_b.join(f)).unwrap(), "{f} differs between runs");
    }
    for f in ["predictions.jsonl", "report.json", "posterior.json"] {
        let sa = std::fs::read(a.path().join("sim").join(f)).unwrap();
        let sb = std::fs::read(b.path().join("sim").join(f)).unwrap();
        assert_eq!(sa, sb, "simulate {f} differs between runs");
    }
}

#[test]
fn simpsons_and_compare_models() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let sub = pipeline(root, "2");
    let sim = root.join("sim");
    let data = p(&sim.join("predictions.jsonl")).to_string();
    let cases = p(&sim.join("cases.jsonl")).to_string();
    let fitp = root.join("fitp");
    let anp = root.join("anp");
    ok(&["fit", "--data", &data, "--cases", &cases, "--grouping", "pooled", "--out", p(&fitp)]);
    ok(&[
        "analyze",
        "--posterior",
        p(&fitp.join("posterior.json")),
        "--spec",
        p(&fitp.join("model.json")),
        "--replicates",
        "40",
        "--out",
        p(&anp),
    ]);
    let simp = root.join("simp");
    ok(&["simpsons", "--subgroups", p(&sub.join("report.json")), "--pooled", p(&anp.join("report.json")), "--out", p(&simp)]);
    let report = read_json(&simp.join("simpsons.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(report["pooled_has_decrease"].is_boolean());
    let csv = std::fs::read_to_string(simp.join("simpsons.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);

    let swapped = sievelab(&["simpsons", "--subgroups", p(&anp.join("report.json")), "--pooled", p(&sub.join("report.json")), "--out", p(&root.join("bad"))]);
    assert_eq!(swapped.status.code(), Some(1));
    assert!(!root.join("bad").exists());

    let cmp = root.join("cmp");
    ok(&[
        "compare-models",
        "--data",
        &data,
        "--cases",
        &cases,
        "--models",
        "bias,full",
        "--mc-samples",
        "50",
        "--max-iters",
        "1000",
        "--out",
        p(&cmp),
    ]);
    let comparison = read_json(&cmp.join("comparison.json"));
    let ranking = comparison["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 2);
    assert_eq!(ranking[0]["rank"], 1);
    assert!(ranking[0]["elbo"].as_f64().unwrap() >= ranking[1]["elbo"].as_f64().unwrap());
    assert_eq!(comparison["best"], ranking[0]["variant"]);
    assert!(cmp.join("posterior-bias.json").is_file() && cmp.join("posterior-full.json").is_file());
}

fn write_library(dir: &Path) -> Vec<GrayImage> {
    let views = [View::RightCc, View::LeftCc];
    let mut metas = Vec::new();
    let mut images = Vec::new();
    for (i, view) in views.iter().enumerate() {
        let (h, w) = (300, 280);
        let pixels = (0..h * w).map(|k| ((k * 7919 + i * 31) % 4000) as f64).collect();
        let img = GrayImage::new(h, w, 0.1, pixels).unwrap();
        write_png16(&dir.join(format!("img{i}.png")), &img).unwrap();
        metas.push(ImageMeta {
            image_id: format!("img{i}"),
            exam_id: "exam0".into(),
            view: *view,
            height_px: h as u32,
            width_px: w as u32,
            mm_per_pixel: 0.1,
        });
        images.push(img);
    }
    write_jsonl(&dir.join("images.jsonl"), &metas).unwrap();
    images
}

#[test]
fn filter_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    std::fs::create_dir(&lib).unwrap();
    let originals = write_library(&lib);

    let s0 = dir.path().join("s0");
    ok(&["filter", "--in", p(&lib), "--severity-index", "0", "--out", p(&s0)]);
    for (i, orig) in originals.iter().enumerate() {
        let got = read_gray_image(&s0.join(format!("img{i}.png")), 0.1).unwrap();
        assert_eq!(got.pixels, orig.pixels, "unfiltered level changed pixels");
    }

    let s6 = dir.path().join("s6");
    let copy = dir.path().join("manifest-copy.json");
    ok(&["filter", "--in", p(&lib), "--severity-index", "6", "--out", p(&s6), "--manifest", p(&copy)]);
    let filtered = read_gray_image(&s6.join("img0.png"), 0.1).unwrap();
    assert_ne!(filtered.pixels, originals[0].pixels);
    let manifest = read_json(&s6.join("manifest.json"));
    assert_eq!(manifest["details"]["severity_index"], 6);
    assert_eq!(manifest["details"]["ladder"].as_array().unwrap().len(), 9);
    let d0 = manifest["details"]["cutoff_cycles_per_frame"]["img0"].as_f64().unwrap();
    let expected = 1.0 * 280.0 * 0.1;
    assert!((d0 - expected).abs() < 1e-9, "cutoff {d0} vs {expected}");
    assert_eq!(read_json(&copy), manifest);
    assert!(s6.join("images.jsonl").is_file());

    let rois = dir.path().join("rois.jsonl");
    let ann = RoiAnnotation {
        reader_id: "r0".into(),
        image_id: "img0".into(),
        boxes: vec![RoiBox { x: 10, y: 20, w: 240, h: 250 }],
    };
    write_jsonl(&rois, &[ann]).unwrap();
    let interior = dir.path().join("interior");
    ok(&["filter", "--in", p(&lib), "--severity-index", "6", "--scheme", "interior", "--rois", p(&rois), "--out", p(&interior)]);
    let got = read_gray_image(&interior.join("img0.png"), 0.1).unwrap();
    for row in 0..300 {
        for col in 0..280 {
            let i = row * 280 + col;
            let inside = (20..270).contains(&row) && (10..250).contains(&col);
            let want = if inside { filtered.pixels[i] } else { originals[0].pixels[i] };
            assert_eq!(got.pixels[i], want, "pixel ({row},{col})");
        }
    }
    let untouched = read_gray_image(&interior.join("img1.png"), 0.1).unwrap();
    assert_eq!(untouched.pixels, originals[1].pixels);

    let no_rois = sievelab(&["filter", "--in", p(&lib), "--severity-index", "6", "--scheme", "exterior", "--out", p(&dir.path().join("x"))]);
    assert_eq!(no_rois.status.code(), Some(2));
    let out_of_range = sievelab(&["filter", "--in", p(&lib), "--severity-index", "9", "--out", p(&dir.path().join("y"))]);
    assert_eq!(out_of_range.status.code(), Some(1));
    assert!(!dir.path().join("y").exists());
}

#[test]
fn calibrate_fits_and_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cases = sievelab::synth::synthetic_cases(300, 2, 4);
    let cases_path = dir.path().join("cases.jsonl");
    write_jsonl(&cases_path, &cases).unwrap();
    let mut records = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let malignant = c.label == sievelab::data::CaseLabel::Malignant;
        let noise = ((i * 7919) % 1000) as f64 / 1000.0;
        let raw = if malignant { 0.55 + 0.4 * noise } else { 0.5 * noise };
        for (reader, score) in [("m-a", raw.powf(3.0)), ("m-b", 1.0 - (1.0 - raw).powf(3.0))] {
            records.push(PredictionRecord {
                reader_id: reader.into(),
                reader_kind: ReaderKind::Machine,
                case_id: c.case_id.clone(),
                severity_index: 0,
                score: score.clamp(1e-4, 1.0 - 1e-4),
            });
        }
    }
    let val = dir.path().join("val.jsonl");
    write_jsonl(&val, &records).unwrap();
    let out = dir.path().join("cal");
    ok(&["calibrate", "--val", p(&val), "--labels", p(&cases_path), "--apply", p(&val), "--out", p(&out)]);
    let file = read_json(&out.join("calibrator.json"));
    let cals = file["calibrators"].as_object().unwrap();
    assert_eq!(cals.len(), 2);
    for (name, entry) in cals {
        let before = entry["ece_before"].as_f64().unwrap();
        let after = entry["ece_after"].as_f64().unwrap();
        assert!(after < before, "{name}: ECE {before} -> {after}");
        assert_eq!(entry["points"], 300);
    }
    let applied = std::fs::read_to_string(out.join("calibrated.jsonl")).unwrap();
    assert_eq!(applied.lines().count(), records.len());

    let pooled = dir.path().join("pooled");
    ok(&["calibrate", "--val", p(&val), "--labels", p(&cases_path), "--pooled", "--out", p(&pooled)]);
    let file = read_json(&pooled.join("calibrator.json"));
    assert_eq!(file["pooled"], true);
    assert_eq!(file["calibrators"]["pooled"]["points"], 600);

    let none = sievelab(&["calibrate", "--val", p(&val), "--labels", p(&cases_path), "--severity", "3", "--out", p(&dir.path().join("z"))]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn filter_honours_custom_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let ladder = sievelab::filter::halving_ladder(3);
    let path = dir.path().join("ladder.json");
    write_json(&path, &ladder).unwrap();
    let lib = dir.path().join("lib");
    std::fs::create_dir(&lib).unwrap();
    write_library(&lib);
    ok(&["filter", "--in", p(&lib), "--severity-index", "2", "--ladder", p(&path), "--out", p(&dir.path().join("o"))]);
    let bad = sievelab(&["filter", "--in", p(&lib), "--severity-index", "3", "--ladder", p(&path), "--out", p(&dir.path().join("o2"))]);
    assert_eq!(bad.status.code(), Some(1));
}
