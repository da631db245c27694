mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use hoi_fusion::image::RgbImage;
use hoi_fusion::io::ArrayContainer;
use hoi_fusion::masks::{HeadMask, MaskSource};
use hoi_fusion::pipeline::RunManifest;
use ndarray::Array2;
use serde_json::json;

fn find(dir: &Path, suffix: &str) -> PathBuf {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(suffix))
        .unwrap_or_else(|| panic!("no *{suffix} in {}", dir.display()))
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["generate", "--out", "o"],
        &["generate", "--prompt", "a cat", "--out", "o"],
        &["generate", "--prompt", PROMPT, "--filter-mode", "sideways", "--out", "o"],
        &["generate", "--prompt", PROMPT, "--alpha-start", "0.5", "--alpha-end", "2.5", "--alpha-mode", "decremental", "--out", "o"],
        &["generate", "--prompt", PROMPT, "--steps", "5", "--inject-step", "9", "--out", "o"],
        &["ablate", "--prompt", PROMPT, "--out", "o"],
        &["ablate", "--prompt", PROMPT, "--toggles", "sideways", "--out", "o"],
        &["evaluate", "--images", ".", "--mode", "vibes", "--adapters", "x.json"],
        &["bogus"],
    ];
    for args in cases {
        let o = run_cli(args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_inputs_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cli(&["generate", "--prompt", PROMPT, "--mask", "nope.png", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = run_cli(&["grid", "--images", "nope", "--cols", "2", "--out", "g.png"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn no_head_found_saves_layout_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cli(
        &["generate", "--prompt", PROMPT, "--steps", "4", "--segmentor", "null", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no head region"));
    let layout = find(&tmp.path().join("o"), ".layout.png");
    assert!(RgbImage::load(&layout).is_ok());
}

#[test]
fn fallback_mask_is_used_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let mask = tmp.path().join("fallback.png");
    HeadMask::new(Array2::from_shape_fn((64, 64), |(y, x)| f64::from(y < 32 && x > 16 && x < 48)), MaskSource::UserSupplied)
        .unwrap()
        .save_png(&mask)
        .unwrap();
    let o = run_cli(
        &["generate", "--prompt", PROMPT, "--steps", "4", "--segmentor", "null", "--mask-fallback", "fallback.png", "--out", "o"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = find(&tmp.path().join("o"), ".manifest.json");
    let m = RunManifest::load(&manifest).unwrap();
    let prov = m.mask_provenance.unwrap();
    assert!(prov.fallback_used);
    assert_eq!(prov.segmentor.as_deref(), Some("null"));
    let o = run_cli(&["generate", "--from-manifest", manifest.to_str().unwrap(), "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("replay ok"));
}

#[test]
fn tampered_manifest_fails_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cli(&["generate", "--prompt", PROMPT, "--steps", "4", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let path = find(&tmp.path().join("o"), ".manifest.json");
    let mut m = RunManifest::load(&path).unwrap();
    m.checksums.insert("image".into(), "0".repeat(64));
    m.save(&path).unwrap();
    let o = run_cli(&["generate", "--from-manifest", path.to_str().unwrap(), "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mismatch"));
}

#[test]
fn config_file_yields_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("cfg.json"),
        json!({"seed": 3, "steps": 6, "filter_mode": "high-low", "enable_cac": false}).to_string(),
    )
    .unwrap();
    let o = run_cli(
        &["generate", "--prompt", PROMPT, "--config", "cfg.json", "--seed", "4", "--out", "o"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::load(&find(&tmp.path().join("o"), ".manifest.json")).unwrap();
    assert_eq!(m.config.seed, 4);
    assert_eq!(m.config.total_steps, 6);
    assert_eq!(m.config.filter_mode.as_str(), "high-low");
    assert!(!m.config.enable_cac);
    assert!(m.timestamp.is_none());

    fs::write(tmp.path().join("bad.json"), r#"{"sed": 3}"#).unwrap();
    let o = run_cli(&["generate", "--prompt", PROMPT, "--config", "bad.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_intermediates_writes_containers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cli(
        &["generate", "--prompt", PROMPT, "--steps", "3", "--dump-intermediates", "--timestamps", "--out", "o"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = find(&tmp.path().join("o"), ".intermediates");
    let z = ArrayContainer::read(&dir.join("step002_z_merged.arr")).unwrap();
    assert_eq!(z.header.shape, vec![4, 8, 8]);
    assert_eq!(z.header.timestep, Some(0));
    let latent = ArrayContainer::read(&find(&tmp.path().join("o"), ".latent.arr")).unwrap();
    assert_eq!(latent.data, z.data);
    let r = ArrayContainer::read(&dir.join("step000_res_merged_l1.arr")).unwrap();
    assert_eq!(r.header.layer_index, Some(1));
    assert_eq!(r.header.shape, vec![5, 4, 4]);
    let m = RunManifest::load(&find(&tmp.path().join("o"), ".manifest.json")).unwrap();
    assert!(m.timestamp.is_some());
}

#[test]
fn stage1_mask_writes_mask_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_cli(&["stage1-mask", "--prompt", PROMPT, "--steps", "5", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mask = HeadMask::load_png(&find(&tmp.path().join("s"), ".mask.png"), MaskSource::Segmentor).unwrap();
    assert_eq!(mask.resolution(), (64, 64));
    assert!(mask.is_binary());
    let m = RunManifest::load(&find(&tmp.path().join("s"), ".stage1.json")).unwrap();
    assert_eq!(m.checksums["head_mask"], mask.checksum());
    assert!(m.steps.is_empty());
}

#[test]
fn corpus_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    for (set, file) in [("hoi", "hoi_woman.txt"), ("general", "general_woman.txt")] {
        let o = run_cli(&["corpus", "--subject", "woman", "--set", set], tmp.path());
        assert!(o.status.success());
        assert_eq!(String::from_utf8(o.stdout).unwrap(), golden(file));
    }
}

#[test]
fn grid_tiles_in_name_order() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("imgs");
    fs::create_dir(&dir).unwrap();
    for (i, v) in [0.0, 128.0 / 255.0, 1.0].iter().enumerate() {
        RgbImage::filled(4, 6, *v).unwrap().save_png(&dir.join(format!("{i}.png"))).unwrap();
    }
    let o = run_cli(&["grid", "--images", "imgs", "--cols", "2", "--out", "g.png"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let g = RgbImage::load(&tmp.path().join("g.png")).unwrap();
    assert_eq!((g.height(), g.width()), (8, 12));
    assert_eq!(g.pixel(0, 6), [128.0 / 255.0; 3]);
    assert_eq!(g.pixel(4, 0), [1.0, 1.0, 1.0]);
}

fn evaluation_fixture(dir: &Path) {
    let imgs = dir.join("imgs");
    fs::create_dir(&imgs).unwrap();
    RgbImage::filled(8, 8, 0.2).unwrap().save_png(&imgs.join("a.png")).unwrap();
    RgbImage::filled(8, 8, 0.6).unwrap().save_png(&imgs.join("b.png")).unwrap();
    RgbImage::filled(8, 8, 0.9).unwrap().save_png(&dir.join("ref.png")).unwrap();
    let spec = json!({
        "face_detector": {"kind": "whole_image"},
        "face_embedder": {"kind": "scripted", "vectors": {"a.png": [1, 0], "b.png": [0, 1], "ref.png": [1, 0]}},
        "text_image_scorer": {"kind": "scripted", "scores": {"a.png": 0.3, "b.png": 0.1}},
        "hoi_detector": {"kind": "constant", "value": 0.5}
    });
    fs::write(dir.join("adapters.json"), spec.to_string()).unwrap();
    fs::write(dir.join("prompts.txt"), "a man surfing\na man reading a book\n").unwrap();
}

#[test]
fn evaluate_with_scripted_adapters() {
    let tmp = tempfile::tempdir().unwrap();
    evaluation_fixture(tmp.path());
    let o = run_cli(
        &[
            "evaluate", "--images", "imgs", "--mode", "identity,prompt,interaction", "--adapters", "adapters.json",
            "--reference", "ref.png", "--prompts", "prompts.txt", "--corpus-subject", "man", "--method", "ours",
            "--out", "report.json",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2), "--prompts conflicts with --corpus-subject");

    let o = Command::new(bin())
        .args([
            "evaluate", "--images", "imgs", "--mode", "identity,prompt", "--mode", "interaction", "--reference",
            "ref.png", "--corpus-subject", "man", "--method", "ours", "--out", "report.json",
        ])
        .env("PERSONAHOI_ADAPTERS", "adapters.json")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("Method | Identity Preservation (%)"));
    let row = table.lines().nth(2).unwrap();
    let cells: Vec<&str> = row.split('|').map(str::trim).collect();
    assert_eq!(cells, ["ours", "50.00", "20.00", "50.00"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert!((report["aggregates"]["prompt_consistency_percent"].as_f64().unwrap() - 20.0).abs() < 1e-9);

    let o = run_cli(
        &["evaluate", "--images", "imgs", "--mode", "prompt", "--adapters", "adapters.json", "--prompts", "prompts.txt"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
}
