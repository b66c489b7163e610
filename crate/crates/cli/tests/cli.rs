use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::time::Instant;

use clap::Parser;

use nand_cli::cache::{CacheLock, CacheManifest, EMBEDDINGS};
use nand_cli::commands::{self, EvalOutput};
use nand_cli::{run, Cli, Config, DetectorChoice};

fn run_args(args: &[&str]) -> (i32, String, String) {
    let cli = Cli::parse_from(std::iter::once("nand").chain(args.iter().copied()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(cli, &mut out, &mut err).unwrap_or_else(|e| panic!("{args:?}: {e:#}"));
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn fixture(seed: u64) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nand_cli::fixture::write_fixture(dir.path(), seed).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Pair-counting AUROC, ties worth one half.
fn auroc_pairs(scores: &[(u8, f64)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(_, a) in scores.iter().filter(|x| x.0 == 1) {
        for &(_, b) in scores.iter().filter(|x| x.0 == 0) {
            pairs += 1.0;
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

#[test]
fn ingest_is_idempotent() {
    let (_d, cfg) = fixture(1);
    let (code, out, _) = run_args(&["--config", s(&cfg), "ingest"]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "64 images: 0 cached, 64 encoded, 0 rebuilt, 0 adopted");
    let (_, out, _) = run_args(&["--config", s(&cfg), "ingest"]);
    assert_eq!(out.trim(), "64 images: 64 cached, 0 encoded, 0 rebuilt, 0 adopted");
}

#[test]
fn ingest_repairs_deleted_and_corrupted_files() {
    let (d, cfg) = fixture(2);
    run_args(&["--config", s(&cfg), "ingest"]);
    let cache = d.path().join("cache");
    let manifest = CacheManifest::require(&cache).unwrap();
    let mut entries = manifest.images.values();
    let gone = cache.join(&entries.next().unwrap().path);
    let bent = cache.join(&entries.next().unwrap().path);
    let original = fs::read(&bent).unwrap();
    fs::remove_file(&gone).unwrap();
    let mut bytes = original.clone();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&bent, &bytes).unwrap();

    // readers refuse a cache whose hashes no longer match
    let config = Config::load(Some(&cfg)).unwrap();
    assert!(nand_cli::Runtime::open(config).is_err());

    let (_, out, _) = run_args(&["--config", s(&cfg), "ingest"]);
    assert_eq!(out.trim(), "64 images: 62 cached, 0 encoded, 2 rebuilt, 0 adopted");
    assert_eq!(fs::read(&bent).unwrap(), original, "stub output is reproducible");
    assert!(gone.is_file());
    assert!(cache.join(EMBEDDINGS).is_dir());
}

#[test]
fn encode_stub_changes_embeddings_with_seed() {
    let (d, cfg) = fixture(3);
    run_args(&["--config", s(&cfg), "ingest"]);
    let cache = d.path().join("cache");
    let before = CacheManifest::require(&cache).unwrap();
    let (_, out, _) = run_args(&["--config", s(&cfg), "encode-stub", "--seed", "4"]);
    assert_eq!(out.trim(), "64 images: 0 cached, 64 encoded, 0 rebuilt, 0 adopted");
    let after = CacheManifest::require(&cache).unwrap();
    assert_ne!(before.encoder, after.encoder);
    let changed = before
        .images
        .iter()
        .filter(|(k, v)| after.images[*k].sha256 != v.sha256)
        .count();
    assert_eq!(changed, 64);
}

#[test]
fn lock_blocks_readers_and_writers() {
    let (d, cfg) = fixture(5);
    run_args(&["--config", s(&cfg), "ingest"]);
    let cache = d.path().join("cache");
    let lock = CacheLock::acquire(&cache).unwrap();
    let config = Config::load(Some(&cfg)).unwrap();
    let err = nand_cli::Runtime::open(config.clone()).unwrap_err().to_string();
    assert!(err.contains("lock"), "{err}");
    assert!(commands::cmd_ingest(&config, &mut Vec::new()).is_err());
    let mut sink = (Vec::new(), Vec::new());
    assert!(commands::cmd_eval(&config, "widget", None, None, None, &mut sink.0, &mut sink.1).is_err());
    drop(lock);
    assert!(nand_cli::Runtime::open(config).is_ok());
}

#[test]
fn eval_smoke_on_synthetic_fixture() {
    let start = Instant::now();
    let (d, cfg) = fixture(42);
    run_args(&["--config", s(&cfg), "ingest"]);
    let out_file = d.path().join("report.json");
    let (code, text, _) = run_args(&["--config", s(&cfg), "eval", "--class", "widget", "--out", s(&out_file)]);
    assert_eq!(code, 0);
    assert!(start.elapsed().as_secs() < 60);

    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("widget\taverage\t"));
    assert!(lines[1].starts_with("widget\tdent\t"));
    assert!(lines[2].starts_with("widget\tscuff\t"));
    assert!(lines[3].starts_with("all\taverage\t"));

    let parsed: EvalOutput = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    assert_eq!(parsed.detector, DetectorChoice::Zs);
    assert!(parsed.failures.is_empty());
    assert_eq!(parsed.reports.len(), 2);
    for r in &parsed.reports {
        let before: Vec<(u8, f64)> = r.scores.iter().map(|x| (x.label, x.before)).collect();
        let after: Vec<(u8, f64)> = r.scores.iter().map(|x| (x.label, x.after)).collect();
        assert!((auroc_pairs(&before) - r.auroc_before).abs() < 1e-12);
        assert!((auroc_pairs(&after) - r.auroc_after).abs() < 1e-12);
    }
    let scuff = parsed.reports.iter().find(|r| r.group == "scuff").unwrap();
    assert!(scuff.auroc_after - scuff.auroc_before > 0.3, "{} -> {}", scuff.auroc_before, scuff.auroc_after);
    let summary = parsed.summary.unwrap();
    let mean = parsed.reports.iter().map(|r| r.auroc_after).sum::<f64>() / 2.0;
    assert!((summary.after - mean).abs() < 1e-12);

    // second run writes the same file
    let again = d.path().join("again.json");
    run_args(&["--config", s(&cfg), "eval", "--class", "widget", "--out", s(&again)]);
    assert_eq!(fs::read(&out_file).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn eval_single_group_writes_default_report() {
    let (d, cfg) = fixture(6);
    run_args(&["--config", s(&cfg), "ingest"]);
    let (code, text, err) = run_args(&["--config", s(&cfg), "eval", "--class", "widget", "--group", "dent"]);
    assert_eq!(code, 0);
    assert_eq!(text.lines().count(), 3);
    let path = d.path().join("cache/reports/widget_dent_zs.json");
    assert!(err.contains("widget_dent_zs.json"));
    let parsed: EvalOutput = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(parsed.reports.len(), 1);
    assert_eq!(parsed.reports[0].group, "dent");
}

fn touch(root: &Path, rel: &str) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, b"not decoded by the stub encoder").unwrap();
}

fn mvtec_like_tree() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for i in 0..3 {
        touch(&data, &format!("carpet/train/good/{i:03}.png"));
        touch(&data, &format!("carpet/test/good/{i:03}.png"));
        touch(&data, &format!("toothbrush/train/good/{i:03}.png"));
        touch(&data, &format!("toothbrush/test/good/{i:03}.png"));
        touch(&data, &format!("toothbrush/test/defective/{i:03}.png"));
        for t in ["color", "cut", "hole", "metal_contamination", "thread", "combined"] {
            touch(&data, &format!("carpet/test/{t}/{i:03}.png"));
        }
    }
    let cfg = dir.path().join("nand.toml");
    fs::write(
        &cfg,
        "[dataset]\nroot = \"data\"\n[encoder]\nlayers = [[4, 4, 64]]\ntext_dim = 64\n[detector]\nmap_size = [16, 16]\n\
         [suppression]\nsize = [16, 16]\n",
    )
    .unwrap();
    (dir, cfg)
}

#[test]
fn eval_uses_group_table_and_reports_protocol_errors() {
    let (d, cfg) = mvtec_like_tree();
    run_args(&["--config", s(&cfg), "ingest"]);

    let out_file = d.path().join("carpet.json");
    let (code, text, err) = run_args(&["--config", s(&cfg), "eval", "--class", "carpet", "--out", s(&out_file)]);
    assert_eq!(code, 0, "{err}");
    let parsed: EvalOutput = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    let groups: Vec<&str> = parsed.reports.iter().map(|r| r.group.as_str()).collect();
    assert_eq!(groups, ["color", "cut", "metal", "thread"]);
    assert_eq!(text.lines().count(), 6);
    // combined images are never scored
    for r in &parsed.reports {
        assert!(r.scores.iter().all(|x| !x.image_id.contains("/combined/")));
        assert_eq!(r.scores.len(), 3 * 6);
    }

    let out_file = d.path().join("toothbrush.json");
    let (code, text, err) = run_args(&["--config", s(&cfg), "eval", "--class", "toothbrush", "--out", s(&out_file)]);
    assert_ne!(code, 0);
    assert!(text.is_empty());
    assert!(err.contains("toothbrush/defective"), "{err}");
    let parsed: EvalOutput = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    assert!(parsed.reports.is_empty());
    assert!(parsed.summary.is_none());
    assert_eq!(parsed.failures.len(), 1);
}

#[test]
fn bank_detector_after_build_bank() {
    let (d, cfg) = fixture(7);
    run_args(&["--config", s(&cfg), "ingest"]);
    let config = Config::load(Some(&cfg)).unwrap();
    let mut sink = (Vec::new(), Vec::new());
    let missing = commands::cmd_eval(
        &config,
        "widget",
        None,
        Some(DetectorChoice::Bank),
        Some(&d.path().join("x.json")),
        &mut sink.0,
        &mut sink.1,
    )
    .unwrap();
    assert_ne!(missing, 0, "no bank yet");

    let (_, out, _) = run_args(&["--config", s(&cfg), "build-bank", "--class", "widget", "--fraction", "0.5"]);
    // 4 train images of two 8x8 layers, bank built on layer 0
    assert!(out.starts_with("widget: kept 128 of 256 patches"), "{out}");
    let (code, _, _) = run_args(&["--config", s(&cfg), "eval", "--class", "widget", "--detector", "bank"]);
    assert_eq!(code, 0);
    assert!(d.path().join("cache/reports/widget_bank.json").is_file());

    // a later ingest keeps the bank
    run_args(&["--config", s(&cfg), "ingest"]);
    assert!(CacheManifest::require(&d.path().join("cache")).unwrap().banks.contains_key("widget"));
}

#[test]
fn preview_writes_maps() {
    let (d, cfg) = fixture(8);
    run_args(&["--config", s(&cfg), "ingest"]);
    let out = d.path().join("pv");
    let (code, text, _) = run_args(&[
        "--config",
        s(&cfg),
        "preview",
        "--class",
        "widget",
        "--image",
        "test/scuff/000.png",
        "--normality",
        "scuff",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    assert!(text.contains("widget/test/scuff/000.png"));
    for name in ["before", "sup", "after"] {
        let img = image::open(out.join(format!("{name}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("preview.json")).unwrap()).unwrap();
    assert!(p["score_after"].as_f64().unwrap() <= p["score_before"].as_f64().unwrap());
}

#[test]
fn binary_honours_env_overrides_and_exit_codes() {
    let (d, cfg) = fixture(9);
    let bin = env!("CARGO_BIN_EXE_nand");
    let other_cache = d.path().join("elsewhere");
    let st = Proc::new(bin)
        .args(["--config", s(&cfg), "ingest"])
        .env("NAND_CACHE_DIR", &other_cache)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(other_cache.join("manifest.json").is_file());
    assert!(!d.path().join("cache").exists());

    let st = Proc::new(bin)
        .args(["--config", s(&cfg), "eval", "--class", "nope"])
        .env("NAND_CACHE_DIR", &other_cache)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("unknown class nope"));

    let st = Proc::new(bin)
        .args(["--config", s(&cfg), "ingest"])
        .env("NAND_DETECTOR_CORESET_FRACTION", "1.5")
        .output()
        .unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("coreset_fraction"));
}
