use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use caglow::image::GrayImage;
use caglow::Checkpoint;
use serde_json::Value;

const CONFIG: &str = r#"{
  "model": "caglow",
  "dataset": {"kind": "glyphs", "identities": 3, "attributes": ["thick", "invert"], "samples": 240, "size": 8},
  "flow": {"scales": 2, "steps": 1, "coupling_width": 16},
  "condition": {"codes": 1, "noise": 4, "encoder": {"embed_dim": 4, "hidden": [16]}, "supervision": {"hidden": [16]}},
  "train": {"epochs_flow": 1, "epochs_cond": 1, "batch_size": 32},
  "oracle": {"hidden": 16, "max_epochs": 2, "patience": 1, "batch_size": 32, "lr": 0.001, "identity_floor": 0.0, "attribute_floor": 0.0},
  "sweep": {"per_combination": 1, "amp_per_identity": 4},
  "seed": 5
}"#;

fn caglow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caglow"))
        .args(args)
        .env_remove("CAGFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config path and run directory holding trained flow and conditional checkpoints.
fn trained() -> &'static (String, PathBuf) {
    static RUN: OnceLock<(String, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = scratch("trained");
        let cfg = write_config(&dir, CONFIG);
        let out = dir.join("run");
        ok(caglow(&["train-flow", "-c", &cfg, "--out", s(&out)]));
        let flow = out.join("checkpoints/flow.ckpt");
        ok(caglow(&["train-cond", "-c", &cfg, "--out", s(&out), "--flow-ckpt", s(&flow)]));
        (cfg, out)
    })
}

fn conditional() -> String {
    trained().1.join("checkpoints/conditional.ckpt").to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = scratch("determinism");
    let cfg = write_config(&dir, CONFIG);
    for run in ["a", "b"] {
        ok(caglow(&["train-flow", "-c", &cfg, "--out", s(&dir.join(run))]));
    }
    for f in ["checkpoints/flow.ckpt", "logs/flow.jsonl", "config.digest"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    ok(caglow(&["train-flow", "-c", &cfg, "--seed", "6", "--out", s(&dir.join("c"))]));
    let a = std::fs::read(dir.join("a/checkpoints/flow.ckpt")).unwrap();
    let c = std::fs::read(dir.join("c/checkpoints/flow.ckpt")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = scratch("zero");
    let cfg = write_config(&dir, CONFIG);
    let out = dir.join("run");
    ok(caglow(&["train-flow", "-c", &cfg, "--epochs", "0", "--out", s(&out)]));
    let ck = Checkpoint::load(&out.join("checkpoints/flow.ckpt")).unwrap();
    assert_eq!(ck.meta.stage, "flow");
    assert_eq!(ck.meta.step, 0);
    let log = std::fs::read_to_string(out.join("logs/flow.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1, "only the digest header: {log}");
    assert!(log.contains("config_digest"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = scratch("usage");
    let cfg = write_config(&dir, CONFIG);
    assert_eq!(code(&caglow(&["train-cond", "-c", &cfg])), 2);
    let bad = dir.join("bad.json");
    std::fs::write(&bad, CONFIG.replace("\"seed\"", "\"sede\"")).unwrap();
    assert_eq!(code(&caglow(&["train-flow", "-c", s(&bad)])), 2);
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&caglow(&["train-flow", "-c", s(&bad)])), 2);
    assert_eq!(code(&caglow(&["train-flow", "-c", s(&dir.join("missing.json"))])), 2);
    assert_eq!(code(&caglow(&["frobnicate"])), 2);
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = scratch("seed");
    let cfg = write_config(&dir, CONFIG);
    let seed_of = |out: &str, flag: Option<&str>, env: Option<&str>| -> u64 {
        let out = dir.join(out);
        let mut c = Command::new(env!("CARGO_BIN_EXE_caglow"));
        c.args(["train-flow", "-c", &cfg, "--epochs", "0", "--out", s(&out)]);
        c.env_remove("CAGFLOW_SEED");
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        if let Some(e) = env {
            c.env("CAGFLOW_SEED", e);
        }
        ok(c.output().unwrap());
        read_json(&out.join("config.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of("file", None, None), 5);
    assert_eq!(seed_of("env", None, Some("11")), 11);
    assert_eq!(seed_of("flag", Some("13"), Some("11")), 13);
    let o = Command::new(env!("CARGO_BIN_EXE_caglow"))
        .args(["train-flow", "-c", &cfg, "--epochs", "0", "--out", s(&dir.join("x"))])
        .env("CAGFLOW_SEED", "eleven")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn sample_grid_writes_image_and_sidecar() {
    let (cfg, out) = trained();
    ok(caglow(&[
        "sample", "-c", cfg, "--out", s(out), "--checkpoint", &conditional(), "--n", "16", "--grid", "4x4",
        "--condition", "id=1,attr:thick=1,cu=0.5", "--name", "grid",
    ]));
    let img = GrayImage::from_pgm(&std::fs::read(out.join("samples/grid.pgm")).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (4 * 8 + 3, 4 * 8 + 3));
    let side = read_json(&out.join("samples/grid.json"));
    assert_eq!(side["model"], "caglow");
    assert_eq!(side["grid"], "4x4");
    let cells = side["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 16);
    for c in cells {
        assert_eq!(c["identity"], 1);
        assert_eq!(c["attributes"]["thick"], 1.0);
        assert_eq!(c["attributes"]["invert"], 0.0);
        assert_eq!(c["codes"][0], 0.5);
        assert_eq!(c["noise"].as_array().unwrap().len(), 4);
    }
    assert_ne!(cells[0]["noise"], cells[1]["noise"]);
}

#[test]
fn sample_rejects_bad_conditions() {
    let (cfg, out) = trained();
    let ck = conditional();
    for cond in ["id=3", "attr:bold=1", "cu:1=0.2", "colour=2"] {
        let o = caglow(&["sample", "-c", cfg, "--out", s(out), "--checkpoint", &ck, "--condition", cond]);
        assert_eq!(code(&o), 2, "{cond}");
    }
    let o = caglow(&["sample", "-c", cfg, "--out", s(out), "--checkpoint", &ck, "--n", "5", "--grid", "2x2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn interpolation_endpoints_match_samples() {
    let (cfg, out) = trained();
    let ck = conditional();
    let from = "id=0,attr:invert=1,cu=-1";
    let to = "id=2,attr:thick=1,cu=1";
    ok(caglow(&[
        "interpolate", "-c", cfg, "--out", s(out), "--checkpoint", &ck, "--steps", "5", "--from", from, "--to", to,
        "--name", "path",
    ]));
    for (cond, name) in [(from, "start"), (to, "end")] {
        ok(caglow(&[
            "sample", "-c", cfg, "--out", s(out), "--checkpoint", &ck, "--n", "1", "--condition", cond, "--name", name,
        ]));
    }
    let load = |n: &str| GrayImage::from_pgm(&std::fs::read(out.join(format!("samples/{n}.pgm"))).unwrap()).unwrap();
    let (path, start, end) = (load("path"), load("start"), load("end"));
    assert_eq!((path.width, path.height), (5 * 8 + 4, 8));
    let cell = |img: &GrayImage, col: usize| -> Vec<u8> {
        (0..8).flat_map(|y| img.pixels[y * img.width + col * 9..][..8].to_vec()).collect()
    };
    assert_eq!(cell(&path, 0), start.pixels);
    assert_eq!(cell(&path, 4), end.pixels);
    let side = read_json(&out.join("samples/path.json"));
    let cells = side["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 5);
    assert_eq!(cells[2]["codes"][0], 0.0);
    assert_eq!(cells[0]["noise"], cells[4]["noise"]);
}

#[test]
fn manipulate_writes_one_frame_per_edit() {
    let (cfg, out) = trained();
    ok(caglow(&[
        "manipulate", "-c", cfg, "--out", s(out), "--checkpoint", &conditional(), "--attrs", "thick,invert,-thick",
        "--condition", "id=1", "--name", "edits",
    ]));
    let img = GrayImage::from_pgm(&std::fs::read(out.join("samples/edits.pgm")).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (4 * 8 + 3, 8));
    let side = read_json(&out.join("samples/edits.json"));
    assert_eq!(side["edits"], serde_json::json!(["+thick", "+invert", "-thick"]));
    let flow = out.join("checkpoints/flow.ckpt");
    ok(caglow(&[
        "manipulate", "-c", cfg, "--out", s(out), "--checkpoint", s(&flow), "--attrs", "invert", "--index", "2",
        "--name", "prestore",
    ]));
    let o = caglow(&["manipulate", "-c", cfg, "--out", s(out), "--checkpoint", s(&flow), "--attrs", "bold"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_single_metric_reports_only_it() {
    let (cfg, out) = trained();
    let o = ok(caglow(&[
        "eval", "-c", cfg, "--out", s(out), "--checkpoint", &conditional(), "--metric", "amp", "--train-oracle",
    ]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oracle validation"));
    let report = read_json(&out.join("reports/caglow.json"));
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["amp", "config_digest", "model", "oracle"]);
    assert!(out.join("checkpoints/oracle.ckpt").exists());
    let oracle = out.join("checkpoints/oracle.ckpt");
    ok(caglow(&[
        "eval", "-c", cfg, "--out", s(out), "--checkpoint", &conditional(), "--metric", "accuracy,divergence",
        "--oracle", s(&oracle),
    ]));
    let report = read_json(&out.join("reports/caglow.json"));
    for k in ["identity_accuracy", "attribute_accuracy", "cluster_divergence"] {
        assert!(report.get(k).is_some(), "{k}");
    }
    assert!(report.get("amp").is_none());
    let o = caglow(&["eval", "-c", cfg, "--out", s(out), "--checkpoint", &conditional(), "--metric", "speed", "--train-oracle"]);
    assert_eq!(code(&o), 2);
    let o = caglow(&["eval", "-c", cfg, "--out", s(out), "--checkpoint", &conditional()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_with_weak_oracle_exits_3() {
    let (_, out) = trained();
    let dir = scratch("weak");
    let strict = CONFIG
        .replace("\"identity_floor\": 0.0", "\"identity_floor\": 1.0")
        .replace("\"max_epochs\": 2", "\"max_epochs\": 1")
        .replace("\"hidden\": 16, \"max", "\"hidden\": 1, \"max");
    let cfg = write_config(&dir, &strict);
    let o = caglow(&[
        "eval", "-c", &cfg, "--out", s(&dir.join("run")), "--checkpoint", &conditional(), "--train-oracle",
    ]);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.join("run/reports").exists());
    assert!(out.join("checkpoints/conditional.ckpt").exists());
}
