use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ldm3d(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldm3d"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_str(stdout.trim()).expect("one JSON document on stdout")
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.trim().lines().count(), 1, "{stdout}");
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(v["message"].is_string());
    v
}

const TINY: &str = r#"{
  "dataset": {"family": "spheres", "num_shapes": 3, "samples_per_shape": 2000, "held_out": 3},
  "autodecoder": {"latent_dim": 8, "hidden_dim": 16, "num_layers": 4, "skip_layer": 3,
                  "epochs": 4, "batch_shapes": 2, "points_per_shape": 256},
  "reconstruct": {"iterations": 5, "points_per_step": 256},
  "diffusion": {"latent_dim": 8, "hidden_dim": 16, "num_layers": 4, "time_embed_dim": 8,
                "schedule": {"steps": 40, "beta_start": 0.0025, "beta_end": 0.3},
                "epochs": 3, "batch_size": 2},
  "mesh": {"resolution": 16},
  "metrics": {"points_per_cloud": 64, "num_generated": 3}
}"#;

#[test]
fn print_defaults_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for profile in ["desk", "paper-fidelity"] {
        let first = ldm3d(&["config", "print-defaults", "--profile", profile], dir.path());
        let v = ok_json(&first);
        assert_eq!(v["profile"], profile);
        let cfg = dir.path().join(format!("{profile}.json"));
        std::fs::write(&cfg, &first.stdout).unwrap();
        let second = ldm3d(&["config", "print-defaults", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(ok_json(&second), v);
        assert_eq!(first.stdout, second.stdout);
    }
}

#[test]
fn usage_and_config_errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(err_json(&ldm3d(&["frobnicate"], dir.path()))["error"], "usage");
    assert_eq!(err_json(&ldm3d(&["generate", "--n", "2"], dir.path()))["error"], "usage");

    let cfg = dir.path().join("typo.json");
    std::fs::write(&cfg, r#"{"autodecoder": {"hiden_dim": 3}}"#).unwrap();
    let out = ldm3d(&["dataset", "build", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(err_json(&out)["error"], "config");

    let missing = ldm3d(&["train-autodecoder", "--data", "nowhere"], dir.path());
    assert_eq!(err_json(&missing)["error"], "io");
}

#[test]
fn tiny_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.json"), TINY).unwrap();
    let run = |args: &[&str]| {
        let mut full: Vec<&str> = vec!["--config", "tiny.json", "--seed", "3"];
        full.extend_from_slice(args);
        ldm3d(&full, root)
    };

    let v = ok_json(&run(&["--out", "data", "dataset", "build"]));
    assert_eq!(v["train"], 3);
    assert!(root.join("data/dataset.json").exists());
    assert!(root.join("data/bank_0002.sdf").exists());
    assert!(root.join("data/held_out/shape_002.obj").exists());

    ok_json(&run(&["--out", "ad", "train-autodecoder", "--data", "data"]));
    let history: Vec<f64> = serde_json::from_slice(&std::fs::read(root.join("ad/autodecoder_history.json")).unwrap()).unwrap();
    assert_eq!(history.len(), 4);
    ok_json(&run(&["--out", "diff", "train-diffusion", "--autodecoder", "ad/autodecoder.ckpt"]));

    let gen = |out: &str| {
        ok_json(&run(&[
            "--out",
            out,
            "generate",
            "--autodecoder",
            "ad/autodecoder.ckpt",
            "--diffusion",
            "diff/diffusion.ckpt",
            "--n",
            "2",
        ]))
    };
    gen("g1");
    gen("g2");
    for f in ["gen_000.obj", "gen_001.obj", "latents.json"] {
        assert_eq!(std::fs::read(root.join("g1").join(f)).unwrap(), std::fs::read(root.join("g2").join(f)).unwrap(), "{f}");
    }

    let report = ok_json(&run(&["--out", "eval", "evaluate", "--gen", "data/held_out", "--ref", "data/held_out", "--csv"]));
    assert_eq!(report["metrics"]["mmd_cd"], 0.0);
    assert_eq!(report["metrics"]["cov_cd"], 100.0);
    assert!(root.join("eval/report.json").exists());
    assert!(root.join("eval/cd_gen_ref.csv").exists());

    ok_json(&run(&[
        "--out",
        "ex",
        "explore",
        "--autodecoder",
        "ad/autodecoder.ckpt",
        "--diffusion",
        "diff/diffusion.ckpt",
        "--t-noise",
        "5",
        "--k",
        "2",
    ]));
    let manifest: Value = serde_json::from_slice(&std::fs::read(root.join("ex/manifest.json")).unwrap()).unwrap();
    let vars = manifest["variations"].as_array().unwrap();
    assert_eq!(vars.len(), 2);
    assert_eq!(vars[1]["parent"], "source.obj");
    assert_eq!(vars[1]["t_noise"], 5);
    assert_eq!(vars[1]["seed"], 3);
    assert!(root.join("ex/var_001.obj").exists());

    let nov = ok_json(&run(&[
        "--out",
        "nov",
        "novelty",
        "--autodecoder",
        "ad/autodecoder.ckpt",
        "--latents",
        "g1/latents.json",
        "--k",
        "2",
    ]));
    assert_eq!(nov["novelty"].as_array().unwrap().len(), 2);

    let rec = ok_json(&run(&[
        "--out",
        "rec",
        "reconstruct",
        "--autodecoder",
        "ad/autodecoder.ckpt",
        "--mesh",
        "data/held_out/shape_000.obj",
    ]));
    assert!(rec["clamped_l1"].as_f64().unwrap().is_finite());

    // wrong checkpoint kind
    let wrong = run(&[
        "generate",
        "--autodecoder",
        "diff/diffusion.ckpt",
        "--diffusion",
        "diff/diffusion.ckpt",
    ]);
    assert_eq!(err_json(&wrong)["error"], "kind-mismatch");

    // flipped blob byte
    let mut bytes = std::fs::read(root.join("ad/autodecoder.ckpt")).unwrap();
    let n = bytes.len();
    bytes[n - 40] ^= 1;
    std::fs::write(root.join("bad.ckpt"), bytes).unwrap();
    let bad = run(&["novelty", "--autodecoder", "bad.ckpt", "--latents", "g1/latents.json"]);
    let e = err_json(&bad);
    assert_eq!(e["error"], "checksum");
    assert!(e["message"].as_str().unwrap().contains("offset"));
}
