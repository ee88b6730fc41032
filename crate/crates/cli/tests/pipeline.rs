//! End-to-end runs of the `d3rec` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn d3rec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d3rec")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn small_toy() -> Value {
    json!({ "n_users": 120, "n_items": 80, "n_categories": 4, "concentration": 0.3, "interactions_per_user": 20, "seed": 5 })
}

fn train_section(epochs: usize) -> Value {
    json!({
        "epochs": epochs,
        "batch_size": 64,
        "learning_rate": 3e-3,
        "schedule": { "steps": 10, "noise_scale": 0.5, "noise_min": 0.01, "noise_max": 0.3 }
    })
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    let lines: Vec<&str> = s.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {s:?}");
    lines[0].to_string()
}

#[test]
fn toy_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let gen_cfg = write_config(tmp.path(), "gen.json", &json!({ "data": { "synthetic": small_toy() } }));
    let gen = stdout_json(&d3rec(&["gen-toy", "--config", gen_cfg.to_str().unwrap(), "--out", out_s]));
    assert_eq!(gen["n_users"], 120);
    assert_eq!(gen["n_categories"], 4);
    assert!(gen["test"].as_u64().unwrap() > 0);

    let dataset = out.join("dataset");
    let cfg = json!({
        "data": { "dataset": dataset },
        "model": { "hidden": 32, "latent": 16, "dropout": 0.5 },
        "train": train_section(3),
        "guidance": { "ks": [5, 10], "k": 10, "sweep_taus": [0.5, 1.0, 2.0] },
        "out_dir": out,
        "seed": 11
    });
    let cfg_path = write_config(tmp.path(), "run.json", &cfg);
    let c = cfg_path.to_str().unwrap();

    let trained = stdout_json(&d3rec(&["train", "--config", c]));
    let hash = trained["model_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert!(out.join("checkpoint/model.json").exists());
    assert!(out.join("config.json").exists());
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["losses"]["total"].as_f64().unwrap().is_finite());
    }

    // Same inputs and seed give the same checkpoint.
    let again = stdout_json(&d3rec(&["train", "--config", c]));
    assert_eq!(again["model_hash"], hash.as_str());

    let report = stdout_json(&d3rec(&["eval", "--config", c]));
    assert_eq!(report["split"], "test");
    for k in ["5", "10"] {
        let m = &report["per_k"][k];
        for key in ["recall", "ndcg", "entropy", "coverage"] {
            let v = m[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{key}@{k} = {v}");
        }
    }
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    stdout_json(&d3rec(&["sweep", "--config", c]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tau,recall,ndcg,entropy,coverage");
    assert_eq!(lines.len(), 4);

    let defaults = stdout_json(&d3rec(&["recommend", "--config", c, "--user", "u0"]));
    let explicit = stdout_json(&d3rec(&["recommend", "--config", c, "--user", "u0", "--tau", "1", "--w", "0"]));
    assert_eq!(defaults, explicit);
    assert_eq!(defaults["items"].as_array().unwrap().len(), 10);
    let target: f64 = defaults["applied_target"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((target - 1.0).abs() < 1e-12);
    let k3 = stdout_json(&d3rec(&["recommend", "--config", c, "--user", "u0", "--k", "3", "--w", "-0.5"]));
    assert_eq!(k3["items"].as_array().unwrap().len(), 3);
}

#[test]
fn untrained_checkpoint_still_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = json!({
        "data": { "synthetic": small_toy() },
        "model": { "hidden": 16, "latent": 8 },
        "train": train_section(1),
        "out_dir": out,
    });
    let c = write_config(tmp.path(), "run.json", &cfg);
    let c = c.to_str().unwrap();
    stdout_json(&d3rec(&["train", "--config", c]));

    // Replace the trained parameters with a fresh initialization.
    let ck = d3rec::checkpoint::Checkpoint::load(&out.join("checkpoint")).unwrap();
    let fresh = d3rec::denoiser::Denoiser::init(ck.manifest.denoiser, 99).unwrap();
    let m = ck.manifest;
    d3rec::checkpoint::Checkpoint::new(fresh, m.schedule, None, m.item_ids, m.category_names, 0)
        .unwrap()
        .save(&out.join("checkpoint"))
        .unwrap();

    let report = stdout_json(&d3rec(&["eval", "--config", c]));
    assert!(report["n_users_evaluated"].as_u64().unwrap() > 0);
    assert!(report["per_k"]["20"]["recall"].as_f64().unwrap().is_finite());
}

#[test]
fn seed_flag_overrides_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", &json!({ "data": { "synthetic": small_toy() } }));
    let c = cfg.to_str().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let out = tmp.path().join(name);
        let mut args = vec!["gen-toy", "--config", c, "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        stdout_json(&d3rec(&args));
        fs::read(out.join("dataset/train.tsv")).unwrap()
    };
    let a = run("a", None);
    assert_eq!(run("b", None), a, "reruns are identical");
    let c1 = run("c", Some("123"));
    assert_ne!(c1, a, "--seed reaches the generator");
    assert_eq!(run("d", Some("123")), c1);
}

#[test]
fn dataset_commands_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = write_config(tmp.path(), "gen.json", &json!({ "data": { "synthetic": small_toy() }, "out_dir": tmp.path().join("toy") }));
    stdout_json(&d3rec(&["gen-toy", "--config", gen.to_str().unwrap()]));

    let noisy_cfg = json!({ "data": { "dataset": tmp.path().join("toy/dataset"), "noise_ratio": 0.5 }, "out_dir": tmp.path().join("noisy") });
    let noisy = stdout_json(&d3rec(&["inject-noise", "--config", write_config(tmp.path(), "noise.json", &noisy_cfg).to_str().unwrap()]));
    assert!(noisy["added"].as_u64().unwrap() > 0);
    assert!(tmp.path().join("noisy/dataset/manifest.json").exists());

    let synth_cfg = json!({ "data": { "synthetic": small_toy() }, "out_dir": tmp.path().join("semi") });
    let semi = stdout_json(&d3rec(&["synth", "--config", write_config(tmp.path(), "synth.json", &synth_cfg).to_str().unwrap()]));
    let targets: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("semi/targets.json")).unwrap()).unwrap();
    let n = semi["n_users"].as_u64().unwrap() as usize;
    assert_eq!(targets.as_object().unwrap().len(), n);
    for t in targets.as_object().unwrap().values() {
        let s: f64 = t.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    // Targeted evaluation on the semi-synthetic data uses targets.json.
    let run = json!({
        "data": { "dataset": tmp.path().join("semi/dataset"), "targets": tmp.path().join("semi/targets.json") },
        "model": { "hidden": 16, "latent": 8 },
        "train": train_section(1),
        "guidance": { "w": 2.0, "ks": [10] },
        "out_dir": tmp.path().join("semi_run"),
    });
    let c = write_config(tmp.path(), "semi_run.json", &run);
    stdout_json(&d3rec(&["train", "--config", c.to_str().unwrap()]));
    let report = stdout_json(&d3rec(&["eval", "--config", c.to_str().unwrap()]));
    assert!(report["per_k"]["10"]["recall"].as_f64().is_some());
}

#[test]
fn failures_exit_with_classified_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let bad = write_config(tmp.path(), "bad.json", &json!({ "train": { "epochz": 1 } }));
    let out = d3rec(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_line(&out).contains("epochz"));

    let gammas = write_config(tmp.path(), "g.json", &json!({ "train": { "gamma_min": 2.0, "gamma_max": 2.0 } }));
    let out = d3rec(&["train", "--config", gammas.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_line(&out).contains("γ_min < γ_max"));

    let missing = write_config(tmp.path(), "m.json", &json!({ "data": { "dataset": tmp.path().join("nope") } }));
    let out = d3rec(&["eval", "--config", missing.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_line(&out).contains("data.dataset"));

    let out = d3rec(&["frobnicate", "--config", bad.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    stderr_line(&out);

    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("manifest.json"), "{ not json").unwrap();
    let data_err = write_config(tmp.path(), "d.json", &json!({ "data": { "dataset": broken } }));
    let out = d3rec(&["train", "--config", data_err.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3);
    stderr_line(&out);

    let nan = json!({
        "data": { "synthetic": small_toy() },
        "model": { "hidden": 16, "latent": 8 },
        "train": { "learning_rate": 1e300, "epochs": 2, "batch_size": 32 },
        "out_dir": tmp.path().join("nan"),
    });
    let out = d3rec(&["train", "--config", write_config(tmp.path(), "nan.json", &nan).to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stderr_line(&out).starts_with("error: numeric"));
}
