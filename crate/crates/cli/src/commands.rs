//! Subcommands. Each writes its artifacts under `out_dir` and returns the
//! JSON summary printed on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use d3rec::checkpoint::Checkpoint;
use d3rec::dataset::{
    binarize, build_semi_synthetic, chronological_split, from_events, generate_toy, inject_noise, k_core_filter,
    load_dataset, read_categories, read_events, save_dataset, InteractionDataset, Split, SyntheticSpec,
};
use d3rec::denoiser::Denoiser;
use d3rec::metrics::{evaluate, pareto_sweep, sweep_to_csv, EvalOptions, TargetSource};
use d3rec::training::Trainer;
use ndarray::Array1;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::engine::{Engine, RecommendHttpRequest};
use crate::CliError;

pub const DATASET_DIR: &str = "dataset";
pub const TARGETS_FILE: &str = "targets.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const RESOLVED_CONFIG: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Command line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
    pub w: Option<f64>,
    pub k: Option<usize>,
    pub port: Option<u16>,
}

impl Overrides {
    /// Applies the flags and re-validates. `--seed` replaces every seed in
    /// the config, including the synthetic generator's.
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig, CliError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
            if let Some(spec) = cfg.data.synthetic.as_mut() {
                spec.seed = s;
            }
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = self.tau {
            cfg.guidance.tau = t;
        }
        if let Some(w) = self.w {
            cfg.guidance.w = w;
        }
        if let Some(k) = self.k {
            cfg.guidance.k = k;
        }
        if let Some(p) = self.port {
            cfg.serve.port = p;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Toy generator settings used when `data.synthetic` is absent.
pub fn default_toy_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec { n_users: 500, n_items: 300, n_categories: 6, concentration: 0.3, interactions_per_user: 40, seed }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))
}

/// Loads the configured interaction source. Raw and synthetic sources are
/// split chronologically when `split` is set; saved datasets are used as is.
pub fn load_source(cfg: &RunConfig, split: bool) -> Result<InteractionDataset, CliError> {
    let d = &cfg.data;
    let [a, b, c] = d.split;
    let raw = if let Some(dir) = &d.dataset {
        return Ok(load_dataset(dir)?);
    } else if let (Some(ev), Some(cats)) = (&d.events, &d.categories) {
        let mut events = read_events(ev)?;
        if let Some(scale) = d.rating_scale {
            events = binarize(events, scale)?;
        }
        let (ds, report) = from_events(&events, &read_categories(cats)?)?;
        log::info!("load report: {}", serde_json::to_string(&report).unwrap_or_default());
        k_core_filter(&ds, d.k_core)?
    } else if let Some(spec) = &d.synthetic {
        generate_toy(spec)?
    } else {
        return Err(CliError::Config("data: no source configured (set dataset, events or synthetic)".into()));
    };
    if split {
        Ok(chronological_split(&raw, (a, b, c), None)?)
    } else {
        Ok(raw)
    }
}

fn require_split(ds: &InteractionDataset) -> Result<(), CliError> {
    if ds.is_split() {
        Ok(())
    } else {
        Err(CliError::Data("dataset has no valid/test interactions; split it first".into()))
    }
}

fn summarize(ds: &InteractionDataset, dir: &Path) -> Value {
    json!({
        "dataset": dir,
        "n_users": ds.n_users(),
        "n_items": ds.n_items(),
        "n_categories": ds.n_categories(),
        "n_interactions": ds.n_interactions(),
        "train": ds.split_count(Split::Train),
        "valid": ds.split_count(Split::Valid),
        "test": ds.split_count(Split::Test),
    })
}

pub fn gen_toy(cfg: &RunConfig) -> Result<Value, CliError> {
    let spec = cfg.data.synthetic.clone().unwrap_or_else(|| default_toy_spec(cfg.seed));
    let [a, b, c] = cfg.data.split;
    let ds = chronological_split(&generate_toy(&spec)?, (a, b, c), None)?;
    let dir = cfg.out_dir.join(DATASET_DIR);
    save_dataset(&ds, &dir)?;
    Ok(summarize(&ds, &dir))
}

pub fn inject(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_source(cfg, true)?;
    let noisy = inject_noise(&ds, cfg.data.noise_ratio, cfg.seed)?;
    let dir = cfg.out_dir.join(DATASET_DIR);
    save_dataset(&noisy, &dir)?;
    let mut s = summarize(&noisy, &dir);
    s["noise_ratio"] = json!(cfg.data.noise_ratio);
    s["added"] = json!(noisy.n_interactions() - ds.n_interactions());
    Ok(s)
}

/// Builds the preference-shift dataset and writes each user's target
/// preference to `targets.json` (user id to category weights).
pub fn synth(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_source(cfg, false)?;
    let semi = build_semi_synthetic(&ds)?;
    let dir = cfg.out_dir.join(DATASET_DIR);
    save_dataset(&semi.dataset, &dir)?;
    let targets: BTreeMap<&str, Vec<f64>> = semi
        .dataset
        .user_ids
        .iter()
        .zip(&semi.target_prefs)
        .map(|(u, t)| (u.as_str(), t.to_vec()))
        .collect();
    write(&cfg.out_dir.join(TARGETS_FILE), to_json(&targets)?)?;
    write(&cfg.out_dir.join("synth_report.json"), to_json(&semi.report)?)?;
    let mut s = summarize(&semi.dataset, &dir);
    s["dropped_users"] = json!(semi.report.dropped_users.len());
    Ok(s)
}

pub fn train(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_source(cfg, true)?;
    require_split(&ds)?;
    let model = Denoiser::init(cfg.model.denoiser(ds.n_items(), ds.n_categories()), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    write(&cfg.out_dir.join(RESOLVED_CONFIG), to_json(cfg)?)?;
    let log_path = cfg.out_dir.join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", log_path.display())))?;
    let mut log_err = None;
    let outcome = trainer.fit(&ds, cfg.guidance.w, cfg.guidance.t_prime, |rec| {
        let line = serde_json::to_string(rec).unwrap_or_default();
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(CliError::Data(format!("cannot write {}: {e}", log_path.display())));
    }
    let ck = Checkpoint::new(
        trainer.model,
        cfg.train.schedule,
        Some(cfg.train.clone()),
        ds.item_ids.clone(),
        ds.categories.names().to_vec(),
        outcome.best_epoch,
    )?;
    let dir = cfg.checkpoint_dir();
    let hash = ck.save(&dir)?;
    let last = outcome.history.last().map(|r| r.losses.total);
    Ok(json!({
        "checkpoint": dir,
        "model_hash": hash,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "final_loss": last,
    }))
}

fn load_targets(path: &Path, ds: &InteractionDataset) -> Result<Vec<Array1<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    ds.user_ids
        .iter()
        .map(|u| {
            let t = map.get(u).ok_or_else(|| CliError::Data(format!("{}: no target for user {u:?}", path.display())))?;
            if t.len() != ds.n_categories() {
                return Err(CliError::Data(format!("{}: target for {u:?} has {} entries", path.display(), t.len())));
            }
            Ok(Array1::from(t.clone()))
        })
        .collect()
}

/// Evaluates the checkpoint on the test split. With `data.targets` set the
/// listed per-user targets guide inference instead of the tempered history.
pub fn eval(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_source(cfg, true)?;
    let ck = Checkpoint::load(&cfg.checkpoint_dir())?;
    Engine::new(ck.clone(), &ds)?;
    let sched = ck.schedule()?;
    let g = &cfg.guidance;
    let targets = cfg.data.targets.as_deref().map(|p| load_targets(p, &ds)).transpose()?;
    let target = match &targets {
        Some(t) => TargetSource::Explicit(t),
        None => TargetSource::History { tau: g.tau },
    };
    let report = evaluate(
        &ck.model,
        &sched,
        &ds,
        &EvalOptions { split: Split::Test, ks: &g.ks, w: g.w, t_prime: g.t_prime, target, keep_per_user: false },
    )?;
    let value = serde_json::to_value(&report).map_err(|e| CliError::Data(e.to_string()))?;
    write(&cfg.out_dir.join(REPORT_FILE), to_json(&value)?)?;
    Ok(value)
}

pub fn sweep(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_source(cfg, true)?;
    let ck = Checkpoint::load(&cfg.checkpoint_dir())?;
    Engine::new(ck.clone(), &ds)?;
    let g = &cfg.guidance;
    let rows = pareto_sweep(&ck.model, &ck.schedule()?, &ds, Split::Test, &g.sweep_taus, g.w, g.t_prime)?;
    let path = cfg.out_dir.join(SWEEP_FILE);
    write(&path, sweep_to_csv(&rows))?;
    Ok(json!({ "sweep": path, "rows": rows }))
}

/// Recommends for a known user from their full history.
pub fn recommend_user(cfg: &RunConfig, user: &str) -> Result<Value, CliError> {
    let ds = load_source(cfg, true)?;
    let engine = Engine::load(&cfg.checkpoint_dir(), &ds)?;
    let g = &cfg.guidance;
    let req = RecommendHttpRequest {
        user_id: Some(user.to_string()),
        tau: g.tau,
        w: g.w,
        k: g.k,
        t_prime: g.t_prime,
        ..Default::default()
    };
    let resp = engine.recommend(&req)?;
    serde_json::to_value(&resp).map_err(|e| CliError::Data(e.to_string()))
}
