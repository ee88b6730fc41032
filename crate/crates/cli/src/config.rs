//! JSON run configuration.
//!
//! Every section has defaults, so `{}` is a complete config. Unknown keys
//! are rejected, and errors carry the dotted path of the offending key.

use std::path::{Path, PathBuf};

use d3rec::dataset::SyntheticSpec;
use d3rec::denoiser::DenoiserConfig;
use d3rec::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where interactions come from. At most one source may be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// A directory written by `save_dataset` (gen-toy, synth, inject-noise).
    pub dataset: Option<PathBuf>,
    /// `user<TAB>item[<TAB>rating[<TAB>timestamp]]` lines.
    pub events: Option<PathBuf>,
    /// `item<TAB>cat1|cat2` lines.
    pub categories: Option<PathBuf>,
    /// Ratings above `rating_scale / 2` count as positives.
    pub rating_scale: Option<f64>,
    pub k_core: usize,
    pub synthetic: Option<SyntheticSpec>,
    /// Train / valid / test ratios for raw or synthetic sources.
    pub split: [f64; 3],
    /// Fraction of false positives added by `inject-noise`.
    pub noise_ratio: f64,
    /// Per-user targets written by `synth`; `eval` then guides with them.
    pub targets: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            events: None,
            categories: None,
            rating_scale: None,
            k_core: 20,
            synthetic: None,
            split: [0.6, 0.2, 0.2],
            noise_ratio: 0.3,
            targets: None,
        }
    }
}

/// Network sizes; item and category counts come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub latent: usize,
    pub step_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DenoiserConfig::new(1, 1);
        Self {
            hidden: d.hidden,
            latent: d.latent,
            step_embed_dim: d.step_embed_dim,
            cond_embed_dim: d.cond_embed_dim,
            dropout: d.dropout,
        }
    }
}

impl ModelConfig {
    pub fn denoiser(&self, n_items: usize, n_categories: usize) -> DenoiserConfig {
        DenoiserConfig {
            n_items,
            n_categories,
            hidden: self.hidden,
            latent: self.latent,
            step_embed_dim: self.step_embed_dim,
            cond_embed_dim: self.cond_embed_dim,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub tau: f64,
    pub w: f64,
    pub t_prime: usize,
    pub k: usize,
    pub ks: Vec<usize>,
    /// Temperatures used by `sweep`.
    pub sweep_taus: Vec<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            w: 0.0,
            t_prime: 0,
            k: 20,
            ks: vec![10, 20],
            sweep_taus: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub port: u16,
    /// Origin allowed by CORS; any origin when absent.
    pub allowed_origin: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { port: 8080, allowed_origin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    /// `train.seed` is ignored in favour of the top-level `seed`.
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub out_dir: PathBuf,
    /// Checkpoint directory; defaults to `<out_dir>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
    /// The single source of randomness: model init, training and, when
    /// given on the command line, the synthetic generator.
    pub seed: u64,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            guidance: GuidanceConfig::default(),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            seed: TrainConfig::default().seed,
            serve: ServeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint"))
    }

    /// Invariants that serde cannot express; errors name the key.
    pub fn validate(&self) -> Result<(), CliError> {
        let key = |k: &str, e: d3rec::Error| CliError::Config(format!("{k}: {e}"));
        self.train.validate().map_err(|e| key("train", e))?;
        self.model.denoiser(1, 1).validate().map_err(|e| key("model", e))?;
        if let Some(s) = &self.data.synthetic {
            s.validate().map_err(|e| key("data.synthetic", e))?;
        }
        let g = &self.guidance;
        if !(g.tau > 0.0 && g.tau.is_finite()) {
            return Err(CliError::Config(format!("guidance.tau: must be positive, got {}", g.tau)));
        }
        if !g.w.is_finite() {
            return Err(CliError::Config("guidance.w: must be finite".into()));
        }
        if g.t_prime >= self.train.schedule.steps {
            return Err(CliError::Config(format!(
                "guidance.t_prime: must be below train.schedule.steps ({})",
                self.train.schedule.steps
            )));
        }
        if g.k == 0 || g.ks.is_empty() || g.ks.contains(&0) {
            return Err(CliError::Config("guidance.k / guidance.ks: values must be positive".into()));
        }
        if g.sweep_taus.is_empty() || g.sweep_taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("guidance.sweep_taus: need a nonempty list of positive values".into()));
        }
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("data.split: ratios must lie in [0, 1] and sum to 1, got {:?}", self.data.split)));
        }
        if !(0.0..=1.0).contains(&self.data.noise_ratio) {
            return Err(CliError::Config("data.noise_ratio: must lie in [0, 1]".into()));
        }
        let sources = [self.data.dataset.is_some(), self.data.events.is_some(), self.data.synthetic.is_some()];
        if sources.iter().filter(|s| **s).count() > 1 {
            return Err(CliError::Config("data: set only one of dataset, events, synthetic".into()));
        }
        if self.data.events.is_some() != self.data.categories.is_some() {
            return Err(CliError::Config("data.categories: events and categories must be given together".into()));
        }
        if self.train.schedule.steps > 100 {
            log::warn!("train.schedule.steps = {} exceeds 100", self.train.schedule.steps);
        }
        Ok(())
    }
}

impl RunConfig {
    /// Every input path the config references must exist when a command runs.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let d = &self.data;
        let named = [("data.dataset", &d.dataset), ("data.events", &d.events), ("data.categories", &d.categories), ("data.targets", &d.targets)];
        for (key, path) in named {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}
