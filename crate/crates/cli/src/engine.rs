//! A loaded checkpoint with its catalog, answering recommendation requests.
//!
//! Both the `recommend` command and `POST /api/recommend` go through
//! [`Engine::recommend`], so the two always agree.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use d3rec::checkpoint::Checkpoint;
use d3rec::dataset::{InteractionDataset, ItemCategoryMatrix, Split};
use d3rec::denoiser::Denoiser;
use d3rec::inference::{recommend, GuidanceRequest};
use d3rec::schedule::NoiseSchedule;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Body of a recommendation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendHttpRequest {
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub history: Option<Vec<String>>,
    /// Category name to nonnegative weight; normalized server side.
    #[serde(default)]
    pub target_categories: Option<BTreeMap<String, f64>>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub w: f64,
    #[serde(default = "twenty")]
    pub k: usize,
    #[serde(default)]
    pub t_prime: usize,
}

fn one() -> f64 {
    1.0
}

fn twenty() -> usize {
    20
}

impl Default for RecommendHttpRequest {
    fn default() -> Self {
        Self { user_id: None, history: None, target_categories: None, tau: 1.0, w: 0.0, k: 20, t_prime: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub id: String,
    pub score: f64,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListMetrics {
    pub entropy: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub items: Vec<RecommendedItem>,
    /// Guidance target actually used, aligned with the catalog category order.
    pub applied_target: Vec<f64>,
    /// Category distribution of the returned list, same order.
    pub category_distribution: Vec<f64>,
    pub metrics: ListMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub categories: Vec<String>,
    pub n_items: usize,
    /// Largest `k` a request may ask for.
    pub k_max: usize,
}

/// Request failures, mapped to HTTP statuses by the service.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestError {
    /// Unknown ids, invalid weights or parameters.
    Invalid(String),
    /// Nothing to derive a target from.
    EmptyHistory,
    /// The core failed numerically or internally.
    Internal(String),
}

impl std::fmt::Display for RequestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RequestError::Invalid(m) | RequestError::Internal(m) => f.write_str(m),
            RequestError::EmptyHistory => f.write_str("history is empty and no target_categories were given"),
        }
    }
}

impl From<RequestError> for CliError {
    fn from(e: RequestError) -> Self {
        match e {
            RequestError::Invalid(m) => CliError::Config(m),
            RequestError::EmptyHistory => CliError::Data(RequestError::EmptyHistory.to_string()),
            RequestError::Internal(m) => CliError::Numeric(m),
        }
    }
}

#[derive(Debug)]
pub struct Engine {
    model: Denoiser,
    schedule: NoiseSchedule,
    categories: ItemCategoryMatrix,
    item_ids: Vec<String>,
    item_index: HashMap<String, usize>,
    category_index: HashMap<String, usize>,
    /// Full (all-split) item history per user id.
    user_histories: HashMap<String, Vec<usize>>,
    model_hash: String,
}

impl Engine {
    /// Pairs a checkpoint with the dataset it was trained on. Item ids and
    /// category names must match the checkpoint exactly.
    pub fn new(ck: Checkpoint, ds: &InteractionDataset) -> Result<Self, CliError> {
        let m = &ck.manifest;
        if m.item_ids != ds.item_ids {
            return Err(CliError::Data(format!(
                "dataset items ({}) do not match the checkpoint ({})",
                ds.item_ids.len(),
                m.item_ids.len()
            )));
        }
        if m.category_names != ds.categories.names() {
            return Err(CliError::Data("dataset categories do not match the checkpoint".into()));
        }
        let model_hash = ck.model_hash()?;
        let schedule = ck.schedule()?;
        let user_histories = ds
            .user_ids
            .iter()
            .enumerate()
            .map(|(u, id)| (id.clone(), ds.user_items(u, &Split::ALL)))
            .collect();
        Ok(Self {
            model: ck.model,
            schedule,
            categories: ds.categories.clone(),
            item_index: ds.item_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect(),
            category_index: ds.categories.names().iter().enumerate().map(|(c, n)| (n.clone(), c)).collect(),
            item_ids: ds.item_ids.clone(),
            user_histories,
            model_hash,
        })
    }

    pub fn load(checkpoint_dir: &Path, ds: &InteractionDataset) -> Result<Self, CliError> {
        Self::new(Checkpoint::load(checkpoint_dir)?, ds)
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn catalog(&self) -> Catalog {
        Catalog {
            categories: self.categories.names().to_vec(),
            n_items: self.item_ids.len(),
            k_max: self.item_ids.len(),
        }
    }

    pub fn category_names(&self) -> &[String] {
        self.categories.names()
    }

    pub fn categories(&self) -> &ItemCategoryMatrix {
        &self.categories
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    fn history(&self, req: &RecommendHttpRequest) -> Result<Vec<usize>, RequestError> {
        match (&req.user_id, &req.history) {
            (Some(_), Some(_)) => Err(RequestError::Invalid("give either user_id or history, not both".into())),
            (Some(u), None) => self
                .user_histories
                .get(u)
                .cloned()
                .ok_or_else(|| RequestError::Invalid(format!("unknown user_id {u:?}"))),
            (None, Some(h)) => h
                .iter()
                .map(|id| self.item_index(id).ok_or_else(|| RequestError::Invalid(format!("unknown item id {id:?}"))))
                .collect(),
            (None, None) => Ok(Vec::new()),
        }
    }

    fn target(&self, weights: &BTreeMap<String, f64>) -> Result<Array1<f64>, RequestError> {
        let mut t = Array1::zeros(self.categories.n_categories());
        for (name, &v) in weights {
            let c = self
                .category_index
                .get(name)
                .ok_or_else(|| RequestError::Invalid(format!("unknown category {name:?}")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RequestError::Invalid(format!("weight for category {name:?} must be finite and nonnegative, got {v}")));
            }
            t[*c] = v;
        }
        if t.sum() <= 0.0 {
            return Err(RequestError::Invalid("target_categories weights are all zero".into()));
        }
        Ok(t)
    }

    pub fn recommend(&self, req: &RecommendHttpRequest) -> Result<RecommendResponse, RequestError> {
        if !(req.tau > 0.0 && req.tau.is_finite()) {
            return Err(RequestError::Invalid(format!("tau must be positive, got {}", req.tau)));
        }
        if !req.w.is_finite() {
            return Err(RequestError::Invalid("w must be finite".into()));
        }
        let steps = self.schedule.steps();
        if req.t_prime >= steps {
            return Err(RequestError::Invalid(format!("t_prime must be below {steps}, got {}", req.t_prime)));
        }
        let history = self.history(req)?;
        let target = req.target_categories.as_ref().map(|w| self.target(w)).transpose()?;
        if history.is_empty() && target.is_none() {
            return Err(RequestError::EmptyHistory);
        }
        let mut x = Array1::zeros(self.item_ids.len());
        for &i in &history {
            x[i] = 1.0;
        }
        let available = self.item_ids.len() - x.iter().filter(|&&v| v > 0.0).count();
        if req.k == 0 || req.k > available {
            return Err(RequestError::Invalid(format!("k must be in 1..={available}, got {}", req.k)));
        }
        let g = GuidanceRequest { history: x, target, tau: req.tau, w: req.w, k: req.k, t_prime: req.t_prime };
        let (list, applied) = recommend(&self.model, &self.schedule, &self.categories, &g).map_err(|e| match e {
            d3rec::Error::Contract(m) | d3rec::Error::Config(m) => RequestError::Invalid(m),
            other => RequestError::Internal(other.to_string()),
        })?;
        let names = self.categories.names();
        let items = list
            .items
            .iter()
            .zip(&list.scores)
            .map(|(&i, &score)| RecommendedItem {
                id: self.item_ids[i].clone(),
                score,
                categories: self.categories.categories_of(i).into_iter().map(|c| names[c].clone()).collect(),
            })
            .collect();
        Ok(RecommendResponse {
            items,
            applied_target: applied.to_vec(),
            category_distribution: list.category_distribution,
            metrics: ListMetrics { entropy: list.entropy, coverage: list.coverage },
        })
    }
}
