//! Ranking accuracy and category diversity.
//!
//! Recall and NDCG use binary relevance against the held-out split. Entropy
//! and coverage are computed on the category distribution of the top-K list
//! and are normalized to `[0, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{preference_of_items, InteractionDataset, Split};
use crate::error::{ensure, Result};
use crate::inference::{reverse_denoise, temper_preference, top_k_indices, Corruption, X0Predictor};
use crate::nnet::Tensor2;
use crate::schedule::NoiseSchedule;

/// `|topk[..k] ∩ test| / min(k, |test|)`.
pub fn recall_at_k(topk: &[usize], test: &HashSet<usize>, k: usize) -> f64 {
    let denom = k.min(test.len());
    if denom == 0 {
        return 0.0;
    }
    let hits = topk.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / denom as f64
}

/// Binary-relevance NDCG truncated at `k`.
pub fn ndcg_at_k(topk: &[usize], test: &HashSet<usize>, k: usize) -> f64 {
    let ideal = k.min(test.len());
    if ideal == 0 {
        return 0.0;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..ideal).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    dcg / idcg
}

/// Shannon entropy of `y` divided by `ln |C|`; zero when `|C| = 1`.
pub fn entropy_at_k(y: ArrayView1<'_, f64>, n_categories: usize) -> f64 {
    if n_categories <= 1 {
        return 0.0;
    }
    let h: f64 = y.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (n_categories as f64).ln()).clamp(0.0, 1.0)
}

/// Fraction of categories with nonzero mass.
pub fn coverage_at_k(y: ArrayView1<'_, f64>, n_categories: usize) -> f64 {
    if n_categories == 0 {
        return 0.0;
    }
    y.iter().filter(|&&p| p > 0.0).count() as f64 / n_categories as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub entropy: f64,
    pub coverage: f64,
}

impl KMetrics {
    fn add(&mut self, o: &KMetrics) {
        self.recall += o.recall;
        self.ndcg += o.ndcg;
        self.entropy += o.entropy;
        self.coverage += o.coverage;
    }

    fn scale(&mut self, s: f64) {
        self.recall *= s;
        self.ndcg *= s;
        self.entropy *= s;
        self.coverage *= s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub per_k: BTreeMap<usize, KMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub entropy: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub per_k: BTreeMap<usize, KMetrics>,
    pub n_users_evaluated: usize,
    pub n_users_skipped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_user: Vec<UserMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

impl MetricsReport {
    /// Metrics at `k`; panics if `k` was not evaluated.
    pub fn at(&self, k: usize) -> KMetrics {
        self.per_k[&k]
    }
}

/// Items masked from ranking when evaluating `split`.
pub fn history_splits(split: Split) -> &'static [Split] {
    match split {
        Split::Test => &[Split::Train, Split::Valid],
        _ => &[Split::Train],
    }
}

/// Scores `users` in chunks; the scorer receives the user indices and their
/// train-history rows and returns one score row per user.
///
/// Users whose eval split is empty are skipped and counted.
pub fn evaluate_scores<S>(
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
    users: &[usize],
    keep_per_user: bool,
    scorer: S,
) -> Result<MetricsReport>
where
    S: Fn(&[usize], &Tensor2) -> Result<Tensor2> + Sync,
{
    ensure!(!ks.is_empty() && ks.iter().all(|&k| k >= 1), Contract, "K list must contain positive values");
    let eligible: Vec<usize> = users
        .iter()
        .copied()
        .filter(|&u| !ds.user_items(u, &[split]).is_empty())
        .collect();
    let k_max = *ks.iter().max().unwrap();
    let n_cats = ds.n_categories();

    let chunks: Vec<&[usize]> = eligible.chunks(64).collect();
    let per_chunk: Vec<Result<Vec<BTreeMap<usize, KMetrics>>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut x0 = Array2::zeros((chunk.len(), ds.n_items()));
            for (r, &u) in chunk.iter().enumerate() {
                x0.row_mut(r).assign(&ds.user_vector(u, &[Split::Train]));
            }
            let scores = scorer(chunk, &x0)?;
            ensure!(
                scores.dim() == x0.dim(),
                Contract,
                "scorer returned {:?}, expected {:?}",
                scores.dim(),
                x0.dim()
            );
            let mut out = Vec::with_capacity(chunk.len());
            for (r, &u) in chunk.iter().enumerate() {
                let mut mask = vec![false; ds.n_items()];
                for i in ds.user_items(u, history_splits(split)) {
                    mask[i] = true;
                }
                let free = mask.iter().filter(|m| !**m).count();
                let top = top_k_indices(scores.row(r), &mask, k_max.min(free))?;
                let test: HashSet<usize> = ds.user_items(u, &[split]).into_iter().collect();
                let mut m = BTreeMap::new();
                for &k in ks {
                    let list = &top[..k.min(top.len())];
                    let y = preference_of_items(list, &ds.categories);
                    m.insert(
                        k,
                        KMetrics {
                            recall: recall_at_k(list, &test, k),
                            ndcg: ndcg_at_k(list, &test, k),
                            entropy: entropy_at_k(y.view(), n_cats),
                            coverage: coverage_at_k(y.view(), n_cats),
                        },
                    );
                }
                out.push(m);
            }
            Ok(out)
        })
        .collect();

    let mut per_k: BTreeMap<usize, KMetrics> = ks.iter().map(|&k| (k, KMetrics::default())).collect();
    let mut per_user = Vec::new();
    let mut flat = Vec::with_capacity(eligible.len());
    for c in per_chunk {
        flat.extend(c?);
    }
    for (&u, m) in eligible.iter().zip(&flat) {
        for (k, v) in m {
            per_k.get_mut(k).unwrap().add(v);
        }
        if keep_per_user {
            per_user.push(UserMetrics { user: ds.user_ids[u].clone(), per_k: m.clone() });
        }
    }
    if !eligible.is_empty() {
        for v in per_k.values_mut() {
            v.scale(1.0 / eligible.len() as f64);
        }
    }
    Ok(MetricsReport {
        split: split.name().to_string(),
        per_k,
        n_users_evaluated: eligible.len(),
        n_users_skipped: users.len() - eligible.len(),
        per_user,
        sweep: None,
    })
}

/// Where the guidance target comes from during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum TargetSource<'a> {
    /// Each user's train preference tempered by `tau`.
    History { tau: f64 },
    /// One explicit target per dataset user.
    Explicit(&'a [Array1<f64>]),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub split: Split,
    pub ks: &'a [usize],
    pub w: f64,
    pub t_prime: usize,
    pub target: TargetSource<'a>,
    pub keep_per_user: bool,
}

/// Guided evaluation of `model` on `split`.
///
/// Users without train history are skipped when the target is derived from
/// history, since there is nothing to temper.
pub fn evaluate<P: X0Predictor + Sync + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    ds: &InteractionDataset,
    opts: &EvalOptions<'_>,
) -> Result<MetricsReport> {
    let all: Vec<usize> = (0..ds.n_users()).collect();
    let users: Vec<usize> = match opts.target {
        TargetSource::History { tau } => {
            ensure!(tau > 0.0, Contract, "temperature must be positive, got {tau}");
            all.iter().copied().filter(|&u| !ds.user_items(u, &[Split::Train]).is_empty()).collect()
        }
        TargetSource::Explicit(t) => {
            ensure!(t.len() == ds.n_users(), Contract, "{} targets for {} users", t.len(), ds.n_users());
            all.clone()
        }
    };
    let no_history = all.len() - users.len();
    let mut report = evaluate_scores(ds, opts.split, opts.ks, &users, opts.keep_per_user, |chunk, x0| {
        let mut y = Array2::zeros((chunk.len(), ds.n_categories()));
        for (r, &u) in chunk.iter().enumerate() {
            let target = match opts.target {
                TargetSource::History { tau } => {
                    temper_preference(ds.user_preference(u, &[Split::Train]).view(), tau)?
                }
                TargetSource::Explicit(t) => t[u].clone(),
            };
            y.row_mut(r).assign(&target);
        }
        reverse_denoise(model, sched, x0, &y, opts.w, opts.t_prime, Corruption::Deterministic)
    })?;
    report.n_users_skipped += no_history;
    Ok(report)
}

/// One `evaluate` per temperature, reported at K = 20.
pub fn pareto_sweep<P: X0Predictor + Sync + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    ds: &InteractionDataset,
    split: Split,
    taus: &[f64],
    w: f64,
    t_prime: usize,
) -> Result<Vec<SweepRow>> {
    taus.iter()
        .map(|&tau| {
            let r = evaluate(
                model,
                sched,
                ds,
                &EvalOptions {
                    split,
                    ks: &[20],
                    w,
                    t_prime,
                    target: TargetSource::History { tau },
                    keep_per_user: false,
                },
            )?;
            let m = r.at(20);
            Ok(SweepRow { tau, recall: m.recall, ndcg: m.ndcg, entropy: m.entropy, coverage: m.coverage })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("tau,recall,ndcg,entropy,coverage\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.tau, r.recall, r.ndcg, r.entropy, r.coverage);
    }
    s
}

/// Mean of a metric over a slice of per-user values; used by callers that
/// average reports across seeds.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
