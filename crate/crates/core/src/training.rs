//! Training objective and loop.
//!
//! Per sampled (user, step) row the objective is
//! `reweighted recon + cate + lambda * (ortho + emb)`, averaged over the batch:
//!
//! * recon: `delta * sum_i rho_i (x0_hat_i - x0_i)^2`, with per-item weights
//!   `rho` from the user's category preference (see [`item_weights`]);
//! * cate: cross-entropy between the condition and `F^T softmax(x0_hat)`;
//! * ortho: squared cosine between the two tower latents;
//! * emb: cross-entropy between the condition and the head's softmax.
//!
//! Rows whose condition was dropped to the unconditional token contribute
//! nothing to cate and emb.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, ItemCategoryMatrix, Split};
use crate::denoiser::{Denoiser, ForwardPass, OutputGrads};
use crate::error::{ensure, Error, Result};
use crate::metrics::{evaluate, EvalOptions, TargetSource};
use crate::nnet::{adamw_step, dropout_mask, OptimizerConfig, ParamStore, Tensor2};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::LOG_EPS;

const COS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the ortho and emb terms.
    pub lambda: f64,
    /// Scale of the re-weighted reconstruction term.
    pub delta: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub cond_dropout: f64,
    pub schedule: ScheduleParams,
    pub seed: u64,
    /// Stop after this many evaluations without a better harmonic mean.
    pub early_stop_patience: usize,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 400,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            lambda: 1e-2,
            delta: 1.0,
            gamma_min: 0.5,
            gamma_max: 1.5,
            cond_dropout: 0.3,
            schedule: ScheduleParams {
                steps: 15,
                noise_scale: 1e-1,
                noise_min: 5e-3,
                noise_max: 5e-2,
            },
            seed: 2024,
            early_stop_patience: 20,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, Config, "batch_size must be at least 1");
        ensure!(self.eval_every >= 1, Config, "eval_every must be at least 1");
        ensure!(
            self.gamma_min < self.gamma_max || (self.gamma_min == 1.0 && self.gamma_max == 1.0),
            Config,
            "γ_min < γ_max required (gamma_min = {}, gamma_max = {}); use 1 and 1 to disable re-weighting",
            self.gamma_min,
            self.gamma_max
        );
        ensure!(self.gamma_min > 0.0, Config, "gamma_min must be positive");
        ensure!((0.0..1.0).contains(&self.cond_dropout), Config, "cond_dropout must be in [0, 1)");
        ensure!(self.lambda >= 0.0 && self.delta > 0.0, Config, "lambda >= 0 and delta > 0 required");
        self.optimizer().validate()?;
        NoiseSchedule::new(self.schedule)?;
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::new(self.learning_rate, self.weight_decay)
    }
}

/// Min-max rescaling of `1 - y` (positives) and `y` (negatives) into
/// `[gamma_min, gamma_max]`. A constant vector maps to all-ones.
pub fn reweight_vectors(y: ArrayView1<'_, f64>, gamma_min: f64, gamma_max: f64) -> (Array1<f64>, Array1<f64>) {
    let rescale = |v: Array1<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Array1::ones(v.len());
        }
        v.mapv(|x| gamma_min + (gamma_max - gamma_min) * (x - lo) / (hi - lo))
    };
    (rescale(y.mapv(|v| 1.0 - v)), rescale(y.to_owned()))
}

/// `rho_i = F[i] . y_pos` for interacted items, `F[i] . y_neg` otherwise.
pub fn item_weights(
    x0: ArrayView1<'_, f64>,
    f: &ItemCategoryMatrix,
    y_pos: &Array1<f64>,
    y_neg: &Array1<f64>,
) -> Array1<f64> {
    let pos = f.weights().dot(y_pos);
    let neg = f.weights().dot(y_neg);
    Zip::from(&x0)
        .and(&pos)
        .and(&neg)
        .map_collect(|&x, &p, &n| if x > 0.0 { p } else { n })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub cate: f64,
    pub ortho: f64,
    pub emb: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn scaled(self, k: f64) -> Self {
        Self {
            recon: self.recon * k,
            cate: self.cate * k,
            ortho: self.ortho * k,
            emb: self.emb * k,
            total: self.total * k,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            recon: self.recon + o.recon,
            cate: self.cate + o.cate,
            ortho: self.ortho + o.ortho,
            emb: self.emb + o.emb,
            total: self.total + o.total,
        }
    }
}

/// Fully specified training batch: all randomness is drawn up front so the
/// loss is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x0: Tensor2,
    /// True category preference per row.
    pub y: Tensor2,
    pub rho: Tensor2,
    pub steps: Vec<usize>,
    pub noise: Tensor2,
    pub cond_dropped: Vec<bool>,
    pub input_mask: Option<Tensor2>,
}

impl TrainingBatch {
    pub fn rows(&self) -> usize {
        self.x0.nrows()
    }

    pub fn noisy_input(&self, sched: &NoiseSchedule) -> Tensor2 {
        let mut x_t = Array2::zeros(self.x0.dim());
        for (r, &t) in self.steps.iter().enumerate() {
            x_t.row_mut(r)
                .assign(&sched.q_sample(self.x0.row(r), t, self.noise.row(r)));
        }
        x_t
    }

    /// Condition actually fed to the model: `y`, or zeros for dropped rows.
    pub fn condition(&self) -> Tensor2 {
        let mut cond = self.y.clone();
        for (mut row, &dropped) in cond.rows_mut().into_iter().zip(&self.cond_dropped) {
            if dropped {
                row.fill(0.0);
            }
        }
        cond
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub delta: f64,
}

fn softmax_row(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = v.mapv(|x| (x - max).exp());
    let s = e.sum();
    e /= s;
    e
}

/// Batch-averaged losses and their gradients with respect to the model
/// outputs of `pass`.
pub fn losses_from_outputs(
    pass: &ForwardPass,
    batch: &TrainingBatch,
    f: &ItemCategoryMatrix,
    w: LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    let rows = batch.rows();
    let inv_b = 1.0 / rows as f64;
    let mut sum = LossBreakdown::default();
    let mut g_x = Array2::zeros(pass.x0_hat.dim());
    let mut g_za = Array2::zeros(pass.z_aware.dim());
    let mut g_zg = Array2::zeros(pass.z_agnostic.dim());
    let mut g_logits = Array2::zeros(pass.cate_logits.dim());
    let fw = f.weights();

    for r in 0..rows {
        let x_hat = pass.x0_hat.row(r);
        let x0 = batch.x0.row(r);
        let rho = batch.rho.row(r);
        let mut gx = g_x.row_mut(r);

        // recon
        let diff = &x_hat - &x0;
        sum.recon += w.delta * (&rho * &diff * &diff).sum();
        gx.scaled_add(2.0 * w.delta * inv_b, &(&rho * &diff));

        // ortho: p^2 / (A G) with A = |a|^2 + eps, G = |g|^2 + eps
        let a = pass.z_aware.row(r);
        let g = pass.z_agnostic.row(r);
        let p = a.dot(&g);
        let na = a.dot(&a) + COS_EPS;
        let ng = g.dot(&g) + COS_EPS;
        let cos2 = p * p / (na * ng);
        sum.ortho += cos2;
        let k = w.lambda * inv_b;
        g_za.row_mut(r).assign(&((&g * (2.0 * p / (na * ng)) - &a * (2.0 * cos2 / na)) * k));
        g_zg.row_mut(r).assign(&((&a * (2.0 * p / (na * ng)) - &g * (2.0 * cos2 / ng)) * k));

        if batch.cond_dropped[r] {
            continue;
        }
        let y = batch.y.row(r);

        // cate: y_hat = F^T softmax(x_hat)
        let sm = softmax_row(x_hat);
        let y_hat = fw.t().dot(&sm);
        sum.cate -= y.iter().zip(&y_hat).map(|(&yc, &pc)| yc * (pc + LOG_EPS).ln()).sum::<f64>();
        let d_yhat: Array1<f64> = y.iter().zip(&y_hat).map(|(&yc, &pc)| -yc / (pc + LOG_EPS)).collect();
        let d_sm = fw.dot(&d_yhat);
        let mean = sm.dot(&d_sm);
        gx.scaled_add(inv_b, &(&sm * &d_sm.mapv(|v| v - mean)));

        // emb
        let logits = pass.cate_logits.row(r);
        let probs = softmax_row(logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.mapv(|v| (v - max).exp()).sum().ln();
        sum.emb -= y.iter().zip(&logits).map(|(&yc, &l)| yc * (l - log_z)).sum::<f64>();
        g_logits
            .row_mut(r)
            .assign(&((&probs * y.sum() - y) * (w.lambda * inv_b)));
    }

    let mut out = sum.scaled(inv_b);
    out.total = out.recon + out.cate + w.lambda * (out.ortho + out.emb);
    if !out.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss over {rows} rows: {out:?}"
        )));
    }
    Ok((
        out,
        OutputGrads {
            x0_hat: g_x,
            z_aware: g_za,
            z_agnostic: g_zg,
            cate_logits: g_logits,
        },
    ))
}

/// Forward pass and losses without touching gradients.
pub fn batch_loss(
    model: &Denoiser,
    params: &ParamStore,
    batch: &TrainingBatch,
    sched: &NoiseSchedule,
    f: &ItemCategoryMatrix,
    w: LossWeights,
) -> Result<LossBreakdown> {
    let pass = model.forward(params, &batch.noisy_input(sched), &batch.steps, &batch.condition(), batch.input_mask.as_ref())?;
    Ok(losses_from_outputs(&pass, batch, f, w)?.0)
}

/// Computes the losses and accumulates their parameter gradients into `params`.
pub fn compute_losses(
    model: &Denoiser,
    params: &mut ParamStore,
    batch: &TrainingBatch,
    sched: &NoiseSchedule,
    f: &ItemCategoryMatrix,
    w: LossWeights,
) -> Result<LossBreakdown> {
    let pass = model.forward(params, &batch.noisy_input(sched), &batch.steps, &batch.condition(), batch.input_mask.as_ref())?;
    let (losses, grads) = losses_from_outputs(&pass, batch, f, w)?;
    model.backward(params, &pass, &grads)?;
    Ok(losses)
}

/// Per-user tensors that stay fixed across epochs.
#[derive(Debug, Clone)]
pub struct TrainingData {
    /// Dataset user index of each row.
    pub users: Vec<usize>,
    pub x0: Tensor2,
    pub y: Tensor2,
    pub rho: Tensor2,
    pub categories: ItemCategoryMatrix,
}

impl TrainingData {
    /// Users with a nonempty train split; `rho` is computed from each user's
    /// train preference.
    pub fn new(ds: &InteractionDataset, gamma_min: f64, gamma_max: f64) -> Result<Self> {
        let users: Vec<usize> = (0..ds.n_users())
            .filter(|&u| !ds.user_items(u, &[Split::Train]).is_empty())
            .collect();
        ensure!(!users.is_empty(), Data, "no user has training interactions");
        let (n, i, c) = (users.len(), ds.n_items(), ds.n_categories());
        let mut x0 = Array2::zeros((n, i));
        let mut y = Array2::zeros((n, c));
        let mut rho = Array2::zeros((n, i));
        for (r, &u) in users.iter().enumerate() {
            let x = ds.user_vector(u, &[Split::Train]);
            let pref = ds.user_preference(u, &[Split::Train]);
            let (pos, neg) = reweight_vectors(pref.view(), gamma_min, gamma_max);
            rho.row_mut(r).assign(&item_weights(x.view(), &ds.categories, &pos, &neg));
            x0.row_mut(r).assign(&x);
            y.row_mut(r).assign(&pref);
        }
        Ok(Self {
            users,
            x0,
            y,
            rho,
            categories: ds.categories.clone(),
        })
    }

    pub fn rows(&self) -> usize {
        self.users.len()
    }

    /// Draws steps, noise, condition dropout and dropout masks for `rows`.
    pub fn sample_batch(
        &self,
        rows: &[usize],
        steps: usize,
        cond_dropout: f64,
        input_dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> TrainingBatch {
        let take = |m: &Tensor2| m.select(Axis(0), rows);
        let x0 = take(&self.x0);
        let steps_v: Vec<usize> = rows.iter().map(|_| rng.random_range(1..=steps)).collect();
        let noise = Array2::from_shape_simple_fn(x0.dim(), || rng.sample(StandardNormal));
        let cond_dropped: Vec<bool> = rows.iter().map(|_| rng.random::<f64>() < cond_dropout).collect();
        let input_mask = (input_dropout > 0.0).then(|| dropout_mask(x0.nrows(), x0.ncols(), input_dropout, rng));
        TrainingBatch {
            y: take(&self.y),
            rho: take(&self.rho),
            x0,
            steps: steps_v,
            noise,
            cond_dropped,
            input_mask,
        }
    }
}

/// Harmonic mean `2RE / (R + E)`, zero when either is zero.
pub fn harmonic_mean(recall: f64, entropy: f64) -> f64 {
    if recall <= 0.0 || entropy <= 0.0 {
        0.0
    } else {
        2.0 * recall * entropy / (recall + entropy)
    }
}

/// One validation row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_recall20: Option<f64>,
    pub val_entropy20: Option<f64>,
    pub hm: Option<f64>,
}

/// Index into `history` of the best harmonic mean of Recall@20 and
/// Entropy@20; ties go to the earliest entry.
pub fn select_checkpoint(history: &[(f64, f64)]) -> Result<usize> {
    ensure!(!history.is_empty(), Contract, "empty validation history");
    let mut best = 0;
    let mut best_hm = f64::NEG_INFINITY;
    for (i, &(r, e)) in history.iter().enumerate() {
        let hm = harmonic_mean(r, e);
        if hm > best_hm {
            best = i;
            best_hm = hm;
        }
    }
    Ok(best)
}

/// Owns one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    opt_steps: u64,
}

impl Trainer {
    pub fn new(model: Denoiser, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            schedule: NoiseSchedule::new(cfg.schedule)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_eed0_f7a1),
            model,
            cfg,
            opt_steps: 0,
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.cfg.lambda,
            delta: self.cfg.delta,
        }
    }

    /// One pass over shuffled user batches with an AdamW step per batch.
    /// Returns the row-weighted mean losses.
    pub fn train_epoch(&mut self, data: &TrainingData) -> Result<LossBreakdown> {
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut self.rng);
        let opt = self.cfg.optimizer();
        let weights = self.weights();
        let mut acc = LossBreakdown::default();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = data.sample_batch(
                chunk,
                self.schedule.steps(),
                self.cfg.cond_dropout,
                self.model.config().dropout,
                &mut self.rng,
            );
            let mut params = std::mem::take(&mut self.model.params);
            params.zero_grads();
            let result = compute_losses(&self.model, &mut params, &batch, &self.schedule, &data.categories, weights)
                .and_then(|losses| {
                    self.opt_steps += 1;
                    adamw_step(&mut params, &opt, self.opt_steps)?;
                    Ok(losses)
                });
            self.model.params = params;
            let losses = result?;
            if cfg!(debug_assertions) {
                if let Some(name) = self.model.params.first_non_finite() {
                    return Err(Error::Numeric(format!("parameter {name} became non-finite")));
                }
            }
            acc = acc.add(losses.scaled(chunk.len() as f64));
        }
        Ok(acc.scaled(1.0 / data.rows() as f64))
    }

    /// Trains for up to `cfg.epochs`, validating on the valid split with the
    /// history preference (tau = 1) and guidance `w`, `t_prime`. Keeps the
    /// parameters with the best harmonic mean of Recall@20 and Entropy@20 and
    /// stops after `early_stop_patience` validations without improvement.
    ///
    /// Without any validation users the last epoch is kept.
    pub fn fit(
        &mut self,
        ds: &InteractionDataset,
        w: f64,
        t_prime: usize,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<FitOutcome> {
        let data = TrainingData::new(ds, self.cfg.gamma_min, self.cfg.gamma_max)?;
        let mut history = Vec::new();
        let mut scored: Vec<(f64, f64)> = Vec::new();
        let mut scored_epochs = Vec::new();
        let mut best: Option<(usize, ParamStore)> = None;
        let mut best_hm = f64::NEG_INFINITY;
        let mut since_best = 0;
        for epoch in 1..=self.cfg.epochs {
            let losses = self.train_epoch(&data)?;
            let mut rec = EpochRecord { epoch, losses, val_recall20: None, val_entropy20: None, hm: None };
            if epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs {
                let report = evaluate(
                    &self.model,
                    &self.schedule,
                    ds,
                    &EvalOptions {
                        split: Split::Valid,
                        ks: &[20],
                        w,
                        t_prime,
                        target: TargetSource::History { tau: 1.0 },
                        keep_per_user: false,
                    },
                )?;
                if report.n_users_evaluated > 0 {
                    let m = report.at(20);
                    let hm = harmonic_mean(m.recall, m.entropy);
                    rec.val_recall20 = Some(m.recall);
                    rec.val_entropy20 = Some(m.entropy);
                    rec.hm = Some(hm);
                    scored.push((m.recall, m.entropy));
                    scored_epochs.push(epoch);
                    if hm > best_hm {
                        best_hm = hm;
                        best = Some((epoch, self.model.params.clone()));
                        since_best = 0;
                    } else {
                        since_best += 1;
                    }
                }
            }
            log::info!("{}", serde_json::to_string(&rec)?);
            on_epoch(&rec);
            history.push(rec);
            if since_best > self.cfg.early_stop_patience {
                break;
            }
        }
        let best_epoch = match best {
            Some((epoch, params)) => {
                debug_assert_eq!(scored_epochs[select_checkpoint(&scored)?], epoch);
                self.model.params = params;
                epoch
            }
            None => history.len(),
        };
        Ok(FitOutcome { history, best_epoch })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the model now holds.
    pub best_epoch: usize,
}
