//! Guided generation.
//!
//! A request resolves a target category distribution (explicit, or the
//! user's history preference reshaped by a temperature), corrupts the
//! history deterministically for `t_prime` steps, runs the full reverse
//! chain with classifier-free guidance and ranks the resulting scores.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ItemCategoryMatrix;
use crate::denoiser::Denoiser;
use crate::error::{ensure, Result};
use crate::metrics::{coverage_at_k, entropy_at_k};
use crate::nnet::Tensor2;
use crate::schedule::NoiseSchedule;

/// Anything that predicts x0 for a batch of noisy rows.
pub trait X0Predictor {
    fn predict_x0(&self, x_t: &Tensor2, steps: &[usize], cond: &Tensor2) -> Result<Tensor2>;
}

impl X0Predictor for Denoiser {
    fn predict_x0(&self, x_t: &Tensor2, steps: &[usize], cond: &Tensor2) -> Result<Tensor2> {
        self.predict_batch(x_t, steps, cond)
    }
}

/// `softmax(log(y) / tau)`; zero entries of `y` stay exactly zero.
pub fn temper_preference(y: ArrayView1<'_, f64>, tau: f64) -> Result<Array1<f64>> {
    ensure!(tau > 0.0 && tau.is_finite(), Contract, "temperature must be positive, got {tau}");
    ensure!(
        y.iter().all(|&v| v >= 0.0 && v.is_finite()),
        Contract,
        "preference entries must be finite and nonnegative"
    );
    ensure!(y.iter().any(|&v| v > 0.0), Contract, "cannot temper an all-zero preference");
    let logits = y.mapv(|v| if v > 0.0 { v.ln() / tau } else { f64::NEG_INFINITY });
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|l| if l.is_finite() { (l - max).exp() } else { 0.0 });
    let s = out.sum();
    out /= s;
    Ok(out)
}

/// `(1 + w) * x_theta(x_t, t, y) - w * x_theta(x_t, t, 0)`.
pub fn guided_x0<P: X0Predictor + ?Sized>(
    model: &P,
    x_t: &Tensor2,
    steps: &[usize],
    y_tilde: &Tensor2,
    w: f64,
) -> Result<Tensor2> {
    let cond = model.predict_x0(x_t, steps, y_tilde)?;
    let uncond = model.predict_x0(x_t, steps, &Array2::zeros(y_tilde.dim()))?;
    Ok(mix_guidance(&cond, &uncond, w))
}

pub(crate) fn mix_guidance(cond: &Tensor2, uncond: &Tensor2, w: f64) -> Tensor2 {
    cond * (1.0 + w) - uncond * w
}

/// How the history is corrupted before denoising.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// `sqrt(alpha_bar_{t'}) * x0`; reproducible.
    #[default]
    Deterministic,
    /// Adds `sqrt(1 - alpha_bar_{t'})` Gaussian noise drawn from the seed.
    Sampled { seed: u64 },
}

/// Corrupts `x0` to step `t_prime` and runs `t = T..1` of
/// `x_{t-1} = c0(t) * guided_x0 + ct(t) * x_t`.
///
/// The reverse chain always runs all `T` steps, whatever `t_prime` is.
pub fn reverse_denoise<P: X0Predictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    x0: &Tensor2,
    y_tilde: &Tensor2,
    w: f64,
    t_prime: usize,
    corruption: Corruption,
) -> Result<Tensor2> {
    ensure!(
        t_prime < sched.steps(),
        Contract,
        "t_prime ({t_prime}) must be below the number of diffusion steps ({})",
        sched.steps()
    );
    let mut x = if t_prime == 0 {
        x0.clone()
    } else {
        let ab = sched.alpha_bar(t_prime);
        let mut x = x0 * ab.sqrt();
        if let Corruption::Sampled { seed } = corruption {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sd = (1.0 - ab).sqrt();
            x.mapv_inplace(|v| v + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
        }
        x
    };
    let rows = x0.nrows();
    for t in (1..=sched.steps()).rev() {
        let steps = vec![t; rows];
        let x0_hat = guided_x0(model, &x, &steps, y_tilde, w)?;
        let c = sched.posterior_coefficients(t);
        x = x0_hat * c.c0 + &(x * c.ct);
    }
    Ok(x)
}

/// A single guided recommendation request over a binary history.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub history: Array1<f64>,
    /// Explicit target; when absent the history preference is tempered by `tau`.
    pub target: Option<Array1<f64>>,
    pub tau: f64,
    pub w: f64,
    pub k: usize,
    pub t_prime: usize,
}

/// Soft lower bound on the guidance strength; below this the unconditional
/// branch dominates.
pub const WEAK_GUIDANCE_THRESHOLD: f64 = -0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Category distribution of the listed items.
    pub category_distribution: Vec<f64>,
    pub entropy: f64,
    pub coverage: f64,
}

/// Top-`k` unmasked items, ties broken by ascending item index.
pub fn recommend_topk(
    scores: ArrayView1<'_, f64>,
    history_mask: &[bool],
    k: usize,
    f: &ItemCategoryMatrix,
) -> Result<RecommendationList> {
    ensure!(
        scores.len() == history_mask.len() && scores.len() == f.n_items(),
        Contract,
        "scores ({}), mask ({}) and categories ({}) disagree on item count",
        scores.len(),
        history_mask.len(),
        f.n_items()
    );
    let items = top_k_indices(scores, history_mask, k)?;
    let dist = crate::dataset::preference_of_items(&items, f);
    let n_cats = f.n_categories();
    Ok(RecommendationList {
        scores: items.iter().map(|&i| scores[i]).collect(),
        entropy: entropy_at_k(dist.view(), n_cats),
        coverage: coverage_at_k(dist.view(), n_cats),
        category_distribution: dist.to_vec(),
        items,
    })
}

pub(crate) fn top_k_indices(scores: ArrayView1<'_, f64>, mask: &[bool], k: usize) -> Result<Vec<usize>> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !mask[i]).collect();
    ensure!(
        k >= 1 && k <= candidates.len(),
        Contract,
        "k = {k} but only {} unmasked items",
        candidates.len()
    );
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_by(cmp);
    Ok(candidates)
}

/// Target used for a request: the explicit one normalized to sum 1, else
/// the tempered history preference.
pub fn resolve_target(req: &GuidanceRequest, f: &ItemCategoryMatrix) -> Result<Array1<f64>> {
    match &req.target {
        Some(t) => {
            ensure!(t.len() == f.n_categories(), Contract, "target has {} entries, expected {}", t.len(), f.n_categories());
            ensure!(t.iter().all(|&v| v >= 0.0 && v.is_finite()), Contract, "target weights must be nonnegative");
            let s = t.sum();
            ensure!(s > 0.0, Contract, "target weights are all zero");
            Ok(t / s)
        }
        None => {
            let y = crate::dataset::category_preference(req.history.view(), f)?;
            temper_preference(y.view(), req.tau)
        }
    }
}

/// Full pipeline for one request. The history itself is masked from ranking.
pub fn recommend(
    model: &Denoiser,
    sched: &NoiseSchedule,
    f: &ItemCategoryMatrix,
    req: &GuidanceRequest,
) -> Result<(RecommendationList, Array1<f64>)> {
    if req.w < WEAK_GUIDANCE_THRESHOLD {
        log::warn!("guidance strength w = {} is below {WEAK_GUIDANCE_THRESHOLD}", req.w);
    }
    let target = resolve_target(req, f)?;
    let x0 = req.history.view().insert_axis(Axis(0)).to_owned();
    let y = target.view().insert_axis(Axis(0)).to_owned();
    let scores = reverse_denoise(model, sched, &x0, &y, req.w, req.t_prime, Corruption::Deterministic)?;
    let mask: Vec<bool> = req.history.iter().map(|&v| v > 0.0).collect();
    let list = recommend_topk(scores.row(0), &mask, req.k, f)?;
    Ok((list, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::ScheduleParams;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn entropy(p: &Array1<f64>) -> f64 {
        p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
    }

    #[test]
    fn temper_examples() {
        let y = array![0.5, 0.3, 0.2, 0.0];
        assert_abs_diff_eq!(temper_preference(y.view(), 1.0).unwrap(), y, epsilon = 1e-15);
        let t = temper_preference(array![0.8, 0.2, 0.0].view(), 2.0).unwrap();
        assert_abs_diff_eq!(t, array![2.0 / 3.0, 1.0 / 3.0, 0.0], epsilon = 1e-12);
        let cold = temper_preference(y.view(), 1e-3).unwrap();
        assert_abs_diff_eq!(cold, array![1.0, 0.0, 0.0, 0.0], epsilon = 1e-12);
        let hot = temper_preference(y.view(), 1e6).unwrap();
        assert_abs_diff_eq!(hot, array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0], epsilon = 1e-5);
        assert!(temper_preference(Array1::zeros(3).view(), 1.0).is_err());
        assert!(temper_preference(y.view(), 0.0).is_err());
    }

    #[test]
    fn tempering_entropy_is_monotone_in_tau() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let n = rng.random_range(2..8);
            let mut y = Array1::from_shape_simple_fn(n, || if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() });
            if y.sum() == 0.0 {
                y[0] = 1.0;
            }
            y /= y.sum();
            let t1 = rng.random_range(0.05..5.0);
            let t2 = t1 + rng.random_range(0.0..5.0);
            let a = temper_preference(y.view(), t1).unwrap();
            let b = temper_preference(y.view(), t2).unwrap();
            assert!(entropy(&a) <= entropy(&b) + 1e-12);
            for i in 0..n {
                if y[i] == 0.0 {
                    assert_eq!(a[i], 0.0);
                    assert_eq!(b[i], 0.0);
                }
            }
        }
    }

    struct Constant(f64, f64);
    impl X0Predictor for Constant {
        fn predict_x0(&self, x_t: &Tensor2, _: &[usize], cond: &Tensor2) -> Result<Tensor2> {
            let v = if cond.iter().any(|&c| c != 0.0) { self.0 } else { self.1 };
            Ok(Array2::from_elem(x_t.dim(), v))
        }
    }

    #[test]
    fn guidance_scalar_probe() {
        let x = Array2::zeros((1, 1));
        let y = array![[1.0]];
        let out = guided_x0(&Constant(2.0, 1.0), &x, &[1], &y, 0.5).unwrap();
        assert_eq!(out[[0, 0]], 2.5);
        assert_eq!(guided_x0(&Constant(2.0, 1.0), &x, &[1], &y, 0.0).unwrap()[[0, 0]], 2.0);
        assert_eq!(guided_x0(&Constant(2.0, 1.0), &x, &[1], &y, -1.0).unwrap()[[0, 0]], 1.0);
    }

    /// Returns its input unchanged.
    struct Echo;
    impl X0Predictor for Echo {
        fn predict_x0(&self, x_t: &Tensor2, _: &[usize], _: &Tensor2) -> Result<Tensor2> {
            Ok(x_t.clone())
        }
    }

    fn sched(steps: usize) -> NoiseSchedule {
        NoiseSchedule::new(ScheduleParams { steps, noise_scale: 0.5, noise_min: 0.02, noise_max: 0.6 }).unwrap()
    }

    #[test]
    fn reverse_with_echo_matches_scalar_recursion() {
        let s = sched(7);
        let x0 = array![[1.0, 0.0, 0.5], [0.0, 2.0, -1.0]];
        let y = array![[0.5, 0.5], [1.0, 0.0]];
        for t_prime in [0, 3, 6] {
            let got = reverse_denoise(&Echo, &s, &x0, &y, 1.7, t_prime, Corruption::Deterministic).unwrap();
            // Hand-rolled: each step multiplies by c0 + ct since x0_hat = x_t.
            let mut factor = if t_prime == 0 { 1.0 } else { s.alpha_bar(t_prime).sqrt() };
            for t in (1..=7).rev() {
                let ab = s.alpha_bar(t);
                let ab_prev = s.alpha_bar(t - 1);
                let alpha = ab / ab_prev;
                let c0 = ab_prev.sqrt() * (1.0 - alpha) / (1.0 - ab);
                let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                factor *= c0 + ct;
            }
            assert_abs_diff_eq!(got, &x0 * factor, epsilon = 1e-12);
        }
    }

    #[test]
    fn reverse_single_step_collapses_to_guided_prediction() {
        let s = sched(1);
        let cfg = DenoiserConfig { n_items: 6, n_categories: 2, hidden: 5, latent: 3, step_embed_dim: 2, cond_embed_dim: 2, dropout: 0.0 };
        let model = Denoiser::init(cfg, 1).unwrap();
        let x0 = array![[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]];
        let y = array![[0.25, 0.75]];
        let out = reverse_denoise(&model, &s, &x0, &y, 0.8, 0, Corruption::Deterministic).unwrap();
        let direct = guided_x0(&model, &x0, &[1], &y, 0.8).unwrap();
        assert_abs_diff_eq!(out, direct, epsilon = 1e-12);
        let again = reverse_denoise(&model, &s, &x0, &y, 0.8, 0, Corruption::Deterministic).unwrap();
        assert_eq!(out, again);
        assert!(reverse_denoise(&model, &s, &x0, &y, 0.8, 1, Corruption::Deterministic).is_err());
    }

    #[test]
    fn sampled_corruption_is_seeded() {
        let s = sched(5);
        let x0 = array![[1.0, 0.0, 1.0]];
        let y = array![[1.0]];
        let a = reverse_denoise(&Echo, &s, &x0, &y, 0.0, 2, Corruption::Sampled { seed: 4 }).unwrap();
        let b = reverse_denoise(&Echo, &s, &x0, &y, 0.0, 2, Corruption::Sampled { seed: 4 }).unwrap();
        let c = reverse_denoise(&Echo, &s, &x0, &y, 0.0, 2, Corruption::Deterministic).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn two_cats(n: usize) -> ItemCategoryMatrix {
        ItemCategoryMatrix::from_memberships(&(0..n).map(|i| vec![i % 2]).collect::<Vec<_>>(), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn topk_examples() {
        let f = two_cats(3);
        let list = recommend_topk(array![3.0, 1.0, 2.0].view(), &[false; 3], 2, &f).unwrap();
        assert_eq!(list.items, vec![0, 2]);
        assert_eq!(list.scores, vec![3.0, 2.0]);
        let list = recommend_topk(array![3.0, 1.0, 2.0].view(), &[true, false, false], 2, &f).unwrap();
        assert_eq!(list.items, vec![2, 1]);
        assert_eq!(list.category_distribution, vec![0.5, 0.5]);
        assert_abs_diff_eq!(list.entropy, 1.0, epsilon = 1e-12);
        assert_eq!(list.coverage, 1.0);
        assert!(recommend_topk(array![3.0, 1.0, 2.0].view(), &[true, false, false], 3, &f).is_err());
    }

    #[test]
    fn topk_ties_break_by_index() {
        let f = two_cats(5);
        let list = recommend_topk(array![1.0, 2.0, 2.0, 1.0, 2.0].view(), &[false; 5], 4, &f).unwrap();
        assert_eq!(list.items, vec![1, 2, 4, 0]);
    }

    proptest::proptest! {
        #[test]
        fn topk_invariant_under_increasing_transform(
            scores in proptest::collection::vec(-5.0f64..5.0, 12),
            mask in proptest::collection::vec(proptest::bool::weighted(0.3), 12),
            k in 1usize..5,
        ) {
            let f = two_cats(12);
            let free = mask.iter().filter(|m| !**m).count();
            proptest::prop_assume!(k <= free);
            let s = Array1::from(scores);
            let a = recommend_topk(s.view(), &mask, k, &f).unwrap();
            let b = recommend_topk(s.mapv(|v| (v * 0.5).exp() + 3.0).view(), &mask, k, &f).unwrap();
            proptest::prop_assert_eq!(&a.items, &b.items);
            for w in a.scores.windows(2) {
                proptest::prop_assert!(w[0] >= w[1]);
            }
            for i in &a.items {
                proptest::prop_assert!(!mask[*i]);
            }
        }
    }

    #[test]
    fn resolve_target_normalizes_or_tempers() {
        let f = two_cats(4);
        let mut req = GuidanceRequest {
            history: array![1.0, 1.0, 1.0, 0.0],
            target: Some(array![2.0, 2.0]),
            tau: 1.0,
            w: 0.0,
            k: 1,
            t_prime: 0,
        };
        assert_eq!(resolve_target(&req, &f).unwrap(), array![0.5, 0.5]);
        req.target = None;
        assert_abs_diff_eq!(resolve_target(&req, &f).unwrap(), array![2.0 / 3.0, 1.0 / 3.0], epsilon = 1e-12);
        req.target = Some(array![0.0, 0.0]);
        assert!(resolve_target(&req, &f).is_err());
    }
}
