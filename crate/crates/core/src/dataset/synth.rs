//! Generated and derived datasets: the Dirichlet toy world, the
//! bottom-category preference-shift protocol, and false-positive injection.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{
    floor_count, preference_of_items, sort_chronologically, Interaction, InteractionDataset,
    ItemCategoryMatrix, Split,
};
use crate::error::{ensure, Result};

/// Parameters of the toy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Symmetric Dirichlet concentration of each user's category taste.
    /// Small values give users focused on few categories.
    pub concentration: f64,
    pub interactions_per_user: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_users > 0 && self.n_items > 0 && self.n_categories > 0,
            Config,
            "toy dimensions must be positive"
        );
        ensure!(
            self.n_items >= self.n_categories,
            Config,
            "n_items ({}) must be at least n_categories ({})",
            self.n_items,
            self.n_categories
        );
        ensure!(
            self.interactions_per_user > 0 && self.interactions_per_user < self.n_items,
            Config,
            "interactions_per_user ({}) must be in 1..n_items ({})",
            self.interactions_per_user,
            self.n_items
        );
        ensure!(
            self.concentration > 0.0 && self.concentration.is_finite(),
            Config,
            "concentration must be positive"
        );
        Ok(())
    }
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
fn dirichlet(rng: &mut ChaCha8Rng, concentration: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("validated concentration");
    let mut draw: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draw.iter().sum();
    if total > 0.0 {
        draw.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every variate underflowed; fall back to a random one-hot.
        draw[rng.random_range(0..n)] = 1.0;
    }
    draw
}

/// Items are assigned to single categories round-robin (`item % |C|`); each
/// user draws a category taste from a symmetric Dirichlet and then samples
/// distinct items with probability proportional to the taste mass of their
/// category. Timestamps record sampling order.
pub fn generate_toy(spec: &SyntheticSpec) -> Result<InteractionDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let memberships: Vec<Vec<usize>> = (0..spec.n_items)
        .map(|i| vec![i % spec.n_categories])
        .collect();
    let names = (0..spec.n_categories).map(|c| format!("cat{c}")).collect();
    let f = ItemCategoryMatrix::from_memberships(&memberships, names)?;

    let mut lists = Vec::with_capacity(spec.n_users);
    for _ in 0..spec.n_users {
        let taste = dirichlet(&mut rng, spec.concentration, spec.n_categories);
        let mut weights: Vec<f64> = (0..spec.n_items)
            .map(|i| taste[i % spec.n_categories])
            .collect();
        let mut list = Vec::with_capacity(spec.interactions_per_user);
        for step in 0..spec.interactions_per_user {
            let total: f64 = weights.iter().sum();
            let item = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = None;
                for (i, &w) in weights.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
                chosen.expect("positive total weight")
            } else {
                // Taste exhausted; pick uniformly among the untaken items.
                let free: Vec<usize> = (0..spec.n_items)
                    .filter(|&i| !list.iter().any(|it: &Interaction| it.item == i))
                    .collect();
                free[rng.random_range(0..free.len())]
            };
            weights[item] = 0.0;
            list.push(Interaction {
                item,
                split: Split::Train,
                timestamp: Some(step as i64),
            });
        }
        lists.push(list);
    }

    let mut ds = InteractionDataset::new(
        (0..spec.n_users).map(|u| format!("u{u}")).collect(),
        (0..spec.n_items).map(|i| format!("i{i}")).collect(),
        f,
        lists,
    )?;
    ds.seed = Some(spec.seed);
    Ok(ds)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticReport {
    /// Users removed because the protocol left them without test or train data.
    pub dropped_users: Vec<String>,
    /// Per retained user, the selected bottom category indices.
    pub selected_categories: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SemiSynthetic {
    pub dataset: InteractionDataset,
    /// Per retained user, the category preference of their test items.
    pub target_prefs: Vec<Array1<f64>>,
    pub report: SemiSyntheticReport,
}

/// Number of bottom categories selected out of `consumed`.
pub(crate) fn bottom_count(consumed: usize) -> usize {
    floor_count(0.3, consumed).max(1)
}

/// Builds the preference-shift dataset.
///
/// Per user, consumed categories are ranked by interaction mass and the bottom
/// 30% (at least one, ties by category index) are selected. Every interaction
/// whose item touches a selected category goes to test; the rest is split
/// chronologically 80/20 into train and valid.
pub fn build_semi_synthetic(ds: &InteractionDataset) -> Result<SemiSynthetic> {
    let mut keep_users = Vec::new();
    let mut lists = Vec::new();
    let mut targets = Vec::new();
    let mut report = SemiSyntheticReport::default();

    for (u, list) in ds.interactions.iter().enumerate() {
        let mut mass = vec![0.0; ds.n_categories()];
        for it in list {
            for (c, &w) in ds.categories.row(it.item).iter().enumerate() {
                mass[c] += w;
            }
        }
        let mut consumed: Vec<usize> = (0..mass.len()).filter(|&c| mass[c] > 0.0).collect();
        consumed.sort_by(|&a, &b| mass[a].total_cmp(&mass[b]).then(a.cmp(&b)));
        let selected: Vec<usize> = consumed.iter().take(bottom_count(consumed.len())).copied().collect();

        let mut rest = Vec::new();
        let mut test = Vec::new();
        for it in list {
            let hits = selected.iter().any(|&c| ds.categories.row(it.item)[c] > 0.0);
            if hits {
                test.push(Interaction { split: Split::Test, ..*it });
            } else {
                rest.push(*it);
            }
        }
        if test.is_empty() || rest.is_empty() {
            report.dropped_users.push(ds.user_ids[u].clone());
            continue;
        }
        sort_chronologically(&mut rest);
        let n_train = floor_count(0.8, rest.len());
        for (pos, it) in rest.iter_mut().enumerate() {
            it.split = if pos < n_train { Split::Train } else { Split::Valid };
        }
        let test_items: Vec<usize> = test.iter().map(|it| it.item).collect();
        targets.push(preference_of_items(&test_items, &ds.categories));
        rest.extend(test);
        lists.push(rest);
        keep_users.push(u);
        report.selected_categories.push(selected);
    }
    ensure!(!keep_users.is_empty(), Data, "semi-synthetic protocol dropped every user");

    let mut dataset = InteractionDataset::new(
        keep_users.iter().map(|&u| ds.user_ids[u].clone()).collect(),
        ds.item_ids.clone(),
        ds.categories.clone(),
        lists,
    )?;
    dataset.seed = ds.seed;
    Ok(SemiSynthetic {
        dataset,
        target_prefs: targets,
        report,
    })
}

/// Adds `floor(ratio * |train|)` uniformly drawn unseen items per user as
/// false-positive train interactions. Valid and test are untouched.
pub fn inject_noise(ds: &InteractionDataset, ratio: f64, seed: u64) -> Result<InteractionDataset> {
    ensure!(
        (0.0..=1.0).contains(&ratio),
        Config,
        "noise ratio must be in [0, 1], got {ratio}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for list in &mut out.interactions {
        let n_train = list.iter().filter(|it| it.split == Split::Train).count();
        let mut taken = vec![false; ds.n_items()];
        for it in list.iter() {
            taken[it.item] = true;
        }
        let free: Vec<usize> = (0..ds.n_items()).filter(|&i| !taken[i]).collect();
        let n_add = floor_count(ratio, n_train).min(free.len());
        if n_add == 0 {
            continue;
        }
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, free.len(), n_add)
            .into_iter()
            .map(|k| free[k])
            .collect();
        picks.sort_unstable();
        list.extend(picks.into_iter().map(|item| Interaction {
            item,
            split: Split::Train,
            timestamp: None,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::chronological_split;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 50,
            n_items: 60,
            n_categories: 4,
            concentration: 0.3,
            interactions_per_user: 10,
            seed: 7,
        }
    }

    fn mean_user_entropy(ds: &InteractionDataset) -> f64 {
        let total: f64 = (0..ds.n_users())
            .map(|u| {
                ds.user_preference(u, &Split::ALL)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.ln())
                    .sum::<f64>()
            })
            .sum();
        total / ds.n_users() as f64
    }

    #[test]
    fn toy_is_deterministic() {
        let a = generate_toy(&spec()).unwrap();
        let b = generate_toy(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_toy(&SyntheticSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_shape() {
        let ds = generate_toy(&spec()).unwrap();
        assert_eq!(ds.n_interactions(), 500);
        assert!(ds.interactions.iter().all(|l| l.len() == 10));
        assert_eq!(ds.categories.categories_of(5), vec![1]);
    }

    #[test]
    fn toy_rejects_infeasible_spec() {
        let bad = SyntheticSpec { interactions_per_user: 60, ..spec() };
        assert!(generate_toy(&bad).is_err());
        let bad = SyntheticSpec { n_items: 3, ..spec() };
        assert!(generate_toy(&bad).is_err());
    }

    #[test]
    fn toy_concentration_controls_skew() {
        let flat = generate_toy(&SyntheticSpec { concentration: 1e4, ..spec() }).unwrap();
        let skewed = generate_toy(&spec()).unwrap();
        let max_entropy = 4f64.ln();
        // Ten draws per user bias the plug-in entropy below the taste entropy.
        assert!(mean_user_entropy(&flat) > 0.8 * max_entropy);
        assert!(mean_user_entropy(&skewed) < mean_user_entropy(&flat));
    }

    #[test]
    fn reference_toy_users_are_skewed() {
        let ds = generate_toy(&SyntheticSpec {
            n_users: 500,
            n_items: 300,
            n_categories: 6,
            concentration: 0.3,
            interactions_per_user: 40,
            seed: 7,
        })
        .unwrap();
        // Mean per-user category entropy, normalized by ln 6 like Entropy@K.
        let h = mean_user_entropy(&ds) / 6f64.ln();
        assert!(h < 1.0, "mean user entropy {h}");
        assert!((h - REFERENCE_TOY_ENTROPY).abs() < 1e-9, "mean user entropy {h}");
    }

    // Measured once from the seed-7 reference toy and pinned as a regression value.
    const REFERENCE_TOY_ENTROPY: f64 = 0.576_621_052_516_476_8;

    #[test]
    fn bottom_counts() {
        assert_eq!(bottom_count(10), 3);
        assert_eq!(bottom_count(2), 1);
        assert_eq!(bottom_count(1), 1);
        assert_eq!(bottom_count(6), 1);
    }

    #[test]
    fn semi_synthetic_test_items_hit_selected_categories() {
        let ds = generate_toy(&spec()).unwrap();
        let semi = build_semi_synthetic(&ds).unwrap();
        let out = &semi.dataset;
        assert_eq!(out.n_users() + semi.report.dropped_users.len(), ds.n_users());
        for u in 0..out.n_users() {
            let selected = &semi.report.selected_categories[u];
            let test = out.user_items(u, &[Split::Test]);
            assert!(!test.is_empty());
            for i in test {
                assert!(selected.iter().any(|&c| out.categories.row(i)[c] > 0.0));
            }
            for i in out.user_items(u, &[Split::Train, Split::Valid]) {
                assert!(selected.iter().all(|&c| out.categories.row(i)[c] == 0.0));
            }
            let n_rest = out.user_items(u, &[Split::Train, Split::Valid]).len();
            assert_eq!(out.user_items(u, &[Split::Train]).len(), floor_count(0.8, n_rest));
            let y = &semi.target_prefs[u];
            assert!((y.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn semi_synthetic_picks_least_consumed_category() {
        // One user: 3 items in c0, 2 in c1, 1 in c2 -> c2 selected.
        let f = ItemCategoryMatrix::from_memberships(
            &[vec![0], vec![0], vec![0], vec![1], vec![1], vec![2]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let list = (0..6)
            .map(|i| Interaction { item: i, split: Split::Train, timestamp: Some(i as i64) })
            .collect();
        let ds = InteractionDataset::new(
            vec!["u".into()],
            (0..6).map(|i| i.to_string()).collect(),
            f,
            vec![list],
        )
        .unwrap();
        let semi = build_semi_synthetic(&ds).unwrap();
        assert_eq!(semi.report.selected_categories, vec![vec![2]]);
        assert_eq!(semi.dataset.user_items(0, &[Split::Test]), vec![5]);
        assert_eq!(semi.target_prefs[0].to_vec(), vec![0.0, 0.0, 1.0]);
        // 5 remaining: 4 train, 1 valid.
        assert_eq!(semi.dataset.user_items(0, &[Split::Train]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn noise_ratio_zero_is_identity() {
        let ds = chronological_split(&generate_toy(&spec()).unwrap(), (0.6, 0.2, 0.2), None).unwrap();
        assert_eq!(inject_noise(&ds, 0.0, 1).unwrap(), ds);
    }

    #[test]
    fn noise_adds_floor_ratio_unseen_train_items() {
        let ds = chronological_split(&generate_toy(&spec()).unwrap(), (0.6, 0.2, 0.2), None).unwrap();
        let noisy = inject_noise(&ds, 0.3, 1).unwrap();
        for u in 0..ds.n_users() {
            let before = ds.user_items(u, &[Split::Train]);
            let after = noisy.user_items(u, &[Split::Train]);
            // 10 interactions -> 6 train -> floor(1.8) = 1 added.
            assert_eq!(after.len(), before.len() + 1);
            let held_out = ds.user_items(u, &[Split::Valid, Split::Test]);
            for i in after.iter().filter(|i| !before.contains(i)) {
                assert!(!held_out.contains(i));
            }
            assert_eq!(noisy.user_items(u, &[Split::Test]), ds.user_items(u, &[Split::Test]));
        }
        assert_eq!(inject_noise(&ds, 0.3, 1).unwrap(), noisy);
        assert!(inject_noise(&ds, 1.5, 1).is_err());
    }
}
