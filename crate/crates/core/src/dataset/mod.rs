//! Interaction data: ingestion, preprocessing and derived category preferences.
//!
//! Interactions are stored sparsely, grouped per user in chronological order.
//! Every interaction carries a split label; an unsplit dataset labels
//! everything [`Split::Train`].

mod io;
mod synth;

pub use io::{
    from_events, load_dataset, load_interactions, read_categories, read_events, save_dataset,
    LoadReport,
};
pub use synth::{
    build_semi_synthetic, generate_toy, inject_noise, SemiSynthetic, SemiSyntheticReport,
    SyntheticSpec,
};

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::LOG_EPS;

/// One raw log line before indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub user_id: String,
    pub item_id: String,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

/// Keeps events rated above the middle of the rating scale.
///
/// Events without a rating are implicit positives and always kept.
pub fn binarize(events: Vec<RawEvent>, scale_max: f64) -> Result<Vec<RawEvent>> {
    ensure!(
        scale_max > 0.0 && scale_max.is_finite(),
        Config,
        "scale_max must be positive, got {scale_max}"
    );
    let threshold = scale_max / 2.0;
    Ok(events
        .into_iter()
        .filter(|e| e.rating.is_none_or(|r| r > threshold))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub item: usize,
    pub split: Split,
    pub timestamp: Option<i64>,
}

/// Item to category distribution. Row `i` spreads unit mass evenly over the
/// categories of item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCategoryMatrix {
    weights: Array2<f64>,
    names: Vec<String>,
}

impl ItemCategoryMatrix {
    /// Builds from per-item category index lists.
    pub fn from_memberships(memberships: &[Vec<usize>], names: Vec<String>) -> Result<Self> {
        let mut weights = Array2::zeros((memberships.len(), names.len()));
        for (item, cats) in memberships.iter().enumerate() {
            ensure!(!cats.is_empty(), Data, "item {item} has no categories");
            for &c in cats {
                ensure!(c < names.len(), Data, "category index {c} out of range");
                weights[[item, c]] = 1.0;
            }
        }
        Self::from_weights(weights, names)
    }

    /// Builds from a nonnegative matrix, normalizing every row to sum 1.
    pub fn from_weights(mut weights: Array2<f64>, names: Vec<String>) -> Result<Self> {
        ensure!(
            weights.ncols() == names.len(),
            Contract,
            "{} category columns but {} names",
            weights.ncols(),
            names.len()
        );
        for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
            ensure!(
                row.iter().all(|&v| v >= 0.0 && v.is_finite()),
                Data,
                "item {i} has a negative or non-finite category weight"
            );
            let sum = row.sum();
            ensure!(sum > 0.0, Data, "item {i} has no categories");
            row /= sum;
        }
        Ok(Self { weights, names })
    }

    pub fn n_items(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_categories(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, item: usize) -> ArrayView1<'_, f64> {
        self.weights.row(item)
    }

    /// Category indices with nonzero mass for `item`.
    pub fn categories_of(&self, item: usize) -> Vec<usize> {
        self.weights
            .row(item)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Users x items binary interactions with category metadata and split labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub categories: ItemCategoryMatrix,
    /// Per user, interactions in chronological order.
    pub interactions: Vec<Vec<Interaction>>,
    /// Seed of the generator or shuffle that produced this dataset, if any.
    pub seed: Option<u64>,
}

impl InteractionDataset {
    pub fn new(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        categories: ItemCategoryMatrix,
        interactions: Vec<Vec<Interaction>>,
    ) -> Result<Self> {
        ensure!(
            user_ids.len() == interactions.len(),
            Contract,
            "{} user ids for {} interaction lists",
            user_ids.len(),
            interactions.len()
        );
        ensure!(
            item_ids.len() == categories.n_items(),
            Contract,
            "{} item ids for {} category rows",
            item_ids.len(),
            categories.n_items()
        );
        for (u, list) in interactions.iter().enumerate() {
            let mut seen = vec![false; item_ids.len()];
            for it in list {
                ensure!(it.item < item_ids.len(), Contract, "user {u}: item index {} out of range", it.item);
                ensure!(!seen[it.item], Contract, "user {u}: duplicate item {}", it.item);
                seen[it.item] = true;
            }
        }
        Ok(Self {
            user_ids,
            item_ids,
            categories,
            interactions,
            seed: None,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.n_categories()
    }

    pub fn n_interactions(&self) -> usize {
        self.interactions.iter().map(Vec::len).sum()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.interactions
            .iter()
            .flatten()
            .filter(|it| it.split == split)
            .count()
    }

    /// True when any interaction is labeled valid or test.
    pub fn is_split(&self) -> bool {
        self.interactions
            .iter()
            .flatten()
            .any(|it| it.split != Split::Train)
    }

    pub fn user_items(&self, user: usize, splits: &[Split]) -> Vec<usize> {
        self.interactions[user]
            .iter()
            .filter(|it| splits.contains(&it.split))
            .map(|it| it.item)
            .collect()
    }

    /// Binary indicator vector of the user's items in `splits`.
    pub fn user_vector(&self, user: usize, splits: &[Split]) -> Array1<f64> {
        let mut x = Array1::zeros(self.n_items());
        for i in self.user_items(user, splits) {
            x[i] = 1.0;
        }
        x
    }

    /// Dense `|U| x |I|` binary matrix restricted to `splits`.
    pub fn matrix(&self, splits: &[Split]) -> Array2<f64> {
        let mut x = Array2::zeros((self.n_users(), self.n_items()));
        for (u, list) in self.interactions.iter().enumerate() {
            for it in list.iter().filter(|it| splits.contains(&it.split)) {
                x[[u, it.item]] = 1.0;
            }
        }
        x
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Category preference of `user` computed from the items in `splits`.
    pub fn user_preference(&self, user: usize, splits: &[Split]) -> Array1<f64> {
        preference_of_items(&self.user_items(user, splits), &self.categories)
    }

    /// Keeps only the listed users and items (in the given order) and drops
    /// categories not in `keep_categories`. Item rows are renormalized.
    fn restrict(
        &self,
        keep_users: &[usize],
        keep_items: &[usize],
        keep_categories: &[usize],
    ) -> Result<Self> {
        let mut item_map = vec![usize::MAX; self.n_items()];
        for (new, &old) in keep_items.iter().enumerate() {
            item_map[old] = new;
        }
        let mut weights = Array2::zeros((keep_items.len(), keep_categories.len()));
        for (ni, &oi) in keep_items.iter().enumerate() {
            for (nc, &oc) in keep_categories.iter().enumerate() {
                weights[[ni, nc]] = self.categories.weights[[oi, oc]];
            }
        }
        let names = keep_categories
            .iter()
            .map(|&c| self.categories.names[c].clone())
            .collect();
        let categories = ItemCategoryMatrix::from_weights(weights, names)?;
        let interactions = keep_users
            .iter()
            .map(|&u| {
                self.interactions[u]
                    .iter()
                    .filter(|it| item_map[it.item] != usize::MAX)
                    .map(|it| Interaction {
                        item: item_map[it.item],
                        ..*it
                    })
                    .collect()
            })
            .collect();
        let mut out = Self::new(
            keep_users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            keep_items.iter().map(|&i| self.item_ids[i].clone()).collect(),
            categories,
            interactions,
        )?;
        out.seed = self.seed;
        Ok(out)
    }
}

/// Peels users, items and categories with fewer than `k` interactions until
/// nothing changes.
///
/// A category's count is the number of interactions whose item carries mass
/// on it. Items whose categories were all removed are dropped with them.
pub fn k_core_filter(ds: &InteractionDataset, k: usize) -> Result<InteractionDataset> {
    ensure!(k >= 1, Config, "k must be at least 1");
    let n_cats = ds.n_categories();
    let mut user_alive = vec![true; ds.n_users()];
    let mut item_alive = vec![true; ds.n_items()];
    let mut cat_alive = vec![true; n_cats];
    let item_cats: Vec<Vec<usize>> = (0..ds.n_items())
        .map(|i| ds.categories.categories_of(i))
        .collect();

    loop {
        let mut user_deg = vec![0usize; ds.n_users()];
        let mut item_deg = vec![0usize; ds.n_items()];
        let mut cat_deg = vec![0usize; n_cats];
        for (u, list) in ds.interactions.iter().enumerate() {
            if !user_alive[u] {
                continue;
            }
            for it in list.iter().filter(|it| item_alive[it.item]) {
                user_deg[u] += 1;
                item_deg[it.item] += 1;
                for &c in item_cats[it.item].iter().filter(|&&c| cat_alive[c]) {
                    cat_deg[c] += 1;
                }
            }
        }

        let mut changed = false;
        for (alive, deg) in user_alive
            .iter_mut()
            .zip(&user_deg)
            .chain(item_alive.iter_mut().zip(&item_deg))
            .chain(cat_alive.iter_mut().zip(&cat_deg))
        {
            if *alive && *deg < k {
                *alive = false;
                changed = true;
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && !item_cats[i].iter().any(|&c| cat_alive[c]) {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let keep_users: Vec<usize> = (0..ds.n_users()).filter(|&u| user_alive[u]).collect();
    let keep_items: Vec<usize> = (0..ds.n_items()).filter(|&i| item_alive[i]).collect();
    let keep_cats: Vec<usize> = (0..n_cats).filter(|&c| cat_alive[c]).collect();
    if keep_users.is_empty() || keep_items.is_empty() || keep_cats.is_empty() {
        return Err(Error::Data(format!(
            "dataset annihilated by {k}-core filtering"
        )));
    }
    ds.restrict(&keep_users, &keep_items, &keep_cats)
}

/// Number of leading elements that go to a split of fraction `ratio`.
pub(crate) fn floor_count(ratio: f64, n: usize) -> usize {
    // The epsilon absorbs binary representation error (0.6 * 15 = 8.999...).
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Per-user split into train/valid/test by chronological order.
///
/// Train and valid take `floor(ratio * n)` interactions; test gets the
/// remainder. With `shuffle_seed` set, each user's interactions are shuffled
/// with that seed first instead of using timestamps.
pub fn chronological_split(
    ds: &InteractionDataset,
    ratios: (f64, f64, f64),
    shuffle_seed: Option<u64>,
) -> Result<InteractionDataset> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let (tr, va, te) = ratios;
    ensure!(
        tr >= 0.0 && va >= 0.0 && te >= 0.0 && ((tr + va + te) - 1.0).abs() < 1e-9,
        Config,
        "split ratios must be nonnegative and sum to 1, got ({tr}, {va}, {te})"
    );
    let mut out = ds.clone();
    let mut rng = shuffle_seed.map(rand_chacha::ChaCha8Rng::seed_from_u64);
    for list in &mut out.interactions {
        match rng.as_mut() {
            Some(rng) => list.shuffle(rng),
            None => sort_chronologically(list),
        }
        let n = list.len();
        let n_train = floor_count(tr, n);
        let n_valid = floor_count(va, n).min(n - n_train);
        for (pos, it) in list.iter_mut().enumerate() {
            it.split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
    }
    if shuffle_seed.is_some() {
        out.seed = shuffle_seed;
    }
    Ok(out)
}

/// Stable sort by timestamp; events without one keep their relative order
/// after all timestamped events.
pub(crate) fn sort_chronologically(list: &mut [Interaction]) {
    list.sort_by_key(|it| it.timestamp.unwrap_or(i64::MAX));
}

/// `y = F^T x / ||F^T x||_1`. An all-zero `x` maps to the all-zero vector.
pub fn category_preference(x: ArrayView1<'_, f64>, f: &ItemCategoryMatrix) -> Result<Array1<f64>> {
    ensure!(
        x.len() == f.n_items(),
        Contract,
        "interaction vector has {} entries, category matrix has {} items",
        x.len(),
        f.n_items()
    );
    let mass = f.weights.t().dot(&x);
    Ok(l1_normalized(mass))
}

/// Same as [`category_preference`] for a list of item indices.
pub fn preference_of_items(items: &[usize], f: &ItemCategoryMatrix) -> Array1<f64> {
    let mut mass = Array1::zeros(f.n_categories());
    for &i in items {
        mass += &f.weights.row(i);
    }
    l1_normalized(mass)
}

fn l1_normalized(mut v: Array1<f64>) -> Array1<f64> {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total > 0.0 {
        v /= total;
    }
    v
}

/// Aggregate category distribution of everything in `split`.
pub fn split_category_distribution(ds: &InteractionDataset, split: Split) -> Array1<f64> {
    let items: Vec<usize> = ds
        .interactions
        .iter()
        .flatten()
        .filter(|it| it.split == split)
        .map(|it| it.item)
        .collect();
    preference_of_items(&items, &ds.categories)
}

/// `KL(p_test || p_train)` over aggregate category distributions.
///
/// Zero training mass is replaced by [`LOG_EPS`].
pub fn category_kl(ds: &InteractionDataset) -> f64 {
    let p_test = split_category_distribution(ds, Split::Test);
    let p_train = split_category_distribution(ds, Split::Train);
    kl_divergence(p_test.view(), p_train.view())
}

pub(crate) fn kl_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            let qi = if qi > 0.0 { qi } else { LOG_EPS };
            pi * (pi / qi).ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn cats(memberships: &[Vec<usize>], n: usize) -> ItemCategoryMatrix {
        let names = (0..n).map(|c| format!("c{c}")).collect();
        ItemCategoryMatrix::from_memberships(memberships, names).unwrap()
    }

    fn dataset(n_users: usize, edges: &[(usize, usize)], memberships: &[Vec<usize>], n_cats: usize) -> InteractionDataset {
        let mut interactions = vec![Vec::new(); n_users];
        for (pos, &(u, i)) in edges.iter().enumerate() {
            interactions[u].push(Interaction {
                item: i,
                split: Split::Train,
                timestamp: Some(pos as i64),
            });
        }
        InteractionDataset::new(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..memberships.len()).map(|i| format!("i{i}")).collect(),
            cats(memberships, n_cats),
            interactions,
        )
        .unwrap()
    }

    fn ev(rating: Option<f64>) -> RawEvent {
        RawEvent {
            user_id: "u".into(),
            item_id: "i".into(),
            rating,
            timestamp: None,
        }
    }

    #[test]
    fn binarize_keeps_above_midpoint() {
        let kept = binarize(vec![ev(Some(4.0)), ev(Some(3.0)), ev(Some(2.0)), ev(None)], 5.0).unwrap();
        assert_eq!(kept, vec![ev(Some(4.0)), ev(Some(3.0)), ev(None)]);
        let kept = binarize(vec![ev(Some(8.0)), ev(Some(5.0))], 10.0).unwrap();
        assert_eq!(kept, vec![ev(Some(8.0))]);
        assert!(matches!(binarize(vec![], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn k_core_one_is_noop() {
        let ds = dataset(2, &[(0, 0), (0, 1), (1, 0)], &[vec![0], vec![1]], 2);
        assert_eq!(k_core_filter(&ds, 1).unwrap(), ds);
    }

    #[test]
    fn k_core_chain_annihilates() {
        // u0-i0, u1-i0, u1-i1: first pass drops u0 and i1, second drops the rest.
        let ds = dataset(2, &[(0, 0), (1, 0), (1, 1)], &[vec![0], vec![0]], 1);
        let err = k_core_filter(&ds, 2).unwrap_err();
        assert!(err.to_string().contains("annihilated"), "{err}");
    }

    #[test]
    fn k_core_complete_bipartite_unchanged() {
        let edges: Vec<_> = (0..3).flat_map(|u| (0..3).map(move |i| (u, i))).collect();
        let ds = dataset(3, &edges, &[vec![0], vec![0], vec![0]], 1);
        assert_eq!(k_core_filter(&ds, 2).unwrap(), ds);
    }

    #[test]
    fn k_core_drops_category_with_its_items() {
        // Items 0..3 are in c0 and fully connected; item 3 is the only c1 item
        // and has one interaction, so c1 goes away with it.
        let mut edges: Vec<_> = (0..3).flat_map(|u| (0..3).map(move |i| (u, i))).collect();
        edges.push((0, 3));
        let ds = dataset(3, &edges, &[vec![0], vec![0], vec![0], vec![1]], 2);
        let out = k_core_filter(&ds, 2).unwrap();
        assert_eq!(out.n_items(), 3);
        assert_eq!(out.n_categories(), 1);
        assert_eq!(out.categories.names(), ["c0".to_string()]);
        assert_eq!(out.n_interactions(), 9);
    }

    #[test]
    fn k_core_result_meets_threshold() {
        let edges: Vec<_> = (0..6)
            .flat_map(|u| (0..6).filter(move |i| (u + i) % 3 != 0).map(move |i| (u, i)))
            .chain([(6, 0)])
            .collect();
        let ds = dataset(7, &edges, &(0..6).map(|i| vec![i % 2]).collect::<Vec<_>>(), 2);
        let out = k_core_filter(&ds, 3).unwrap();
        assert!(out.n_users() < ds.n_users());
        for list in &out.interactions {
            assert!(list.len() >= 3);
        }
        let mut item_deg = vec![0; out.n_items()];
        let mut cat_deg = vec![0; out.n_categories()];
        for it in out.interactions.iter().flatten() {
            item_deg[it.item] += 1;
            for c in out.categories.categories_of(it.item) {
                cat_deg[c] += 1;
            }
        }
        assert!(item_deg.iter().chain(&cat_deg).all(|&d| d >= 3));
        for row in out.categories.weights().rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn split_counts_follow_floor_rule() {
        for (n, expect) in [(10, (6, 2, 2)), (7, (4, 1, 2)), (1, (0, 0, 1)), (15, (9, 3, 3))] {
            let edges: Vec<_> = (0..n).map(|i| (0, i)).collect();
            let ds = dataset(1, &edges, &vec![vec![0]; n], 1);
            let out = chronological_split(&ds, (0.6, 0.2, 0.2), None).unwrap();
            let got = (
                out.split_count(Split::Train),
                out.split_count(Split::Valid),
                out.split_count(Split::Test),
            );
            assert_eq!(got, expect, "n = {n}");
            assert_eq!(got.0 + got.1 + got.2, n);
        }
    }

    #[test]
    fn split_is_chronological() {
        let mut ds = dataset(1, &[(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)], &vec![vec![0]; 5], 1);
        // Reverse the timestamps: item 4 is now the oldest.
        for it in &mut ds.interactions[0] {
            it.timestamp = Some(10 - it.item as i64);
        }
        let out = chronological_split(&ds, (0.6, 0.2, 0.2), None).unwrap();
        assert_eq!(out.user_items(0, &[Split::Train]), vec![4, 3, 2]);
        assert_eq!(out.user_items(0, &[Split::Test]), vec![0]);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let ds = dataset(1, &[(0, 0)], &[vec![0]], 1);
        assert!(matches!(
            chronological_split(&ds, (0.5, 0.2, 0.2), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shuffled_split_is_seeded() {
        let edges: Vec<_> = (0..20).map(|i| (0, i)).collect();
        let ds = dataset(1, &edges, &vec![vec![0]; 20], 1);
        let a = chronological_split(&ds, (0.6, 0.2, 0.2), Some(3)).unwrap();
        let b = chronological_split(&ds, (0.6, 0.2, 0.2), Some(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.user_items(0, &[Split::Train]), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn preference_examples() {
        let f = ItemCategoryMatrix::from_weights(
            array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.5]],
            (0..4).map(|c| c.to_string()).collect(),
        )
        .unwrap();
        let y = category_preference(array![1.0, 0.0].view(), &f).unwrap();
        assert_eq!(y, array![1.0, 0.0, 0.0, 0.0]);
        let y = category_preference(array![1.0, 1.0].view(), &f).unwrap();
        assert_abs_diff_eq!(y, array![0.5, 0.25, 0.0, 0.25], epsilon = 1e-15);
        let y = category_preference(array![0.0, 0.0].view(), &f).unwrap();
        assert_eq!(y, Array1::<f64>::zeros(4));
        assert!(matches!(
            category_preference(array![1.0].view(), &f),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn kl_examples() {
        assert_abs_diff_eq!(
            kl_divergence(array![1.0, 0.0].view(), array![0.5, 0.5].view()),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(kl_divergence(array![0.3, 0.7].view(), array![0.3, 0.7].view()), 0.0);
        // Zero train mass is smoothed, not infinite.
        let kl = kl_divergence(array![0.5, 0.5].view(), array![1.0, 0.0].view());
        assert!(kl.is_finite() && kl > 5.0);
    }

    #[test]
    fn category_kl_on_identical_splits_is_zero() {
        let ds = dataset(2, &[(0, 0), (0, 1), (1, 0), (1, 1)], &[vec![0], vec![1]], 2);
        let mut ds = ds;
        ds.interactions[1][0].split = Split::Test;
        ds.interactions[1][1].split = Split::Test;
        assert_abs_diff_eq!(category_kl(&ds), 0.0, epsilon = 1e-15);
    }
}
