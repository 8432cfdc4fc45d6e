//! Rating data: ingestion, preprocessing, splits, and sampling.
//!
//! A [`RatingDataset`] is an immutable explicit-feedback matrix in dense
//! 0-based index space. All randomized operations take an explicit seed and
//! are pure functions of `(input, seed)`, so datasets can be shared read-only
//! across parallel workers.

mod loader;
pub mod synthetic;

pub use loader::{load_ratings, Format, LoadOptions};

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// Inclusive rating bounds of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Self {
        assert!(min < max, "rating scale must satisfy min < max");
        Self { min, max }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    /// Normalize a rating to [0, 1] as `r / max`.
    pub fn normalize(&self, r: f64) -> f64 {
        r / self.max
    }

    /// De-normalize a [0, 1] score back to the rating scale, clamped.
    pub fn denormalize(&self, y: f64) -> f64 {
        (y * self.max).clamp(self.min, self.max)
    }
}

/// One explicit-feedback event in dense index space.
///
/// `timestamp` falls back to the record's file position when the source has
/// no timestamp column, so recency ordering is always defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// A raw parsed record before index densification.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Sparse explicit-feedback matrix with contiguous 0-based user/item indices.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    pub name: String,
    pub interactions: Vec<Interaction>,
    pub num_users: usize,
    pub num_items: usize,
    pub scale: RatingScale,
    /// Original labels, indexed by dense id.
    pub user_labels: Vec<String>,
    pub item_labels: Vec<String>,
}

impl RatingDataset {
    /// Densify raw records into contiguous indices (order of first
    /// appearance) and deduplicate `(user, item)` pairs, keeping the entry
    /// with the largest timestamp (ties: the later file position).
    pub fn from_records(
        name: impl Into<String>,
        records: Vec<RawRecord>,
        scale: RatingScale,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut user_ids: std::collections::HashMap<String, u32> = Default::default();
        let mut item_ids: std::collections::HashMap<String, u32> = Default::default();
        let mut user_labels = Vec::new();
        let mut item_labels = Vec::new();
        let mut interactions: Vec<Interaction> = Vec::with_capacity(records.len());
        // (user, item) -> position of the kept interaction
        let mut seen: std::collections::HashMap<(u32, u32), usize> = Default::default();

        for (pos, rec) in records.into_iter().enumerate() {
            let user = *user_ids.entry(rec.user.clone()).or_insert_with(|| {
                user_labels.push(rec.user.clone());
                (user_labels.len() - 1) as u32
            });
            let item = *item_ids.entry(rec.item.clone()).or_insert_with(|| {
                item_labels.push(rec.item.clone());
                (item_labels.len() - 1) as u32
            });
            let timestamp = rec.timestamp.unwrap_or(pos as i64);
            let inter = Interaction {
                user,
                item,
                rating: rec.rating,
                timestamp,
            };
            match seen.get(&(user, item)) {
                Some(&kept) => {
                    // Later position wins on equal timestamps.
                    if timestamp >= interactions[kept].timestamp {
                        interactions[kept] = inter;
                    }
                }
                None => {
                    interactions.push(inter);
                    seen.insert((user, item), interactions.len() - 1);
                }
            }
        }

        let ds = Self {
            name: name.into(),
            interactions,
            num_users: user_labels.len(),
            num_items: item_labels.len(),
            scale,
            user_labels,
            item_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for it in &self.interactions {
            if !self.scale.contains(it.rating) {
                return Err(Error::InvalidConfig(format!(
                    "rating {} outside declared scale [{}, {}]",
                    it.rating, self.scale.min, self.scale.max
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// |interactions| / (num_users * num_items).
    pub fn density(&self) -> f64 {
        self.interactions.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Positions into `interactions`, grouped by user, in file order.
    pub fn positions_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.num_users];
        for (pos, it) in self.interactions.iter().enumerate() {
            by_user[it.user as usize].push(pos);
        }
        by_user
    }

    /// Item sets per user.
    pub fn items_by_user(&self) -> Vec<Vec<u32>> {
        let mut by_user = vec![Vec::new(); self.num_users];
        for it in &self.interactions {
            by_user[it.user as usize].push(it.item);
        }
        by_user
    }

    /// Per-user and per-item sparse profiles with ratings normalized to
    /// [0, 1], entries sorted by index for deterministic accumulation order.
    ///
    /// The user profile of `u` is the u-th row of the rating matrix; the item
    /// profile of `i` is the i-th column.
    pub fn normalized_profiles(&self) -> (Vec<Vec<(u32, f64)>>, Vec<Vec<(u32, f64)>>) {
        let mut users = vec![Vec::new(); self.num_users];
        let mut items = vec![Vec::new(); self.num_items];
        for it in &self.interactions {
            let r = self.scale.normalize(it.rating);
            users[it.user as usize].push((it.item, r));
            items[it.item as usize].push((it.user, r));
        }
        for p in users.iter_mut().chain(items.iter_mut()) {
            p.sort_unstable_by_key(|&(idx, _)| idx);
        }
        (users, items)
    }

    /// Content hash over the interaction multiset, dimensions, and scale.
    /// Order-independent: two datasets with the same content hash equal.
    pub fn fingerprint(&self) -> String {
        let mut rows: Vec<(u32, u32, u64, i64)> = self
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating.to_bits(), it.timestamp))
            .collect();
        rows.sort_unstable();
        let mut hasher = Sha256::new();
        hasher.update((self.num_users as u64).to_le_bytes());
        hasher.update((self.num_items as u64).to_le_bytes());
        hasher.update(self.scale.min.to_bits().to_le_bytes());
        hasher.update(self.scale.max.to_bits().to_le_bytes());
        for (u, i, r, t) in rows {
            hasher.update(u.to_le_bytes());
            hasher.update(i.to_le_bytes());
            hasher.update(r.to_le_bytes());
            hasher.update(t.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Write the canonical csv format: `user,item,rating,timestamp` with
    /// original labels.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(f, "user,item,rating,timestamp").map_err(io_err)?;
        for it in &self.interactions {
            writeln!(
                f,
                "{},{},{},{}",
                self.user_labels[it.user as usize],
                self.item_labels[it.item as usize],
                it.rating,
                it.timestamp
            )
            .map_err(io_err)?;
        }
        Ok(())
    }
}

/// Iteratively remove items with fewer than `min_item_raters` raters and
/// users with fewer than `min_user_ratings` ratings until both constraints
/// hold, then re-densify indices.
pub fn preprocess(
    dataset: &RatingDataset,
    min_item_raters: usize,
    min_user_ratings: usize,
) -> Result<RatingDataset> {
    assert!(min_item_raters >= 1 && min_user_ratings >= 1, "thresholds must be >= 1");
    let mut kept: Vec<Interaction> = dataset.interactions.clone();
    loop {
        let mut item_counts = vec![0usize; dataset.num_items];
        for it in &kept {
            item_counts[it.item as usize] += 1;
        }
        let before = kept.len();
        kept.retain(|it| item_counts[it.item as usize] >= min_item_raters);

        let mut user_counts = vec![0usize; dataset.num_users];
        for it in &kept {
            user_counts[it.user as usize] += 1;
        }
        kept.retain(|it| user_counts[it.user as usize] >= min_user_ratings);
        if kept.len() == before {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }

    // Re-densify preserving the relative order of surviving ids, so a no-op
    // preprocess is the identity.
    let mut user_map = vec![u32::MAX; dataset.num_users];
    let mut item_map = vec![u32::MAX; dataset.num_items];
    let mut user_alive = vec![false; dataset.num_users];
    let mut item_alive = vec![false; dataset.num_items];
    for it in &kept {
        user_alive[it.user as usize] = true;
        item_alive[it.item as usize] = true;
    }
    let mut user_labels = Vec::new();
    for (old, &alive) in user_alive.iter().enumerate() {
        if alive {
            user_map[old] = user_labels.len() as u32;
            user_labels.push(dataset.user_labels[old].clone());
        }
    }
    let mut item_labels = Vec::new();
    for (old, &alive) in item_alive.iter().enumerate() {
        if alive {
            item_map[old] = item_labels.len() as u32;
            item_labels.push(dataset.item_labels[old].clone());
        }
    }
    for it in kept.iter_mut() {
        it.user = user_map[it.user as usize];
        it.item = item_map[it.item as usize];
    }
    Ok(RatingDataset {
        name: dataset.name.clone(),
        interactions: kept,
        num_users: user_labels.len(),
        num_items: item_labels.len(),
        scale: dataset.scale,
        user_labels,
        item_labels,
    })
}

/// One held-out interaction per eligible user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPair {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Leave-one-out split: train set plus one held-out pair per eligible user.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: RatingDataset,
    pub test: Vec<TestPair>,
    /// Users with a single interaction: kept entirely in train, no test pair.
    pub single_interaction_users: Vec<u32>,
}

/// Move each user's most recent interaction (max timestamp; ties broken by
/// larger file position) into the test set. The train set keeps the full
/// user/item index space so test pairs remain addressable.
pub fn leave_one_out_split(dataset: &RatingDataset) -> SplitPair {
    let by_user = dataset.positions_by_user();
    let mut test_positions: HashSet<usize> = HashSet::new();
    let mut test = Vec::new();
    let mut singles = Vec::new();

    for (user, positions) in by_user.iter().enumerate() {
        if positions.len() < 2 {
            if positions.len() == 1 {
                singles.push(user as u32);
            }
            continue;
        }
        // Max timestamp; positions are ascending, so `>=` keeps the later one.
        let mut best = positions[0];
        for &pos in &positions[1..] {
            if dataset.interactions[pos].timestamp >= dataset.interactions[best].timestamp {
                best = pos;
            }
        }
        let it = &dataset.interactions[best];
        test.push(TestPair {
            user: it.user,
            item: it.item,
            rating: it.rating,
            timestamp: it.timestamp,
        });
        test_positions.insert(best);
    }

    let train_interactions: Vec<Interaction> = dataset
        .interactions
        .iter()
        .enumerate()
        .filter(|(pos, _)| !test_positions.contains(pos))
        .map(|(_, it)| *it)
        .collect();

    let train = RatingDataset {
        name: dataset.name.clone(),
        interactions: train_interactions,
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        scale: dataset.scale,
        user_labels: dataset.user_labels.clone(),
        item_labels: dataset.item_labels.clone(),
    };
    SplitPair {
        train,
        test,
        single_interaction_users: singles,
    }
}

/// Uniform sample without replacement from a sorted complement list.
/// Shared by every negative-sampling path so identical seeds give identical
/// draws regardless of the caller.
fn sample_from_complement(mut complement: Vec<u32>, n: usize, seed: u64) -> Vec<u32> {
    if complement.len() <= n {
        return complement;
    }
    let mut rng = seeds::rng(seed, Stream::Negatives, 0);
    for i in 0..n {
        let j = rng.gen_range(i..complement.len());
        complement.swap(i, j);
    }
    complement.truncate(n);
    complement
}

/// Sample `n` items the user never interacted with, uniformly without
/// replacement. Returns the whole complement (with a warning) when fewer
/// than `n` items are available.
pub fn sample_negatives(
    dataset: &RatingDataset,
    user_id: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    sample_negatives_excluding(dataset, user_id, &[], n, seed)
}

/// [`sample_negatives`] with extra excluded items (e.g. a held-out test item
/// that is no longer part of the training dataset).
pub fn sample_negatives_excluding(
    dataset: &RatingDataset,
    user_id: usize,
    extra_excluded: &[u32],
    n: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    if user_id >= dataset.num_users {
        return Err(Error::UnknownUser(user_id));
    }
    let mut interacted = vec![false; dataset.num_items];
    for it in &dataset.interactions {
        if it.user as usize == user_id {
            interacted[it.item as usize] = true;
        }
    }
    for &i in extra_excluded {
        if (i as usize) < dataset.num_items {
            interacted[i as usize] = true;
        }
    }
    let complement: Vec<u32> = (0..dataset.num_items as u32)
        .filter(|&i| !interacted[i as usize])
        .collect();
    if complement.len() < n {
        log::warn!(
            "user {user_id}: only {} non-interacted items available (requested {n})",
            complement.len()
        );
    }
    Ok(sample_from_complement(complement, n, seed))
}

/// Resample `ceil(fraction * N)` interactions with replacement. The
/// user/item index space is preserved (no re-densification).
pub fn bootstrap(dataset: &RatingDataset, fraction: f64, seed: u64) -> RatingDataset {
    assert!(fraction > 0.0, "bootstrap fraction must be > 0");
    let n = dataset.interactions.len();
    let size = (fraction * n as f64).ceil() as usize;
    let mut rng = seeds::rng(seed, Stream::Bootstrap, 0);
    let interactions: Vec<Interaction> = (0..size)
        .map(|_| dataset.interactions[rng.gen_range(0..n)])
        .collect();
    RatingDataset {
        name: dataset.name.clone(),
        interactions,
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        scale: dataset.scale,
        user_labels: dataset.user_labels.clone(),
        item_labels: dataset.item_labels.clone(),
    }
}

/// Uniform sample WITHOUT replacement of `ceil(fraction * N)` interactions,
/// preserving the original file order (so `fraction = 1.0` is the identity).
pub fn subset(dataset: &RatingDataset, fraction: f64, seed: u64) -> RatingDataset {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "subset fraction must be in (0, 1]"
    );
    let n = dataset.interactions.len();
    let size = (fraction * n as f64).ceil() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seeds::rng(seed, Stream::Subset, 0);
    for i in 0..size.min(n) {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(size.min(n));
    indices.sort_unstable();
    let interactions: Vec<Interaction> =
        indices.iter().map(|&i| dataset.interactions[i]).collect();
    RatingDataset {
        name: dataset.name.clone(),
        interactions,
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        scale: dataset.scale,
        user_labels: dataset.user_labels.clone(),
        item_labels: dataset.item_labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn rec(u: &str, i: &str, r: f64, t: Option<i64>) -> RawRecord {
        RawRecord {
            user: u.into(),
            item: i.into(),
            rating: r,
            timestamp: t,
        }
    }

    fn toy() -> RatingDataset {
        synthetic::toy(30, 25, 260, 11)
    }

    #[test]
    fn from_records_densifies_and_counts() {
        let ds = RatingDataset::from_records(
            "t",
            vec![
                rec("a", "x", 3.0, None),
                rec("a", "y", 4.0, None),
                rec("b", "x", 5.0, None),
            ],
            RatingScale::new(1.0, 5.0),
        )
        .unwrap();
        assert_eq!(ds.num_users, 2);
        assert_eq!(ds.num_items, 2);
        assert_eq!(ds.len(), 3);
        // File-order timestamps when the source has none.
        assert_eq!(ds.interactions[2].timestamp, 2);
    }

    #[test]
    fn from_records_dedups_keeping_latest() {
        let ds = RatingDataset::from_records(
            "t",
            vec![
                rec("a", "x", 3.0, Some(100)),
                rec("a", "x", 1.0, Some(50)),
                rec("a", "y", 2.0, Some(10)),
            ],
            RatingScale::new(1.0, 5.0),
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.interactions[0].rating, 3.0);
    }

    #[test]
    fn empty_records_error() {
        let err = RatingDataset::from_records("t", vec![], RatingScale::new(1.0, 5.0));
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn rating_outside_scale_rejected() {
        let err = RatingDataset::from_records(
            "t",
            vec![rec("a", "x", 9.0, None)],
            RatingScale::new(1.0, 5.0),
        );
        assert!(err.is_err());
    }

    /// Independent fixpoint oracle: re-checks both constraints from scratch
    /// after every removal pass over (user, item, rating) triples.
    fn fixpoint_reference(
        rows: &[(String, String, f64)],
        min_item: usize,
        min_user: usize,
    ) -> Vec<(String, String, f64)> {
        let mut rows: Vec<(String, String, f64)> = rows.to_vec();
        loop {
            let mut item_counts: HashMap<&str, usize> = HashMap::new();
            let mut user_counts: HashMap<&str, usize> = HashMap::new();
            for (u, i, _) in &rows {
                *item_counts.entry(i).or_default() += 1;
                *user_counts.entry(u).or_default() += 1;
            }
            let next: Vec<(String, String, f64)> = rows
                .iter()
                .filter(|(u, i, _)| {
                    item_counts[i.as_str()] >= min_item && user_counts[u.as_str()] >= min_user
                })
                .cloned()
                .collect();
            if next.len() == rows.len() {
                return rows;
            }
            rows = next;
        }
    }

    #[test]
    fn preprocess_noop_on_satisfying_dataset() {
        let ds = toy(); // generated with margins >= (2, 4)
        let out = preprocess(&ds, 2, 4).unwrap();
        assert_eq!(out.len(), ds.len());
        let mut a: Vec<_> = ds
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating.to_bits()))
            .collect();
        let mut b: Vec<_> = out
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating.to_bits()))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn preprocess_cascades_to_fixpoint_matching_oracle() {
        // Item "weak" has 4 raters; user "frail" relies on it to stay at
        // threshold 3, so removing the item also removes the user.
        let mut rows: Vec<(String, String, f64)> = Vec::new();
        for u in ["a", "b", "c", "frail"] {
            rows.push((u.to_string(), "weak".to_string(), 3.0));
        }
        for u in ["a", "b", "c", "d", "e"] {
            for i in ["p", "q", "r", "s"] {
                rows.push((u.to_string(), i.to_string(), 4.0));
            }
        }
        rows.push(("frail".to_string(), "p".to_string(), 2.0));
        rows.push(("frail".to_string(), "q".to_string(), 2.0));

        let recs: Vec<RawRecord> = rows
            .iter()
            .map(|(u, i, r)| rec(u, i, *r, None))
            .collect();
        let ds = RatingDataset::from_records("t", recs, RatingScale::new(1.0, 5.0)).unwrap();
        let got = preprocess(&ds, 5, 3).unwrap();

        let want = fixpoint_reference(&rows, 5, 3);
        assert_eq!(got.len(), want.len());
        // The frail user and the weak item are gone.
        assert!(!got.user_labels.iter().any(|u| u == "frail"));
        assert!(!got.item_labels.iter().any(|i| i == "weak"));
        // Post-hoc: both constraints hold.
        let mut item_counts = vec![0usize; got.num_items];
        let mut user_counts = vec![0usize; got.num_users];
        for it in &got.interactions {
            item_counts[it.item as usize] += 1;
            user_counts[it.user as usize] += 1;
        }
        assert!(item_counts.iter().all(|&c| c >= 5));
        assert!(user_counts.iter().all(|&c| c >= 3));
    }

    #[test]
    fn preprocess_empty_result_errors() {
        let ds = RatingDataset::from_records(
            "t",
            vec![rec("a", "x", 3.0, None)],
            RatingScale::new(1.0, 5.0),
        )
        .unwrap();
        assert!(matches!(preprocess(&ds, 5, 20), Err(Error::EmptyDataset)));
    }

    #[test]
    fn split_takes_max_timestamp() {
        let ds = RatingDataset::from_records(
            "t",
            vec![
                rec("a", "x", 3.0, Some(5)),
                rec("a", "y", 4.0, Some(9)),
                rec("b", "x", 2.0, Some(1)),
                rec("b", "y", 2.0, Some(1)), // tie: later position wins
            ],
            RatingScale::new(1.0, 5.0),
        )
        .unwrap();
        let split = leave_one_out_split(&ds);
        assert_eq!(split.test.len(), 2);
        let a = split.test.iter().find(|t| t.user == 0).unwrap();
        assert_eq!(a.timestamp, 9);
        let b = split.test.iter().find(|t| t.user == 1).unwrap();
        assert_eq!(ds.item_labels[b.item as usize], "y");
    }

    #[test]
    fn split_is_a_partition_and_flags_singles() {
        let mut records = vec![
            rec("solo", "x", 3.0, Some(1)), // single interaction: flagged
        ];
        let ds_toy = toy();
        for it in &ds_toy.interactions {
            records.push(rec(
                &format!("u{}", it.user),
                &format!("i{}", it.item),
                it.rating,
                Some(it.timestamp),
            ));
        }
        let ds = RatingDataset::from_records("t", records, ds_toy.scale).unwrap();
        let split = leave_one_out_split(&ds);

        assert_eq!(split.single_interaction_users, vec![0]);
        assert_eq!(split.test.len(), ds_toy.num_users);

        // train ⊎ test = input multiset, train ∩ test = ∅.
        let mut union: Vec<(u32, u32, u64, i64)> = split
            .train
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating.to_bits(), it.timestamp))
            .collect();
        union.extend(
            split
                .test
                .iter()
                .map(|t| (t.user, t.item, t.rating.to_bits(), t.timestamp)),
        );
        union.sort_unstable();
        let mut orig: Vec<(u32, u32, u64, i64)> = ds
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating.to_bits(), it.timestamp))
            .collect();
        orig.sort_unstable();
        assert_eq!(union, orig);
    }

    #[test]
    fn negatives_disjoint_and_deterministic() {
        let ds = toy();
        let items = ds.items_by_user();
        for user in 0..ds.num_users.min(8) {
            let a = sample_negatives(&ds, user, 10, 99).unwrap();
            let b = sample_negatives(&ds, user, 10, 99).unwrap();
            assert_eq!(a, b);
            for neg in &a {
                assert!(!items[user].contains(neg));
            }
        }
    }

    #[test]
    fn negatives_exact_complement_when_supply_matches() {
        // User 0 interacted with all but exactly 5 items.
        let mut records = Vec::new();
        for i in 0..20 {
            if i < 15 {
                records.push(rec("u", &format!("i{i}"), 3.0, None));
            } else {
                records.push(rec("other", &format!("i{i}"), 3.0, None));
            }
        }
        let ds = RatingDataset::from_records("t", records, RatingScale::new(1.0, 5.0)).unwrap();
        let negs = sample_negatives(&ds, 0, 5, 1).unwrap();
        let mut got: Vec<u32> = negs;
        got.sort_unstable();
        // Set-difference oracle.
        let interacted: HashSet<u32> = ds
            .interactions
            .iter()
            .filter(|it| it.user == 0)
            .map(|it| it.item)
            .collect();
        let want: Vec<u32> =
            (0..ds.num_items as u32).filter(|i| !interacted.contains(i)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn negatives_unknown_user_errors() {
        let ds = toy();
        assert!(matches!(
            sample_negatives(&ds, ds.num_users + 5, 3, 0),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn bootstrap_size_and_determinism() {
        let ds = toy();
        let b1 = bootstrap(&ds, 1.0, 5);
        assert_eq!(b1.len(), ds.len());
        assert_eq!(b1.num_users, ds.num_users);
        let b2 = bootstrap(&ds, 1.0, 5);
        assert_eq!(b1.interactions, b2.interactions);
        let b3 = bootstrap(&ds, 0.5, 5);
        assert_eq!(b3.len(), (0.5f64 * ds.len() as f64).ceil() as usize);
    }

    #[test]
    fn bootstrap_mean_unique_coverage_near_one_minus_inv_e() {
        // Monte-Carlo oracle: with replacement at fraction 1.0, expected
        // unique coverage is 1 - (1 - 1/N)^N -> 1 - 1/e.
        let ds = synthetic::toy(40, 30, 1000, 3);
        let n = ds.len();
        let trials = 1000;
        let mut total = 0.0;
        for t in 0..trials {
            let b = bootstrap(&ds, 1.0, 1000 + t);
            let unique: HashSet<(u32, u32)> =
                b.interactions.iter().map(|it| (it.user, it.item)).collect();
            total += unique.len() as f64 / n as f64;
        }
        let mean = total / trials as f64;
        let expected = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
        assert!(
            (mean - expected).abs() < 0.01,
            "mean coverage {mean} vs expected {expected}"
        );
        assert!((expected - 0.632).abs() < 0.002);
    }

    #[test]
    fn subset_sizes_and_identity() {
        let ds = toy();
        let full = subset(&ds, 1.0, 9);
        assert_eq!(full.interactions, ds.interactions);
        let s2 = subset(&ds, 0.2, 9);
        let s4 = subset(&ds, 0.4, 9);
        assert_eq!(s2.len(), (0.2f64 * ds.len() as f64).ceil() as usize);
        assert!(s2.len() < s4.len());
        // Determinism.
        assert_eq!(subset(&ds, 0.2, 9).interactions, s2.interactions);
    }

    #[test]
    fn fingerprint_is_order_independent_and_content_sensitive() {
        let ds = toy();
        let mut reversed = ds.clone();
        reversed.interactions.reverse();
        assert_eq!(ds.fingerprint(), reversed.fingerprint());
        let mut changed = ds.clone();
        changed.interactions[0].rating = changed.scale.max;
        changed.interactions[0].user = (changed.num_users - 1) as u32;
        assert_ne!(ds.fingerprint(), changed.fingerprint());
    }
}
