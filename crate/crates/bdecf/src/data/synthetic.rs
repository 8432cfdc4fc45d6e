//! Synthetic rating corpora with planted block structure.
//!
//! Users and items each belong to one of four latent groups; a fixed 4x4
//! affinity table gives the mean rating of each pairing, so the generated
//! matrix is low-rank plus noise and genuinely learnable. Generation
//! guarantees hard margins (items with at least `min_item_raters` raters,
//! users with at least `min_user_ratings` ratings) and an exact total count,
//! which makes the corpora stable under threshold preprocessing. An
//! optional placement bias concentrates interactions on liked pairings,
//! which is what gives leave-one-out ranking something to learn.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;

use crate::seeds::{self, Stream};

use super::{Interaction, RatingDataset, RatingScale};

/// Mean rating for (user group, item group) pairings on a [1, 5] scale.
const AFFINITY: [[f64; 4]; 4] = [
    [4.8, 1.4, 3.9, 2.4],
    [1.6, 4.6, 2.2, 3.8],
    [3.6, 2.6, 4.4, 1.8],
    [2.2, 3.4, 1.6, 4.4],
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Exact number of interactions to generate.
    pub ratings: usize,
    pub scale: RatingScale,
    pub seed: u64,
    pub min_item_raters: usize,
    pub min_user_ratings: usize,
    /// Std-dev of Gaussian noise added to the block mean before rounding.
    pub noise: f64,
    /// Exponential tilt on where interactions land once the margins are
    /// met: free cells are drawn with weight `exp(bias * block mean)`, so
    /// users mostly rate items from groups they like, the way real ratings
    /// logs skew. 0 keeps placement uniform, which makes held-out items
    /// statistically indistinguishable from sampled negatives.
    pub placement_bias: f64,
}

/// Generate a corpus satisfying the spec's margins exactly.
///
/// Panics if the requested count cannot be met (fewer than the margin floor
/// requires, or more than `users * items` distinct pairs).
pub fn generate(spec: &SyntheticSpec) -> RatingDataset {
    let SyntheticSpec {
        users,
        items,
        ratings,
        scale,
        seed,
        min_item_raters,
        min_user_ratings,
        noise,
        placement_bias,
    } = *spec;
    assert!(users > 0 && items > 0 && ratings > 0);
    assert!(
        ratings <= users * items,
        "cannot place {ratings} distinct pairs in a {users}x{items} matrix"
    );
    assert!(min_item_raters <= users && min_user_ratings <= items);

    let mut rng = seeds::rng(seed, Stream::Synthetic, 0);
    let mut used: HashSet<(u32, u32)> = HashSet::with_capacity(ratings);
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(ratings);
    let add = |used: &mut HashSet<(u32, u32)>, pairs: &mut Vec<(u32, u32)>, u: u32, i: u32| {
        if used.insert((u, i)) {
            pairs.push((u, i));
        }
    };

    // Floor every item at min_item_raters distinct users.
    let mut user_pool: Vec<u32> = (0..users as u32).collect();
    for i in 0..items as u32 {
        for k in 0..min_item_raters {
            let j = rng.gen_range(k..user_pool.len());
            user_pool.swap(k, j);
        }
        for &u in &user_pool[..min_item_raters] {
            add(&mut used, &mut pairs, u, i);
        }
    }

    // Floor every user at min_user_ratings items.
    let mut per_user = vec![0usize; users];
    for &(u, _) in &pairs {
        per_user[u as usize] += 1;
    }
    for u in 0..users as u32 {
        if per_user[u as usize] >= min_user_ratings {
            continue;
        }
        let mut free: Vec<u32> = (0..items as u32)
            .filter(|&i| !used.contains(&(u, i)))
            .collect();
        let need = min_user_ratings - per_user[u as usize];
        assert!(free.len() >= need, "user {u} cannot reach the rating floor");
        for k in 0..need {
            let j = rng.gen_range(k..free.len());
            free.swap(k, j);
        }
        for &i in &free[..need] {
            add(&mut used, &mut pairs, u, i);
        }
    }

    assert!(
        pairs.len() <= ratings,
        "margins require {} interactions but only {ratings} were requested",
        pairs.len()
    );

    // Fill to the exact total from the free cells: uniformly, or tilted
    // toward high-affinity pairings (weighted sampling without replacement
    // via the exponent-key trick: draw r^(1/w) per cell, keep the largest).
    let remaining = ratings - pairs.len();
    if remaining > 0 {
        let mut free: Vec<(u32, u32)> = Vec::with_capacity(users * items - pairs.len());
        for u in 0..users as u32 {
            for i in 0..items as u32 {
                if !used.contains(&(u, i)) {
                    free.push((u, i));
                }
            }
        }
        if placement_bias == 0.0 {
            for k in 0..remaining {
                let j = rng.gen_range(k..free.len());
                free.swap(k, j);
            }
        } else {
            let mut keyed: Vec<(f64, (u32, u32))> = free
                .iter()
                .map(|&(u, i)| {
                    let affinity = (AFFINITY[u as usize % 4][i as usize % 4] - 1.0) / 4.0;
                    let w = (placement_bias * affinity).exp();
                    let r: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    (r.powf(1.0 / w), (u, i))
                })
                .collect();
            keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
            free = keyed.into_iter().map(|(_, p)| p).collect();
        }
        for &(u, i) in &free[..remaining] {
            add(&mut used, &mut pairs, u, i);
        }
    }
    debug_assert_eq!(pairs.len(), ratings);

    // Randomize file order so position-sensitive consumers see no phase bias.
    pairs.shuffle(&mut rng);

    let normal = Normal::new(0.0, noise.max(1e-12)).unwrap();
    let span = scale.max - scale.min;
    let interactions: Vec<Interaction> = pairs
        .iter()
        .map(|&(u, i)| {
            let base = AFFINITY[u as usize % 4][i as usize % 4];
            // AFFINITY is authored on [1, 5]; rescale for other bounds.
            let mean = scale.min + (base - 1.0) / 4.0 * span;
            let raw = mean + normal.sample(&mut rng);
            let rating = raw.round().clamp(scale.min, scale.max);
            let timestamp = rng.gen_range(880_000_000i64..893_000_000);
            Interaction {
                user: u,
                item: i,
                rating,
                timestamp,
            }
        })
        .collect();

    RatingDataset {
        name: format!("synthetic-{users}x{items}"),
        interactions,
        num_users: users,
        num_items: items,
        scale,
        user_labels: (0..users).map(|u| format!("u{u}")).collect(),
        item_labels: (0..items).map(|i| format!("i{i}")).collect(),
    }
}

/// Small corpus for unit tests: margins of 2 raters per item and 4 ratings
/// per user.
pub fn toy(users: usize, items: usize, ratings: usize, seed: u64) -> RatingDataset {
    generate(&SyntheticSpec {
        users,
        items,
        ratings,
        scale: RatingScale::new(1.0, 5.0),
        seed,
        min_item_raters: 2,
        min_user_ratings: 4,
        noise: 0.7,
        placement_bias: 0.0,
    })
}

/// Like [`toy`], but interactions concentrate on high-affinity pairings, so
/// leave-one-out ranking has signal to find: held-out items skew toward
/// groups the user likes while sampled negatives stay mostly uniform.
pub fn toy_preferential(users: usize, items: usize, ratings: usize, seed: u64) -> RatingDataset {
    generate(&SyntheticSpec {
        users,
        items,
        ratings,
        scale: RatingScale::new(1.0, 5.0),
        seed,
        min_item_raters: 2,
        min_user_ratings: 4,
        noise: 0.7,
        placement_bias: 6.0,
    })
}

/// Corpus with the exact shape of the preprocessed MovieLens 100k matrix:
/// 943 users, 1664 items, 100000 ratings, every item rated by at least 5
/// users and every user rating at least 20 items.
pub fn ml100k_shaped(seed: u64) -> RatingDataset {
    generate(&SyntheticSpec {
        users: 943,
        items: 1664,
        ratings: 100_000,
        scale: RatingScale::new(1.0, 5.0),
        seed,
        min_item_raters: 5,
        min_user_ratings: 20,
        noise: 0.7,
        placement_bias: 6.0,
    })
}
