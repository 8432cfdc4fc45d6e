//! Score every user's epistemic uncertainty two ways (variance propagation
//! through the variational last layer, ensemble prediction spread) and
//! compare sparse vs dense and inconsistent vs consistent cohorts. Half the
//! users keep only a sliver of their history, so the sparse cohort is real.
//!
//! On a corpus and training budget this small the two methods can disagree
//! about which cohort is shakier: the propagated variance also tracks how
//! much activation mass a profile pushes through the layer, while the
//! ensemble spread needs enough epochs for the members to diverge where
//! data is thin. Treat the output as a reading of the mechanics, not a
//! benchmark.
//!
//! ```sh
//! cargo run --example uncertainty_profile
//! ```

use bdecf::data::{synthetic, RatingDataset, RawRecord};
use bdecf::ensemble::{train_supermodel, EnsembleConfig};
use bdecf::error::Result;
use bdecf::model::LearnerConfig;
use bdecf::seeds;
use bdecf::uncertainty::{
    user_uncertainty_profile, CohortThresholds, UncertaintyMethod, UncertaintyScoreParams,
};

/// Keep every rating of even users but only ~30% of odd users' ratings.
fn thin_odd_users(full: &RatingDataset) -> Result<RatingDataset> {
    let records: Vec<RawRecord> = full
        .interactions
        .iter()
        .filter(|x| {
            x.user % 2 == 0
                || seeds::mix(9, (u64::from(x.user) << 32) | u64::from(x.item)) % 10 < 3
        })
        .map(|x| RawRecord {
            user: full.user_labels[x.user as usize].clone(),
            item: full.item_labels[x.item as usize].clone(),
            rating: x.rating,
            timestamp: Some(x.timestamp),
        })
        .collect();
    RatingDataset::from_records("thinned", records, full.scale)
}

fn main() -> Result<()> {
    let dataset = thin_odd_users(&synthetic::toy_preferential(120, 80, 4800, 37))?;
    let counts = {
        let mut c = vec![0usize; dataset.num_users];
        for x in &dataset.interactions {
            c[x.user as usize] += 1;
        }
        c
    };
    println!(
        "ratings per user: min {}, max {}",
        counts.iter().min().unwrap(),
        counts.iter().max().unwrap()
    );

    let config = EnsembleConfig {
        num_learners: 3,
        depth_cycle: vec![vec![32], vec![32, 16], vec![16]],
        learner: LearnerConfig {
            embedding_dim: 16,
            num_tokens: 2,
            mlp_hidden: vec![16],
            epochs: 15,
            batch_size: 128,
            ..LearnerConfig::default()
        },
        meta_epochs: 40,
        seed: 37,
        ..EnsembleConfig::default()
    };
    let (model, _) = train_supermodel(&dataset, &config)?;

    let params = UncertaintyScoreParams::default();
    let thresholds = CohortThresholds {
        // Thinned users land well under 22 ratings, so the default cohort
        // boundary separates the two populations cleanly here too.
        ..CohortThresholds::default()
    };

    for method in [UncertaintyMethod::Reparam, UncertaintyMethod::Ensemble] {
        let report = user_uncertainty_profile(&model, &dataset, method, &params, thresholds)?;
        println!("\n== {} ==", report.method.name());
        match report.sparse_dense_ratio {
            Some(v) => println!("sparse / dense uncertainty:            {v:.3}"),
            None => println!("sparse / dense uncertainty:            n/a"),
        }
        match report.inconsistent_consistent_ratio {
            Some(v) => println!("inconsistent / consistent uncertainty: {v:.3}"),
            None => println!("inconsistent / consistent uncertainty: n/a"),
        }
        for note in &report.notes {
            println!("note: {note}");
        }
        println!("ratings  mean score  users");
        for point in &report.curve {
            println!(
                "{:>4}+    {:<10.4}  {}",
                point.ratings_bin, point.mean_score, point.count
            );
        }
    }
    Ok(())
}
