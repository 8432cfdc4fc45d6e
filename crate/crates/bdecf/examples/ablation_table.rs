//! Knock out one design choice at a time (attention, the ensemble, the meta
//! combiner, the matching head) and compare ranking quality on the same
//! split and candidate lists.
//!
//! ```sh
//! cargo run --example ablation_table
//! ```

use bdecf::data::synthetic;
use bdecf::ensemble::EnsembleConfig;
use bdecf::error::Result;
use bdecf::eval::{ablation_table, AblationVariant, EvalOptions};
use bdecf::model::LearnerConfig;

fn main() -> Result<()> {
    let dataset = synthetic::toy_preferential(120, 150, 4800, 31);
    let base = EnsembleConfig {
        num_learners: 2,
        depth_cycle: vec![vec![32], vec![16]],
        learner: LearnerConfig {
            embedding_dim: 16,
            num_tokens: 2,
            mlp_hidden: vec![16],
            epochs: 15,
            batch_size: 128,
            ..LearnerConfig::default()
        },
        meta_epochs: 40,
        seed: 31,
        ..EnsembleConfig::default()
    };

    let rows = ablation_table(
        &dataset,
        &base,
        &AblationVariant::ALL,
        &EvalOptions::default(),
    )?;

    println!("variant           hr@10   ndcg@10  mrr@10");
    for row in &rows {
        let r = &row.report;
        println!(
            "{:<17} {:.4}  {:.4}   {:.4}",
            row.variant.name(),
            r.hr_at(10).unwrap_or(f64::NAN),
            r.ndcg_at(10).unwrap_or(f64::NAN),
            r.mrr_at(10).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
