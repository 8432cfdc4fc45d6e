//! Retrain the ensemble on shrinking fractions of the train split while the
//! held-out pairs and negative pools stay fixed, to see how the metrics
//! degrade with data sparsity.
//!
//! ```sh
//! cargo run --example sparsity_sweep
//! ```

use bdecf::data::synthetic;
use bdecf::ensemble::EnsembleConfig;
use bdecf::error::Result;
use bdecf::eval::{sparsity_sweep, EvalOptions};
use bdecf::model::LearnerConfig;

fn main() -> Result<()> {
    let dataset = synthetic::toy_preferential(120, 150, 4800, 29);
    let config = EnsembleConfig {
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
        seed: 29,
        ..EnsembleConfig::default()
    };

    let fractions = [0.25, 0.5, 1.0];
    let rows = sparsity_sweep(&dataset, &fractions, &config, &EvalOptions::default())?;

    println!("fraction  interactions  hr@10   ndcg@10  mrr@10");
    for row in &rows {
        let r = &row.report;
        println!(
            "{:<9} {:<13} {:.4}  {:.4}   {:.4}",
            row.fraction,
            row.train_interactions,
            r.hr_at(10).unwrap_or(f64::NAN),
            r.ndcg_at(10).unwrap_or(f64::NAN),
            r.mrr_at(10).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
