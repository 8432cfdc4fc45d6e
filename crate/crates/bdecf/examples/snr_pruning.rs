//! Zero out the lowest signal-to-noise weights of every variational layer
//! and measure what that does to ranking quality. Posterior width doubles
//! as a built-in importance score: weights whose |mu| / sigma is small are
//! the ones the posterior never pinned down.
//!
//! ```sh
//! cargo run --example snr_pruning
//! ```

use bdecf::data::{self, synthetic};
use bdecf::ensemble::{train_supermodel, EnsembleConfig};
use bdecf::error::Result;
use bdecf::eval::EvalOptions;
use bdecf::model::LearnerConfig;
use bdecf::uncertainty::snr_prune_impact;

fn main() -> Result<()> {
    let dataset = synthetic::toy_preferential(120, 150, 4800, 41);
    let split = data::leave_one_out_split(&dataset);
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
        seed: 41,
        ..EnsembleConfig::default()
    };

    println!("prune    hr@10 before  hr@10 after  delta");
    for fraction in [0.2, 0.5, 0.9, 1.0] {
        // Pruning mutates the model, so each fraction gets a fresh one
        // trained from the same seed.
        let (mut model, _) = train_supermodel(&split.train, &config)?;
        let impact = snr_prune_impact(&mut model, &split, fraction, &EvalOptions::default())?;
        println!(
            "{:<8} {:<13.4} {:<12.4} {:+.4}",
            fraction, impact.hr10_before, impact.hr10_after, impact.hr10_delta
        );
    }
    Ok(())
}
