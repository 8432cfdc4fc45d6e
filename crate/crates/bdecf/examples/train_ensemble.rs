//! Train a small diversity ensemble, save it, and reload the checkpoint.
//! Member k gets the k-th prior family and hidden stack from the cycles, so
//! no two adjacent members share an architecture.
//!
//! ```sh
//! cargo run --example train_ensemble
//! ```

use bdecf::data::synthetic;
use bdecf::ensemble::{train_supermodel, EnsembleConfig, PredictMode, SuperModel};
use bdecf::error::Result;
use bdecf::model::LearnerConfig;

fn main() -> Result<()> {
    let dataset = synthetic::toy(80, 60, 2400, 11);
    let config = EnsembleConfig {
        num_learners: 3,
        depth_cycle: vec![vec![32], vec![32, 16], vec![16]],
        learner: LearnerConfig {
            embedding_dim: 16,
            num_tokens: 2,
            mlp_hidden: vec![16],
            epochs: 8,
            batch_size: 128,
            ..LearnerConfig::default()
        },
        meta_epochs: 40,
        seed: 11,
        ..EnsembleConfig::default()
    };

    for (k, member) in config.member_configs().iter().enumerate() {
        println!(
            "member {k}: prior={} depth={:?}",
            member.prior.family_name(),
            member.hidden_dims
        );
    }

    let (model, stats) = train_supermodel(&dataset, &config)?;
    println!(
        "meta combiner: trained on {} pairs, final mse {:.4}",
        stats.meta_training_pairs,
        stats.meta_mse.last().copied().unwrap_or(f64::NAN)
    );

    let p = model.predict(3, 9, &PredictMode::Deterministic)?;
    println!(
        "predict(3, 9): rating {:.3}, member scores {:?}",
        p.prediction,
        p.member_scores.iter().map(|s| (s * 1e3).round() / 1e3).collect::<Vec<_>>()
    );

    let dir = std::env::temp_dir().join("bdecf_ensemble_example");
    model.save(&dir)?;
    let reloaded = SuperModel::load(&dir, &dataset)?;
    let q = reloaded.predict(3, 9, &PredictMode::Deterministic)?;
    println!(
        "reloaded from {}: prediction drift {:e}",
        dir.display(),
        (p.prediction - q.prediction).abs()
    );
    Ok(())
}
