//! Score one (user, item) pair and attach both uncertainty readings: the
//! closed-form variance propagated through the variational last layer and
//! the spread of the ensemble members' predictions.
//!
//! ```sh
//! cargo run --example predict_with_uncertainty
//! ```

use bdecf::data::synthetic;
use bdecf::ensemble::{train_supermodel, EnsembleConfig, PredictMode};
use bdecf::error::Result;
use bdecf::model::LearnerConfig;
use bdecf::uncertainty::{ensemble_uncertainty, reparam_user_score, UncertaintyScoreParams};

fn main() -> Result<()> {
    let dataset = synthetic::toy(80, 60, 2400, 43);
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
        seed: 43,
        ..EnsembleConfig::default()
    };
    let (model, _) = train_supermodel(&dataset, &config)?;

    let (user, item) = (12u32, 30u32);
    let det = model.predict(user, item, &PredictMode::Deterministic)?;
    println!(
        "user {user} item {item}: rating {:.3} (normalized {:.4})",
        det.prediction, det.score
    );

    // Averaging over posterior draws instead of using the posterior means
    // shifts the estimate a little; the draws are seeded, so reruns match.
    let sampled = model.predict(user, item, &PredictMode::Sample { samples: 32, seed: 99 })?;
    println!("with 32 posterior draws per member: rating {:.3}", sampled.prediction);

    let params = UncertaintyScoreParams::default();
    let reparam: f64 = model
        .learners
        .iter()
        .map(|l| reparam_user_score(l, user, &params))
        .sum::<Result<f64>>()?
        / model.num_learners() as f64;
    println!("variance-propagation score (user {user}): {reparam:.4}");

    let spread = ensemble_uncertainty(&det.member_predictions)?;
    println!("ensemble spread over {} members: {spread:.4}", model.num_learners());
    Ok(())
}
