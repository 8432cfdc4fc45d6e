//! Train one two-tower learner on a synthetic ratings matrix and watch the
//! loss terms per epoch.
//!
//! ```sh
//! cargo run --example train_weak_learner
//! ```

use bdecf::data::synthetic;
use bdecf::error::Result;
use bdecf::model::{train_weak_learner, FrozenLearner, LearnerConfig};

fn main() -> Result<()> {
    let dataset = synthetic::toy(80, 60, 2400, 7);
    println!(
        "dataset: {} users x {} items, {} ratings ({:.1}% dense)",
        dataset.num_users,
        dataset.num_items,
        dataset.len(),
        dataset.density() * 100.0
    );

    let config = LearnerConfig {
        hidden_dims: vec![32],
        embedding_dim: 16,
        num_tokens: 2,
        mlp_hidden: vec![16],
        epochs: 12,
        batch_size: 128,
        seed: 7,
        ..LearnerConfig::default()
    };
    let (learner, stats) = train_weak_learner(&dataset, &config)?;

    println!("epoch  loss      mse      kl");
    for (e, ((loss, mse), kl)) in stats
        .epoch_loss
        .iter()
        .zip(&stats.epoch_mse)
        .zip(&stats.epoch_kl)
        .enumerate()
    {
        println!("{:>5}  {loss:<8.4}  {mse:<7.4}  {kl:.4}", e + 1);
    }

    // Scoring goes through frozen posterior-mean embeddings; the matching
    // head is the only per-pair cost.
    let frozen = FrozenLearner::deterministic(&learner);
    for (user, item) in [(0u32, 0u32), (0, 17), (41, 5)] {
        println!("score({user}, {item}) = {:.4}", frozen.score(user, item)?);
    }
    Ok(())
}
