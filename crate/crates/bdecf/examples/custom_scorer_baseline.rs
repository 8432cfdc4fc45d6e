//! The evaluator ranks whatever implements `Scorer`, so baselines drop in
//! next to the trained model. Here a popularity counter and a random scorer
//! face the ensemble on identical candidate lists.
//!
//! ```sh
//! cargo run --example custom_scorer_baseline
//! ```

use bdecf::data::{self, synthetic};
use bdecf::ensemble::{train_supermodel, EnsembleConfig};
use bdecf::error::Result;
use bdecf::eval::{evaluate, evaluate_supermodel, EvalOptions, MetricsReport};
use bdecf::model::LearnerConfig;
use bdecf::seeds;

fn main() -> Result<()> {
    let dataset = synthetic::toy_preferential(120, 150, 4800, 53);
    let split = data::leave_one_out_split(&dataset);
    let opts = EvalOptions::default();

    // Popularity: score an item by how many train interactions it has.
    let mut counts = vec![0.0; split.train.num_items];
    for x in &split.train.interactions {
        counts[x.item as usize] += 1.0;
    }
    let popularity = |_user: u32, item: u32| -> Result<f64> { Ok(counts[item as usize]) };
    let pop_report = evaluate(&popularity, &split, &opts)?;

    // Random: a hash of the pair, so the ranking is noise but reproducible.
    let random = |user: u32, item: u32| -> Result<f64> {
        Ok(seeds::mix(1234, (u64::from(user) << 32) | u64::from(item)) as f64)
    };
    let rand_report = evaluate(&random, &split, &opts)?;

    let config = EnsembleConfig {
        num_learners: 2,
        depth_cycle: vec![vec![32], vec![16]],
        learner: LearnerConfig {
            embedding_dim: 16,
            num_tokens: 2,
            mlp_hidden: vec![16],
            epochs: 25,
            batch_size: 128,
            ..LearnerConfig::default()
        },
        meta_epochs: 40,
        seed: 53,
        ..EnsembleConfig::default()
    };
    let (model, _) = train_supermodel(&split.train, &config)?;
    let model_report = evaluate_supermodel(&model, &split, &opts)?;

    println!("scorer      hr@10   ndcg@10  mrr@10");
    let line = |name: &str, r: &MetricsReport| {
        println!(
            "{name:<11} {:.4}  {:.4}   {:.4}",
            r.hr_at(10).unwrap_or(f64::NAN),
            r.ndcg_at(10).unwrap_or(f64::NAN),
            r.mrr_at(10).unwrap_or(f64::NAN),
        );
    };
    line("random", &rand_report);
    line("popularity", &pop_report);
    line("ensemble", &model_report);
    Ok(())
}
