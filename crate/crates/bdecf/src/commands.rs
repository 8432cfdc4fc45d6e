//! Pipeline stages behind the CLI subcommands. Each function runs one
//! stage against a [`RunConfig`] and writes its artifacts (plus a resolved
//! config snapshot and a manifest) into the stage's output directory.

use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{self, RatingDataset, SplitPair};
use crate::ensemble::{train_supermodel, EnsembleStats, SuperModel};
use crate::error::{Error, Result};
use crate::eval::{
    self, ablation_table, sparsity_sweep, write_ablation_csv, write_json, write_reports_csv,
    write_sweep_csv, AblationRow, AblationVariant, MetricsReport, SweepRow,
};
use crate::model::PredictMode;
use crate::seeds::{self, Stream};
use crate::uncertainty::{
    self, snr_prune_impact, user_uncertainty_profile, PruneImpact, UncertaintyReport,
};

/// Create the stage directory and write the config snapshot every command
/// starts with.
fn start_stage(config: &RunConfig, out: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let snapshot = out.join("resolved_config.toml");
    std::fs::write(&snapshot, config.to_toml_string()).map_err(|source| Error::Io {
        path: snapshot,
        source,
    })?;
    Ok(vec!["resolved_config.toml".into()])
}

#[derive(Debug, Serialize)]
struct StageManifest<'a> {
    command: &'a str,
    config_fingerprint: String,
    dataset: &'a str,
    artifacts: &'a [String],
}

fn finish_stage(
    config: &RunConfig,
    out: &Path,
    command: &str,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    artifacts.push("manifest.json".into());
    artifacts.sort();
    write_json(
        &out.join("manifest.json"),
        &StageManifest {
            command,
            config_fingerprint: config.fingerprint(),
            dataset: &config.dataset.path,
            artifacts,
        },
    )
}

fn load_split(config: &RunConfig) -> Result<(RatingDataset, SplitPair)> {
    let dataset = config.dataset.load()?;
    let split = data::leave_one_out_split(&dataset);
    Ok((dataset, split))
}

fn eval_options(config: &RunConfig) -> eval::EvalOptions {
    let mut opts = config.eval.clone();
    if opts.config_fingerprint.is_empty() {
        opts.config_fingerprint = config.fingerprint();
    }
    opts
}

/// Load a supermodel checkpoint against the train split the pipeline
/// produces for this config.
fn load_model(config: &RunConfig, model_dir: &Path) -> Result<(SplitPair, SuperModel)> {
    let (_, split) = load_split(config)?;
    let model = SuperModel::load(model_dir, &split.train)?;
    Ok((split, model))
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    /// Percent of the user-item matrix that is observed.
    pub density_pct: f64,
    pub raw_users: usize,
    pub raw_items: usize,
    pub raw_ratings: usize,
}

/// Parse, filter, re-index, and export the ratings.
pub fn cmd_ingest(config: &RunConfig, out: &Path) -> Result<IngestSummary> {
    let mut artifacts = start_stage(config, out)?;
    let raw = config.dataset.load_raw()?;
    let dataset = data::preprocess(
        &raw,
        config.dataset.min_item_raters,
        config.dataset.min_user_ratings,
    )?;
    dataset.export_csv(&out.join("ratings.csv"))?;
    artifacts.push("ratings.csv".into());

    let summary = IngestSummary {
        name: dataset.name.clone(),
        users: dataset.num_users,
        items: dataset.num_items,
        ratings: dataset.len(),
        density_pct: dataset.density() * 100.0,
        raw_users: raw.num_users,
        raw_items: raw.num_items,
        raw_ratings: raw.len(),
    };
    write_json(&out.join("dataset_stats.json"), &summary)?;
    artifacts.push("dataset_stats.json".into());
    finish_stage(config, out, "ingest", &mut artifacts)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model_dir: PathBuf,
    pub num_learners: usize,
    pub checkpoint_files: Vec<String>,
    /// Mean final-epoch MSE across members (normalized targets).
    pub final_member_mse: f64,
    pub meta_training_pairs: usize,
    pub train_interactions: usize,
    /// True when the leave-one-out holdout was skipped.
    pub full_data: bool,
}

/// Train the configured ensemble and save its checkpoint directory. By
/// default training sees only the leave-one-out train split, so a later
/// `evaluate` on the same config is honest; `full_data` trains on all
/// interactions instead (for deployment-style `predict` runs).
pub fn cmd_train(config: &RunConfig, out: &Path, full_data: bool) -> Result<TrainSummary> {
    let mut artifacts = start_stage(config, out)?;
    let dataset = config.dataset.load()?;
    let train = if full_data {
        dataset
    } else {
        data::leave_one_out_split(&dataset).train
    };

    let train_interactions = train.len();
    let (model, stats) = train_supermodel(&train, &config.ensemble)?;
    let model_dir = out.join("model");
    model.save(&model_dir)?;
    write_json(&out.join("training_stats.json"), &stats)?;
    artifacts.push("training_stats.json".into());

    let mut checkpoint_files: Vec<String> = std::fs::read_dir(&model_dir)
        .map_err(|source| Error::Io {
            path: model_dir.clone(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    checkpoint_files.sort();
    for f in &checkpoint_files {
        artifacts.push(format!("model/{f}"));
    }
    finish_stage(config, out, "train", &mut artifacts)?;

    Ok(TrainSummary {
        model_dir,
        num_learners: model.num_learners(),
        checkpoint_files,
        final_member_mse: mean_final_mse(&stats),
        meta_training_pairs: stats.meta_training_pairs,
        train_interactions,
        full_data,
    })
}

fn mean_final_mse(stats: &EnsembleStats) -> f64 {
    let finals: Vec<f64> = stats
        .members
        .iter()
        .filter_map(|m| m.epoch_mse.last().copied())
        .collect();
    finals.iter().sum::<f64>() / finals.len().max(1) as f64
}

/// Evaluate a trained checkpoint on the held-out pairs; write json and csv
/// reports.
pub fn cmd_evaluate(config: &RunConfig, model_dir: &Path, out: &Path) -> Result<MetricsReport> {
    let mut artifacts = start_stage(config, out)?;
    let (split, model) = load_model(config, model_dir)?;
    let opts = eval_options(config);
    let report = eval::evaluate_supermodel(&model, &split, &opts)?;
    write_json(&out.join("report.json"), &report)?;
    write_reports_csv(
        &out.join("report.csv"),
        "config",
        &[(report.config_fingerprint.clone(), &report)],
    )?;
    artifacts.push("report.json".into());
    artifacts.push("report.csv".into());
    finish_stage(config, out, "evaluate", &mut artifacts)?;
    Ok(report)
}

/// Retrain at each configured train-set fraction and evaluate against the
/// fixed test split.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let mut artifacts = start_stage(config, out)?;
    let dataset = config.dataset.load()?;
    let rows = sparsity_sweep(
        &dataset,
        &config.sweep.fractions,
        &config.ensemble,
        &eval_options(config),
    )?;
    write_json(&out.join("sweep.json"), &rows)?;
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    artifacts.push("sweep.json".into());
    artifacts.push("sweep.csv".into());
    finish_stage(config, out, "sweep", &mut artifacts)?;
    Ok(rows)
}

/// Train and evaluate the requested ablation variants (all six when none
/// are named).
pub fn cmd_ablate(
    config: &RunConfig,
    variants: &[AblationVariant],
    out: &Path,
) -> Result<Vec<AblationRow>> {
    let mut artifacts = start_stage(config, out)?;
    let dataset = config.dataset.load()?;
    let variants = if variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        variants.to_vec()
    };
    let rows = ablation_table(&dataset, &config.ensemble, &variants, &eval_options(config))?;
    write_json(&out.join("ablation.json"), &rows)?;
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    artifacts.push("ablation.json".into());
    artifacts.push("ablation.csv".into());
    finish_stage(config, out, "ablate", &mut artifacts)?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct UncertaintyOutput {
    pub report: UncertaintyReport,
    pub prune: Option<PruneImpact>,
}

/// Per-user uncertainty profile over the train split, using an existing
/// checkpoint or a freshly trained model. `prune_fraction` additionally
/// measures the HR@10 impact of SNR pruning at that fraction.
pub fn cmd_uncertainty(
    config: &RunConfig,
    model_dir: Option<&Path>,
    out: &Path,
    prune_fraction: Option<f64>,
) -> Result<UncertaintyOutput> {
    let mut artifacts = start_stage(config, out)?;
    let (split, mut model) = match model_dir {
        Some(dir) => load_model(config, dir)?,
        None => {
            log::info!("no checkpoint given; training per config");
            let (_, split) = load_split(config)?;
            let (model, _) = train_supermodel(&split.train, &config.ensemble)?;
            (split, model)
        }
    };

    let report = user_uncertainty_profile(
        &model,
        &split.train,
        config.uncertainty.method,
        &config.uncertainty.score,
        config.uncertainty.thresholds,
    )?;
    report.write_pair_scores_csv(&out.join("uncertainty_scores.csv"))?;
    report.write_curve_csv(&out.join("uncertainty_curve.csv"))?;
    write_json(&out.join("uncertainty.json"), &report)?;
    artifacts.push("uncertainty_scores.csv".into());
    artifacts.push("uncertainty_curve.csv".into());
    artifacts.push("uncertainty.json".into());

    let prune = match prune_fraction {
        Some(fraction) if fraction > 0.0 => {
            let impact = snr_prune_impact(&mut model, &split, fraction, &eval_options(config))?;
            write_json(&out.join("prune_impact.json"), &impact)?;
            artifacts.push("prune_impact.json".into());
            Some(impact)
        }
        _ => None,
    };
    finish_stage(config, out, "uncertainty", &mut artifacts)?;
    Ok(UncertaintyOutput { report, prune })
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictOutput {
    pub user: u32,
    pub item: u32,
    /// Rating-scale estimate.
    pub estimate: f64,
    /// Normalized combined score in [0, 1].
    pub score: f64,
    pub member_predictions: Vec<f64>,
    /// Posterior samples per member (0 = deterministic weights).
    pub samples: usize,
    /// Variance-propagation score, averaged over members.
    pub reparam_uncertainty: Option<f64>,
    /// Member-prediction spread (needs at least 2 members).
    pub ensemble_uncertainty: Option<f64>,
}

/// Score one (user, item) pair with a trained checkpoint. Ids are the
/// dense indices produced by ingest. `samples > 0` averages that many
/// posterior draws per member; `with_uncertainty` adds both scores.
pub fn cmd_predict(
    config: &RunConfig,
    model_dir: &Path,
    out: &Path,
    user: u32,
    item: u32,
    with_uncertainty: bool,
    samples: usize,
) -> Result<PredictOutput> {
    let mut artifacts = start_stage(config, out)?;
    let (_, model) = load_model(config, model_dir)?;
    let mode = if samples > 0 {
        PredictMode::Sample {
            samples,
            seed: seeds::derive(config.ensemble.seed, Stream::Predict, 0),
        }
    } else {
        PredictMode::Deterministic
    };
    let pred = model.predict(user, item, &mode)?;

    let (reparam_uncertainty, ensemble_uncertainty) = if with_uncertainty {
        let mut acc = 0.0;
        for l in &model.learners {
            acc += uncertainty::reparam_user_score(l, user, &config.uncertainty.score)?;
        }
        let reparam = acc / model.num_learners() as f64;
        let spread = if model.num_learners() >= 2 {
            Some(uncertainty::ensemble_uncertainty(&pred.member_predictions)?)
        } else {
            None
        };
        (Some(reparam), spread)
    } else {
        (None, None)
    };

    let output = PredictOutput {
        user,
        item,
        estimate: pred.prediction,
        score: pred.score,
        member_predictions: pred.member_predictions,
        samples,
        reparam_uncertainty,
        ensemble_uncertainty,
    };
    write_json(&out.join("prediction.json"), &output)?;
    artifacts.push("prediction.json".into());
    finish_stage(config, out, "predict", &mut artifacts)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::ensemble::CombineMode;
    use crate::model::{LearnerConfig, MatchingKind};

    fn test_config(dir: &Path) -> RunConfig {
        let ds = synthetic::toy(24, 130, 420, 41);
        let csv = dir.join("ratings.csv");
        ds.export_csv(&csv).unwrap();
        let mut cfg = RunConfig::default();
        cfg.dataset.path = csv.to_string_lossy().into_owned();
        cfg.dataset.format = "csv".into();
        cfg.dataset.min_item_raters = 1;
        cfg.dataset.min_user_ratings = 1;
        cfg.ensemble = crate::ensemble::EnsembleConfig {
            num_learners: 2,
            depth_cycle: vec![vec![10], vec![8]],
            combine: CombineMode::Average,
            learner: LearnerConfig {
                hidden_dims: vec![10],
                embedding_dim: 8,
                num_tokens: 2,
                num_heads: 2,
                dropout: 0.0,
                matching: MatchingKind::MlpOnly,
                mlp_hidden: vec![6],
                batch_size: 32,
                epochs: 2,
                grad_chunks: 2,
                ..LearnerConfig::default()
            },
            seed: 7,
            ..crate::ensemble::EnsembleConfig::default()
        };
        cfg.output_dir = dir.join("runs").to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn pipeline_commands_produce_declared_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let root = PathBuf::from(cfg.output_root());

        let ingest = cmd_ingest(&cfg, &root.join("ingest")).unwrap();
        assert_eq!(ingest.users, 24);
        assert!(root.join("ingest/ratings.csv").exists());
        assert!(root.join("ingest/dataset_stats.json").exists());
        assert!(root.join("ingest/resolved_config.toml").exists());

        let train = cmd_train(&cfg, &root.join("train"), false).unwrap();
        assert_eq!(train.num_learners, 2);
        // Manifest names every member checkpoint plus the combiner.
        assert!(train.checkpoint_files.contains(&"learner_0.ckpt".to_string()));
        assert!(train.checkpoint_files.contains(&"learner_1.ckpt".to_string()));
        assert!(train.checkpoint_files.contains(&"manifest.json".to_string()));
        assert!(train.final_member_mse.is_finite());

        let report = cmd_evaluate(&cfg, &train.model_dir, &root.join("evaluate")).unwrap();
        assert_eq!(report.hr.len() + report.ndcg.len() + report.mrr.len(), 7);
        assert!(root.join("evaluate/report.json").exists());
        assert!(root.join("evaluate/report.csv").exists());
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(root.join("evaluate/manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["command"], "evaluate");
        assert_eq!(manifest["config_fingerprint"], cfg.fingerprint());

        let pred = cmd_predict(&cfg, &train.model_dir, &root.join("predict"), 3, 5, true, 0)
            .unwrap();
        assert!(pred.estimate >= 1.0 && pred.estimate <= 5.0);
        assert!(pred.reparam_uncertainty.unwrap() >= 0.0);
        assert!(pred.ensemble_uncertainty.unwrap() >= 0.0);
        assert_eq!(pred.member_predictions.len(), 2);

        let unc = cmd_uncertainty(&cfg, Some(&train.model_dir), &root.join("unc"), Some(0.2))
            .unwrap();
        assert!(!unc.report.pairs.is_empty());
        let impact = unc.prune.unwrap();
        assert!((impact.hr10_delta - (impact.hr10_after - impact.hr10_before)).abs() < 1e-15);
        assert!(root.join("unc/uncertainty_curve.csv").exists());
        assert!(root.join("unc/uncertainty_scores.csv").exists());
        assert!(root.join("unc/prune_impact.json").exists());
    }

    #[test]
    fn train_twice_gives_byte_identical_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let root = PathBuf::from(cfg.output_root());
        let a = cmd_train(&cfg, &root.join("a"), false).unwrap();
        let b = cmd_train(&cfg, &root.join("b"), false).unwrap();
        assert_eq!(a.checkpoint_files, b.checkpoint_files);
        for f in a.checkpoint_files.iter().filter(|f| f.ends_with(".ckpt")) {
            let bytes_a = std::fs::read(a.model_dir.join(f)).unwrap();
            let bytes_b = std::fs::read(b.model_dir.join(f)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{f} differs between runs");
        }
    }

    #[test]
    fn sweep_and_ablate_write_rows_per_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.sweep.fractions = vec![0.5, 1.0];
        let root = PathBuf::from(cfg.output_root());

        let rows = cmd_sweep(&cfg, &root.join("sweep")).unwrap();
        assert_eq!(rows.len(), 2);
        let text = std::fs::read_to_string(root.join("sweep/sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);

        let variants = [AblationVariant::CosineScore, AblationVariant::SingleLearner];
        let ab = cmd_ablate(&cfg, &variants, &root.join("ablate")).unwrap();
        assert_eq!(ab.len(), 2);
        let text = std::fs::read_to_string(root.join("ablate/ablation.csv")).unwrap();
        assert!(text.starts_with("variant,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn evaluate_against_wrong_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let root = PathBuf::from(cfg.output_root());
        let train = cmd_train(&cfg, &root.join("t"), false).unwrap();

        let mut other = cfg.clone();
        let other_ds = synthetic::toy(20, 120, 360, 99);
        let other_csv = dir.path().join("other.csv");
        other_ds.export_csv(&other_csv).unwrap();
        other.dataset.path = other_csv.to_string_lossy().into_owned();
        let err = cmd_evaluate(&other, &train.model_dir, &root.join("e")).unwrap_err();
        assert!(matches!(err, Error::DatasetMismatch(_)), "{err:?}");
    }
}
