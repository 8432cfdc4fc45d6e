use clap::{Parser, Subcommand};
use std::path::PathBuf;

use bdecf::commands;
use bdecf::config::RunConfig;
use bdecf::error::{Error, Result};
use bdecf::eval::AblationVariant;
use bdecf::uncertainty::UncertaintyMethod;

#[derive(Parser)]
#[command(
    name = "bdecf",
    version,
    about = "Bayesian deep ensemble collaborative filtering pipeline"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Dotted-path config override, e.g. --set ensemble.num_learners=4.
    /// Repeatable; applied after the file is read.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory for this command (default:
    /// <output root>/<command>; BDECF_OUT overrides the root).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the ratings file, apply the margin filters, and export the
    /// re-indexed dataset.
    Ingest,
    /// Train the ensemble and save its checkpoint directory.
    Train {
        /// Train on all interactions instead of the leave-one-out train
        /// split (for deployment-style predict runs).
        #[arg(long)]
        full_data: bool,
    },
    /// Rank each user's held-out item against sampled negatives.
    Evaluate {
        /// Checkpoint directory written by `train`.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
    },
    /// Retrain at several train-set fractions and tabulate the metrics.
    Sweep,
    /// Train and score the ablation variants (all six by default).
    Ablate {
        /// Comma-separated subset: full, cosine_score, no_attention,
        /// single_learner, average_combine, concat.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        variants: Vec<String>,
    },
    /// Per-user uncertainty profile and the binned curve.
    Uncertainty {
        /// Checkpoint directory; a model is trained per config when omitted.
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
        /// reparam | ensemble (overrides the config).
        #[arg(long)]
        method: Option<String>,
        /// Also measure the HR@10 impact of zeroing this fraction of
        /// lowest-SNR weights.
        #[arg(long, value_name = "FRACTION")]
        prune: Option<f64>,
    },
    /// Score one (user, item) pair with a trained checkpoint.
    Predict {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Dense user index (as produced by ingest).
        #[arg(long)]
        user: u32,
        /// Dense item index.
        #[arg(long)]
        item: u32,
        /// Also print the variance-propagation and ensemble-spread scores.
        #[arg(long)]
        with_uncertainty: bool,
        /// Posterior draws per member; 0 uses the posterior means.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        config.apply_override(key, value)?;
    }
    config.validate()?;

    let command_name = match &cli.command {
        Command::Ingest => "ingest",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Sweep => "sweep",
        Command::Ablate { .. } => "ablate",
        Command::Uncertainty { .. } => "uncertainty",
        Command::Predict { .. } => "predict",
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(config.output_root()).join(command_name));

    match cli.command {
        Command::Ingest => {
            let s = commands::cmd_ingest(&config, &out)?;
            println!(
                "{}: {} users, {} items, {} ratings (density {:.2}%)",
                s.name, s.users, s.items, s.ratings, s.density_pct
            );
            println!(
                "filtered from {} users, {} items, {} ratings",
                s.raw_users, s.raw_items, s.raw_ratings
            );
        }
        Command::Train { full_data } => {
            let s = commands::cmd_train(&config, &out, full_data)?;
            println!(
                "trained {} learners on {} interactions{}",
                s.num_learners,
                s.train_interactions,
                if s.full_data { " (full data)" } else { "" }
            );
            println!("final member mse (normalized): {:.4}", s.final_member_mse);
            println!("checkpoint: {}", s.model_dir.display());
        }
        Command::Evaluate { model } => {
            let report = commands::cmd_evaluate(&config, &model, &out)?;
            println!("evaluated {} users", report.num_users);
            for (name, value) in report.metric_columns() {
                println!("{name}: {value:.4}");
            }
        }
        Command::Sweep => {
            let rows = commands::cmd_sweep(&config, &out)?;
            println!("fraction  hr@1    hr@10   ndcg@10 mrr@10");
            for row in &rows {
                let r = &row.report;
                println!(
                    "{:<9} {:.4}  {:.4}  {:.4}  {:.4}",
                    row.fraction,
                    r.hr_at(1).unwrap_or(f64::NAN),
                    r.hr_at(10).unwrap_or(f64::NAN),
                    r.ndcg_at(10).unwrap_or(f64::NAN),
                    r.mrr_at(10).unwrap_or(f64::NAN),
                );
            }
        }
        Command::Ablate { variants } => {
            let variants = variants
                .iter()
                .map(|s| AblationVariant::parse(s))
                .collect::<Result<Vec<_>>>()?;
            let rows = commands::cmd_ablate(&config, &variants, &out)?;
            for row in &rows {
                let r = &row.report;
                println!(
                    "{:<16} hr@10 {:.4}  ndcg@10 {:.4}  mrr@10 {:.4}",
                    row.variant.name(),
                    r.hr_at(10).unwrap_or(f64::NAN),
                    r.ndcg_at(10).unwrap_or(f64::NAN),
                    r.mrr_at(10).unwrap_or(f64::NAN),
                );
            }
        }
        Command::Uncertainty { model, method, prune } => {
            if let Some(m) = method {
                config.uncertainty.method = UncertaintyMethod::parse(&m)?;
            }
            let o = commands::cmd_uncertainty(&config, model.as_deref(), &out, prune)?;
            let r = &o.report;
            println!(
                "method {}: {} pairs over {} users",
                r.method.name(),
                r.pairs.len(),
                r.users.len()
            );
            match r.sparse_dense_ratio {
                Some(v) => println!("sparse/dense uncertainty ratio: {v:.3}"),
                None => println!("sparse/dense uncertainty ratio: n/a"),
            }
            match r.inconsistent_consistent_ratio {
                Some(v) => println!("inconsistent/consistent uncertainty ratio: {v:.3}"),
                None => println!("inconsistent/consistent uncertainty ratio: n/a"),
            }
            for note in &r.notes {
                println!("note: {note}");
            }
            if let Some(p) = &o.prune {
                println!(
                    "snr prune {:.0}%: hr@10 {:.4} -> {:.4} (delta {:+.4})",
                    p.fraction * 100.0,
                    p.hr10_before,
                    p.hr10_after,
                    p.hr10_delta
                );
            }
        }
        Command::Predict {
            model,
            user,
            item,
            with_uncertainty,
            samples,
        } => {
            let p = commands::cmd_predict(
                &config,
                &model,
                &out,
                user,
                item,
                with_uncertainty,
                samples,
            )?;
            println!(
                "user {} item {}: estimated rating {:.3} (normalized score {:.4})",
                p.user, p.item, p.estimate, p.score
            );
            if let Some(v) = p.reparam_uncertainty {
                println!("reparam uncertainty: {v:.4}");
            }
            match (with_uncertainty, p.ensemble_uncertainty) {
                (true, Some(v)) => println!("ensemble uncertainty: {v:.4}"),
                (true, None) => println!("ensemble uncertainty: n/a (single member)"),
                _ => {}
            }
        }
    }
    Ok(())
}
