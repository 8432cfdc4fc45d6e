//! Leave-one-out ranking evaluation with sampled negatives, the training-
//! fraction sweep, and the ablation-variant runners.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::{self, RatingDataset, SplitPair};
use crate::ensemble::{train_supermodel, CombineMode, EnsembleConfig, SuperModel};
use crate::error::{Error, Result};
use crate::model::{FrozenLearner, MatchingKind};
use crate::seeds::{self, Stream};

/// Anything that can score a (user, item) pair. Ranking only needs the
/// scores to be comparable, not calibrated.
pub trait Scorer: Sync {
    fn score(&self, user: u32, item: u32) -> Result<f64>;
}

impl<F> Scorer for F
where
    F: Fn(u32, u32) -> Result<f64> + Sync,
{
    fn score(&self, user: u32, item: u32) -> Result<f64> {
        self(user, item)
    }
}

impl Scorer for FrozenLearner<'_> {
    fn score(&self, user: u32, item: u32) -> Result<f64> {
        FrozenLearner::score(self, user, item)
    }
}

/// Frozen ensemble scorer: per-member embedding tables are precomputed so a
/// pair score costs only the matching head plus the combiner.
pub struct EnsembleScorer<'a> {
    model: &'a SuperModel,
    frozen: Vec<FrozenLearner<'a>>,
}

impl<'a> EnsembleScorer<'a> {
    pub fn deterministic(model: &'a SuperModel) -> Self {
        Self {
            model,
            frozen: model.learners.iter().map(FrozenLearner::deterministic).collect(),
        }
    }

    /// Posterior-sampling scorer; each member gets its own derived seed.
    pub fn sampled(model: &'a SuperModel, samples: usize, seed: u64) -> Self {
        Self {
            model,
            frozen: model
                .learners
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    FrozenLearner::sampled(l, samples, seeds::derive(seed, Stream::Predict, k as u64))
                })
                .collect(),
        }
    }
}

impl Scorer for EnsembleScorer<'_> {
    fn score(&self, user: u32, item: u32) -> Result<f64> {
        let z: Vec<f64> = self
            .frozen
            .iter()
            .map(|f| f.score(user, item))
            .collect::<Result<_>>()?;
        Ok(self.model.combine_scores(&z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal scores ordered by ascending item id (default, deterministic).
    ItemId,
    /// Equal scores shuffled by a seed-derived key (still reproducible).
    Random,
}

/// Candidate list for one test user, ordered by descending score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedList {
    pub user: u32,
    pub truth_item: u32,
    pub items: Vec<u32>,
    /// 1-based position of `truth_item` in `items`.
    pub ground_truth_rank: usize,
}

/// Order scored candidates (which must include the ground-truth item) and
/// locate the truth. `tie_seed` only matters for [`TieBreak::Random`].
pub fn rank_candidates(
    user: u32,
    scored: &[(u32, f64)],
    truth_item: u32,
    tie_break: TieBreak,
    tie_seed: u64,
) -> RankedList {
    let mut keyed: Vec<(u32, f64, u64)> = match tie_break {
        TieBreak::ItemId => scored.iter().map(|&(i, s)| (i, s, i as u64)).collect(),
        TieBreak::Random => {
            let mut rng = seeds::rng(tie_seed, Stream::Negatives, (1 << 63) | user as u64);
            scored.iter().map(|&(i, s)| (i, s, rng.gen())).collect()
        }
    };
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    let items: Vec<u32> = keyed.iter().map(|&(i, _, _)| i).collect();
    let ground_truth_rank = items
        .iter()
        .position(|&i| i == truth_item)
        .expect("candidate list must contain the ground-truth item")
        + 1;
    RankedList {
        user,
        truth_item,
        items,
        ground_truth_rank,
    }
}

/// Single-relevant-item metrics at cutoff `k` for a 1-based rank (absent
/// means the truth was not ranked): rank r ≤ k gives
/// (1, 1/log₂(r+1), 1/r), anything else gives zeros.
pub fn metric_at_k(ground_truth_rank: Option<usize>, k: usize) -> (f64, f64, f64) {
    assert!(k >= 1, "cutoff must be at least 1");
    match ground_truth_rank {
        Some(r) if (1..=k).contains(&r) => {
            let rf = r as f64;
            (1.0, 1.0 / (rf + 1.0).log2(), 1.0 / rf)
        }
        _ => (0.0, 0.0, 0.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// List cutoffs; NDCG/MRR are reported for every cutoff except 1, where
    /// they coincide with HR@1.
    pub cutoffs: Vec<usize>,
    pub num_negatives: usize,
    pub negatives_seed: u64,
    pub tie_break: TieBreak,
    /// Echoed into the report so it can be traced back to a run config.
    pub config_fingerprint: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: vec![1, 5, 10],
            num_negatives: 100,
            negatives_seed: 42,
            tie_break: TieBreak::ItemId,
            config_fingerprint: String::new(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig(
                "cutoffs must be a non-empty list of positive integers".into(),
            ));
        }
        if self.num_negatives == 0 {
            return Err(Error::InvalidConfig("num_negatives must be positive".into()));
        }
        Ok(())
    }
}

/// Per-user outcome; all metrics are recomputable from the rank alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRankRow {
    pub user: u32,
    pub truth_item: u32,
    pub rank: usize,
    pub num_candidates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean hit ratio per cutoff.
    pub hr: BTreeMap<usize, f64>,
    /// Mean NDCG per cutoff (cutoff 1 omitted, equals HR@1).
    pub ndcg: BTreeMap<usize, f64>,
    /// Mean MRR per cutoff (cutoff 1 omitted, equals HR@1).
    pub mrr: BTreeMap<usize, f64>,
    pub num_users: usize,
    pub negatives_seed: u64,
    pub config_fingerprint: String,
    pub users: Vec<UserRankRow>,
}

impl MetricsReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.hr.get(&k).copied()
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.get(&k).copied()
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.mrr.get(&k).copied()
    }

    /// (name, value) pairs in stable column order: hr@k, ndcg@k, mrr@k.
    pub fn metric_columns(&self) -> Vec<(String, f64)> {
        let mut cols = Vec::new();
        for (&k, &v) in &self.hr {
            cols.push((format!("hr@{k}"), v));
        }
        for (&k, &v) in &self.ndcg {
            cols.push((format!("ndcg@{k}"), v));
        }
        for (&k, &v) in &self.mrr {
            cols.push((format!("mrr@{k}"), v));
        }
        cols
    }
}

/// Leave-one-out evaluation: for each test user, sample `num_negatives`
/// never-interacted items, rank them together with the held-out item, and
/// average the metrics over users. Pure in (scorer, split, options).
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &SplitPair,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    opts.validate()?;
    if split.test.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let users: Vec<UserRankRow> = split
        .test
        .par_iter()
        .map(|tp| -> Result<UserRankRow> {
            let per_user_seed = seeds::derive(opts.negatives_seed, Stream::Negatives, tp.user as u64);
            let negatives = data::sample_negatives_excluding(
                &split.train,
                tp.user as usize,
                &[tp.item],
                opts.num_negatives,
                per_user_seed,
            )?;
            let mut scored = Vec::with_capacity(negatives.len() + 1);
            for &item in negatives.iter().chain(std::iter::once(&tp.item)) {
                let s = scorer.score(tp.user, item).map_err(|e| Error::ScorerFailure {
                    user: tp.user as usize,
                    item: item as usize,
                    source: Box::new(e),
                })?;
                scored.push((item, s));
            }
            let ranked = rank_candidates(tp.user, &scored, tp.item, opts.tie_break, opts.negatives_seed);
            Ok(UserRankRow {
                user: tp.user,
                truth_item: tp.item,
                rank: ranked.ground_truth_rank,
                num_candidates: ranked.items.len(),
            })
        })
        .collect::<Result<_>>()?;

    let mut cutoffs = opts.cutoffs.clone();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let n = users.len() as f64;
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    let mut mrr = BTreeMap::new();
    for &k in &cutoffs {
        let (mut sh, mut sn, mut sm) = (0.0, 0.0, 0.0);
        for row in &users {
            let (h, nd, m) = metric_at_k(Some(row.rank), k);
            sh += h;
            sn += nd;
            sm += m;
        }
        hr.insert(k, sh / n);
        if k > 1 {
            ndcg.insert(k, sn / n);
            mrr.insert(k, sm / n);
        }
    }

    Ok(MetricsReport {
        hr,
        ndcg,
        mrr,
        num_users: users.len(),
        negatives_seed: opts.negatives_seed,
        config_fingerprint: opts.config_fingerprint.clone(),
        users,
    })
}

/// [`evaluate`] with the ensemble's deterministic frozen scorer.
pub fn evaluate_supermodel(
    model: &SuperModel,
    split: &SplitPair,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let mut opts = opts.clone();
    if opts.config_fingerprint.is_empty() {
        opts.config_fingerprint = config_digest(&model.config);
    }
    let scorer = EnsembleScorer::deterministic(model);
    evaluate(&scorer, split, &opts)
}

/// Short hex digest of any serializable config, for report provenance.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("config serialization");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

pub const SWEEP_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_interactions: usize,
    pub report: MetricsReport,
}

/// Train-set-size sweep: subsample the train split per fraction, retrain
/// the configured ensemble, and evaluate against the UNCHANGED test split.
/// Negative pools are drawn against the full train history so candidate
/// sets are identical across fractions; the fraction-1.0 row is exactly a
/// standalone full-data run at the same seed.
pub fn sparsity_sweep(
    dataset: &RatingDataset,
    fractions: &[f64],
    config: &EnsembleConfig,
    opts: &EvalOptions,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    opts.validate()?;
    if fractions.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one fraction".into()));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0 && f.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sweep fraction must be in (0, 1], got {f}"
            )));
        }
    }

    let split = data::leave_one_out_split(dataset);
    let mut rows = Vec::with_capacity(fractions.len());
    for (idx, &fraction) in fractions.iter().enumerate() {
        let train_sub = data::subset(
            &split.train,
            fraction,
            seeds::derive(config.seed, Stream::Subset, idx as u64),
        );
        log::info!(
            "sweep fraction {fraction}: {} of {} train interactions",
            train_sub.len(),
            split.train.len()
        );
        let (model, _) = train_supermodel(&train_sub, config)?;
        let report = evaluate_supermodel(&model, &split, opts)?;
        rows.push(SweepRow {
            fraction,
            train_interactions: train_sub.len(),
            report,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// The configured model as-is.
    Full,
    /// Matching head replaced by cosine similarity of the embeddings.
    CosineScore,
    /// Attention block removed; element-wise product goes straight to the MLP.
    NoAttention,
    /// One weak learner instead of the ensemble.
    SingleLearner,
    /// Member scores averaged instead of combined by the meta network.
    AverageCombine,
    /// Embeddings concatenated (no element-wise product) into the MLP.
    Concat,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::CosineScore,
        AblationVariant::NoAttention,
        AblationVariant::SingleLearner,
        AblationVariant::AverageCombine,
        AblationVariant::Concat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::CosineScore => "cosine_score",
            AblationVariant::NoAttention => "no_attention",
            AblationVariant::SingleLearner => "single_learner",
            AblationVariant::AverageCombine => "average_combine",
            AblationVariant::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown ablation variant '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Derive the variant's config from the full model's config.
pub fn ablation_config(base: &EnsembleConfig, variant: AblationVariant) -> EnsembleConfig {
    let mut cfg = base.clone();
    match variant {
        AblationVariant::Full => {}
        AblationVariant::CosineScore => cfg.learner.matching = MatchingKind::Cosine,
        AblationVariant::NoAttention => cfg.learner.matching = MatchingKind::MlpOnly,
        AblationVariant::Concat => cfg.learner.matching = MatchingKind::ConcatMlp,
        AblationVariant::AverageCombine => cfg.combine = CombineMode::Average,
        AblationVariant::SingleLearner => {
            cfg.num_learners = 1;
            cfg.combine = CombineMode::Average;
            cfg.seeds.truncate(1);
        }
    }
    cfg
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: MetricsReport,
}

/// Train and evaluate one ablation variant on an existing split.
pub fn run_ablation_variant(
    split: &SplitPair,
    base: &EnsembleConfig,
    variant: AblationVariant,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let cfg = ablation_config(base, variant);
    cfg.validate()?;
    let (model, _) = train_supermodel(&split.train, &cfg)?;
    evaluate_supermodel(&model, split, opts)
}

/// Run the requested variants against one shared leave-one-out split, so
/// every row ranks the same candidates with the same seed.
pub fn ablation_table(
    dataset: &RatingDataset,
    base: &EnsembleConfig,
    variants: &[AblationVariant],
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one variant".into()));
    }
    let split = data::leave_one_out_split(dataset);
    variants
        .iter()
        .map(|&variant| {
            log::info!("ablation variant {}", variant.name());
            let report = run_ablation_variant(&split, base, variant, opts)?;
            Ok(AblationRow { variant, report })
        })
        .collect()
}

/// Pretty-printed JSON artifact writer shared by the report producers.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Checkpoint(format!("report serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_csv_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(f, "{header}").map_err(io_err)?;
    for row in rows {
        writeln!(f, "{row}").map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

/// Flat csv, one row per labeled report, all metrics as columns.
pub fn write_reports_csv(path: &Path, label_name: &str, rows: &[(String, &MetricsReport)]) -> Result<()> {
    let Some((_, first)) = rows.first() else {
        return write_csv_rows(path, label_name, &[]);
    };
    let cols = first.metric_columns();
    let header = format!(
        "{label_name},num_users,negatives_seed,{}",
        cols.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(",")
    );
    let lines: Vec<String> = rows
        .iter()
        .map(|(label, r)| {
            let vals = r
                .metric_columns()
                .iter()
                .map(|(_, v)| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            format!("{label},{},{},{vals}", r.num_users, r.negatives_seed)
        })
        .collect();
    write_csv_rows(path, &header, &lines)
}

/// Fraction-sweep csv with the four curve metrics per row.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let pick = |r: &MetricsReport, m: Option<f64>, name: &str| -> Result<f64> {
        m.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "sweep csv needs {name} (cutoffs {:?})",
                r.hr.keys().collect::<Vec<_>>()
            ))
        })
    };
    let mut lines = Vec::with_capacity(rows.len());
    for row in rows {
        let r = &row.report;
        lines.push(format!(
            "{},{},{},{},{},{}",
            row.fraction,
            row.train_interactions,
            pick(r, r.hr_at(1), "hr@1")?,
            pick(r, r.hr_at(10), "hr@10")?,
            pick(r, r.ndcg_at(10), "ndcg@10")?,
            pick(r, r.mrr_at(10), "mrr@10")?,
        ));
    }
    write_csv_rows(
        path,
        "fraction,train_interactions,hr@1,hr@10,ndcg@10,mrr@10",
        &lines,
    )
}

/// Ablation csv, one row per variant.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let labeled: Vec<(String, &MetricsReport)> = rows
        .iter()
        .map(|r| (r.variant.name().to_string(), &r.report))
        .collect();
    write_reports_csv(path, "variant", &labeled)
}
