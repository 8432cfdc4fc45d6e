//! Epistemic uncertainty: closed-form variance propagation through the
//! variational last layer, ensemble prediction spread, and per-user cohort
//! summaries.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::bayes::GaussianVariationalLayer;
use crate::data::RatingDataset;
use crate::ensemble::SuperModel;
use crate::error::{Error, Result};
use crate::model::{PredictMode, WeakLearner};

/// Mean and variance of each output unit of an affine Gaussian layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationStats {
    pub mu_z: Vec<f64>,
    pub var_z: Vec<f64>,
}

/// Parameters of the score map `α · ln(1 + β · σ²_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyScoreParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for UncertaintyScoreParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 80.0,
        }
    }
}

impl UncertaintyScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0)
            || !(self.beta.is_finite() && self.beta > 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "uncertainty score parameters must be positive (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Exact Gaussian propagation through `z = W h + b` with independent
/// `W_oi ~ N(μ_oi, σ²_oi)`, `b_o ~ N(μ_o, σ²_o)`:
/// `μ_z = μ_w h + μ_b`, `σ²_z = Σ σ²_{w,i} h_i² + σ²_b`.
pub fn activation_stats(layer: &GaussianVariationalLayer, h: &[f64]) -> Result<ActivationStats> {
    if h.len() != layer.in_dim {
        return Err(Error::ShapeMismatch {
            context: "activation_stats input".into(),
            expected: layer.in_dim.to_string(),
            got: h.len().to_string(),
        });
    }
    let mut mu_z = Vec::with_capacity(layer.out_dim);
    let mut var_z = Vec::with_capacity(layer.out_dim);
    for o in 0..layer.out_dim {
        let base = o * layer.in_dim;
        let mut mu = layer.mu_b[o];
        let mut var = layer.sigma_b(o).powi(2);
        for (i, &hi) in h.iter().enumerate() {
            mu += layer.mu_w[base + i] * hi;
            var += layer.sigma_w(base + i).powi(2) * hi * hi;
        }
        mu_z.push(mu);
        var_z.push(var);
    }
    Ok(ActivationStats { mu_z, var_z })
}

/// `α · ln(1 + β · σ²_z)`; zero variance maps to zero, strictly increasing.
pub fn uncertainty_score(var_z: f64, params: &UncertaintyScoreParams) -> Result<f64> {
    params.validate()?;
    if !(var_z.is_finite() && var_z >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "activation variance must be non-negative, got {var_z}"
        )));
    }
    Ok(params.alpha * (params.beta * var_z).ln_1p())
}

/// Scalar score for a whole layer output: the variance fed to the score map
/// is the mean of `σ²_z` over output units.
pub fn uncertainty_score_from_stats(
    stats: &ActivationStats,
    params: &UncertaintyScoreParams,
) -> Result<f64> {
    let mean_var = stats.var_z.iter().sum::<f64>() / stats.var_z.len() as f64;
    uncertainty_score(mean_var, params)
}

/// Population standard deviation (divide by K) of the member predictions.
/// Requires at least two members.
pub fn ensemble_uncertainty(member_predictions: &[f64]) -> Result<f64> {
    let k = member_predictions.len();
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "ensemble uncertainty needs at least 2 member predictions, got {k}"
        )));
    }
    let mean = member_predictions.iter().sum::<f64>() / k as f64;
    let var = member_predictions
        .iter()
        .map(|p| (p - mean) * (p - mean))
        .sum::<f64>()
        / k as f64;
    Ok(var.sqrt())
}

/// Reparameterization-method score for one user: variance propagated
/// through the user tower's variational layer from the deterministic hidden
/// state.
pub fn reparam_user_score(
    learner: &WeakLearner,
    user: u32,
    params: &UncertaintyScoreParams,
) -> Result<f64> {
    if user as usize >= learner.num_users {
        return Err(Error::UnknownUser(user as usize));
    }
    let h = learner
        .user_tower
        .hidden_state(&learner.user_profiles[user as usize]);
    let stats = activation_stats(&learner.user_tower.bayes, &h)?;
    uncertainty_score_from_stats(&stats, params)
}

/// Item-side counterpart of [`reparam_user_score`].
pub fn reparam_item_score(
    learner: &WeakLearner,
    item: u32,
    params: &UncertaintyScoreParams,
) -> Result<f64> {
    if item as usize >= learner.num_items {
        return Err(Error::UnknownItem(item as usize));
    }
    let h = learner
        .item_tower
        .hidden_state(&learner.item_profiles[item as usize]);
    let stats = activation_stats(&learner.item_tower.bayes, &h)?;
    uncertainty_score_from_stats(&stats, params)
}

/// Zero out the lowest-SNR weights of both variational layers of every
/// member. Returns the pruned-index masks per member as
/// (user-layer, item-layer) pairs.
pub fn snr_prune_supermodel(
    model: &mut SuperModel,
    fraction: f64,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    model
        .learners
        .iter_mut()
        .map(|l| {
            (
                l.user_tower.bayes.snr_prune(fraction),
                l.item_tower.bayes.snr_prune(fraction),
            )
        })
        .collect()
}

/// Ranking quality before and after SNR pruning, on the same split and
/// seed, so the delta isolates the pruning effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneImpact {
    pub fraction: f64,
    pub hr10_before: f64,
    pub hr10_after: f64,
    /// hr10_after − hr10_before (negative means pruning hurt).
    pub hr10_delta: f64,
    pub report_before: crate::eval::MetricsReport,
    pub report_after: crate::eval::MetricsReport,
}

/// Evaluate, prune the lowest-SNR fraction of every variational layer in
/// place, evaluate again, and report the HR@10 movement.
pub fn snr_prune_impact(
    model: &mut SuperModel,
    split: &crate::data::SplitPair,
    fraction: f64,
    opts: &crate::eval::EvalOptions,
) -> Result<PruneImpact> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "prune fraction must be in [0, 1], got {fraction}"
        )));
    }
    let report_before = crate::eval::evaluate_supermodel(model, split, opts)?;
    snr_prune_supermodel(model, fraction);
    let report_after = crate::eval::evaluate_supermodel(model, split, opts)?;
    let need10 = |r: &crate::eval::MetricsReport| {
        r.hr_at(10).ok_or_else(|| {
            Error::InvalidConfig("prune impact needs cutoff 10 in eval cutoffs".into())
        })
    };
    let hr10_before = need10(&report_before)?;
    let hr10_after = need10(&report_after)?;
    Ok(PruneImpact {
        fraction,
        hr10_before,
        hr10_after,
        hr10_delta: hr10_after - hr10_before,
        report_before,
        report_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    /// Closed-form variance through the user tower's variational layer.
    Reparam,
    /// Population std of per-member predictions (needs K ≥ 2).
    Ensemble,
}

impl UncertaintyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UncertaintyMethod::Reparam => "reparam",
            UncertaintyMethod::Ensemble => "ensemble",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reparam" => Ok(UncertaintyMethod::Reparam),
            "ensemble" => Ok(UncertaintyMethod::Ensemble),
            other => Err(Error::InvalidConfig(format!(
                "unknown uncertainty method '{other}' (expected reparam or ensemble)"
            ))),
        }
    }
}

/// Cohort boundaries for the ratio summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortThresholds {
    /// Users with fewer than this many ratings are the sparse cohort.
    pub sparse_below: usize,
    /// Users whose rating std exceeds this are the inconsistent cohort.
    pub inconsistent_above: f64,
}

impl Default for CohortThresholds {
    fn default() -> Self {
        Self {
            sparse_below: 22,
            inconsistent_above: 1.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairScore {
    pub user: u32,
    pub item: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserAggregate {
    pub user: u32,
    pub mean_score: f64,
    pub rating_count: usize,
    /// Population std of the user's ratings.
    pub rating_std: f64,
}

/// One point of the uncertainty-vs-history-size curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Inclusive lower edge of the rating-count bin.
    pub ratings_bin: usize,
    pub mean_score: f64,
    /// Users in the bin.
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub method: UncertaintyMethod,
    pub thresholds: CohortThresholds,
    pub pairs: Vec<PairScore>,
    pub users: Vec<UserAggregate>,
    /// mean(sparse cohort) / mean(dense cohort); absent when a cohort is
    /// empty or the denominator is zero.
    pub sparse_dense_ratio: Option<f64>,
    /// mean(inconsistent) / mean(consistent); same caveats.
    pub inconsistent_consistent_ratio: Option<f64>,
    /// Human-readable reasons for omitted ratios.
    pub notes: Vec<String>,
    pub curve: Vec<CurvePoint>,
}

fn cohort_ratio(
    users: &[UserAggregate],
    in_upper: impl Fn(&UserAggregate) -> bool,
    label: (&str, &str),
    notes: &mut Vec<String>,
) -> Option<f64> {
    let (hi, lo): (Vec<&UserAggregate>, Vec<&UserAggregate>) =
        users.iter().partition(|u| in_upper(u));
    if hi.is_empty() || lo.is_empty() {
        notes.push(format!(
            "{} vs {} ratio omitted: empty cohort ({} vs {} users)",
            label.0,
            label.1,
            hi.len(),
            lo.len()
        ));
        return None;
    }
    let mean = |xs: &[&UserAggregate]| {
        xs.iter().map(|u| u.mean_score).sum::<f64>() / xs.len() as f64
    };
    let denom = mean(&lo);
    if denom <= 0.0 {
        notes.push(format!(
            "{} vs {} ratio omitted: zero mean uncertainty in the {} cohort",
            label.0, label.1, label.1
        ));
        return None;
    }
    Some(mean(&hi) / denom)
}

const CURVE_BIN_WIDTH: usize = 10;

/// Per-user uncertainty over the user's interactions in `dataset`, cohort
/// ratios, and the binned curve. The reparam method averages the per-member
/// user-tower scores (for a single-learner model this is just that
/// learner); the ensemble method needs K ≥ 2.
pub fn user_uncertainty_profile(
    model: &SuperModel,
    dataset: &RatingDataset,
    method: UncertaintyMethod,
    params: &UncertaintyScoreParams,
    thresholds: CohortThresholds,
) -> Result<UncertaintyReport> {
    params.validate()?;
    if dataset.interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let positions = dataset.positions_by_user();
    let mut pairs = Vec::new();
    let mut users = Vec::new();
    // Per-user reparam scores are item-independent, so compute them once.
    let mut user_score_cache: Vec<Option<f64>> = vec![None; dataset.num_users];

    for (user, pos) in positions.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let user = user as u32;
        let mut sum = 0.0;
        for &p in pos {
            let it = &dataset.interactions[p];
            let score = match method {
                UncertaintyMethod::Reparam => match user_score_cache[user as usize] {
                    Some(s) => s,
                    None => {
                        let mut acc = 0.0;
                        for l in &model.learners {
                            acc += reparam_user_score(l, user, params)?;
                        }
                        let s = acc / model.learners.len() as f64;
                        user_score_cache[user as usize] = Some(s);
                        s
                    }
                },
                UncertaintyMethod::Ensemble => {
                    let pred = model.predict(user, it.item, &PredictMode::Deterministic)?;
                    ensemble_uncertainty(&pred.member_predictions)?
                }
            };
            pairs.push(PairScore {
                user,
                item: it.item,
                score,
            });
            sum += score;
        }
        let ratings: Vec<f64> = pos
            .iter()
            .map(|&p| dataset.interactions[p].rating)
            .collect();
        let mean_r = ratings.iter().sum::<f64>() / ratings.len() as f64;
        let var_r = ratings
            .iter()
            .map(|r| (r - mean_r) * (r - mean_r))
            .sum::<f64>()
            / ratings.len() as f64;
        users.push(UserAggregate {
            user,
            mean_score: sum / pos.len() as f64,
            rating_count: pos.len(),
            rating_std: var_r.sqrt(),
        });
    }

    let mut notes = Vec::new();
    let sparse_dense_ratio = cohort_ratio(
        &users,
        |u| u.rating_count < thresholds.sparse_below,
        ("sparse", "dense"),
        &mut notes,
    );
    let inconsistent_consistent_ratio = cohort_ratio(
        &users,
        |u| u.rating_std > thresholds.inconsistent_above,
        ("inconsistent", "consistent"),
        &mut notes,
    );

    // Fixed-width bins over rating count, averaging user mean scores.
    let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for u in &users {
        let bin = (u.rating_count / CURVE_BIN_WIDTH) * CURVE_BIN_WIDTH;
        let e = bins.entry(bin).or_insert((0.0, 0));
        e.0 += u.mean_score;
        e.1 += 1;
    }
    let curve = bins
        .into_iter()
        .map(|(bin, (sum, count))| CurvePoint {
            ratings_bin: bin,
            mean_score: sum / count as f64,
            count,
        })
        .collect();

    Ok(UncertaintyReport {
        method,
        thresholds,
        pairs,
        users,
        sparse_dense_ratio,
        inconsistent_consistent_ratio,
        notes,
        curve,
    })
}

impl UncertaintyReport {
    /// Per-pair dump: `user,item,method,score`.
    pub fn write_pair_scores_csv(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(f, "user,item,method,score").map_err(io_err)?;
        for p in &self.pairs {
            writeln!(f, "{},{},{},{}", p.user, p.item, self.method.name(), p.score)
                .map_err(io_err)?;
        }
        f.flush().map_err(io_err)
    }

    /// Binned curve dump: `ratings_bin,mean_score,count`.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(f, "ratings_bin,mean_score,count").map_err(io_err)?;
        for c in &self.curve {
            writeln!(f, "{},{},{}", c.ratings_bin, c.mean_score, c.count).map_err(io_err)?;
        }
        f.flush().map_err(io_err)
    }
}
