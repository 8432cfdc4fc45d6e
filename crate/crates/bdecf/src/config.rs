//! Run configuration: one TOML tree covering the whole pipeline, with a
//! documented default for every field, dotted-path overrides, and strict
//! rejection of unknown keys.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{load_ratings, Format, LoadOptions, RatingDataset, RatingScale};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, SWEEP_FRACTIONS};
use crate::uncertainty::{CohortThresholds, UncertaintyMethod, UncertaintyScoreParams};

/// Where the ratings come from and how they are filtered.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Ratings file; required by every command (no usable default).
    pub path: String,
    /// "ml-100k" (tab-separated), "ml-1m" ("::"-separated), or "csv".
    pub format: String,
    /// Declared rating bounds, used for normalization.
    pub min_rating: f64,
    pub max_rating: f64,
    /// Preprocessing floors, applied iteratively until stable: drop items
    /// with fewer raters, then users with fewer ratings.
    pub min_item_raters: usize,
    pub min_user_ratings: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            path: String::new(),
            format: "ml-100k".into(),
            min_rating: 1.0,
            max_rating: 5.0,
            min_item_raters: 5,
            min_user_ratings: 20,
        }
    }
}

impl DatasetSpec {
    pub fn scale(&self) -> RatingScale {
        RatingScale::new(self.min_rating, self.max_rating)
    }

    pub fn validate(&self) -> Result<()> {
        if self.path.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset.path is required (no default)".into(),
            ));
        }
        Format::parse(&self.format)?;
        if !(self.min_rating < self.max_rating) {
            return Err(Error::InvalidConfig(format!(
                "dataset rating bounds must satisfy min < max, got [{}, {}]",
                self.min_rating, self.max_rating
            )));
        }
        if self.min_item_raters == 0 || self.min_user_ratings == 0 {
            return Err(Error::InvalidConfig(
                "dataset.min_item_raters and dataset.min_user_ratings must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Parse the ratings file without filtering.
    pub fn load_raw(&self) -> Result<RatingDataset> {
        let format = Format::parse(&self.format)?;
        load_ratings(
            Path::new(&self.path),
            format,
            &LoadOptions {
                scale: Some(self.scale()),
                name: None,
            },
        )
    }

    /// Parse, filter by the margins, and re-densify the id space.
    pub fn load(&self) -> Result<RatingDataset> {
        let raw = self.load_raw()?;
        crate::data::preprocess(&raw, self.min_item_raters, self.min_user_ratings)
    }
}

/// Uncertainty-stage settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySpec {
    /// "reparam" or "ensemble".
    pub method: UncertaintyMethod,
    pub score: UncertaintyScoreParams,
    pub thresholds: CohortThresholds,
    /// Fraction of lowest-SNR weights zeroed when pruning is requested.
    pub prune_fraction: f64,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self {
            method: UncertaintyMethod::Reparam,
            score: UncertaintyScoreParams::default(),
            thresholds: CohortThresholds::default(),
            prune_fraction: 0.2,
        }
    }
}

impl UncertaintySpec {
    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        if !(0.0..=1.0).contains(&self.prune_fraction) {
            return Err(Error::InvalidConfig(format!(
                "uncertainty.prune_fraction must be in [0, 1], got {}",
                self.prune_fraction
            )));
        }
        Ok(())
    }
}

/// Sweep-stage settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Train-set fractions, each in (0, 1].
    pub fractions: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            fractions: SWEEP_FRACTIONS.to_vec(),
        }
    }
}

/// Everything a run needs, grouped by pipeline stage. The training knobs
/// (optimizer, learning rate, batch size, epochs) live under
/// `ensemble.learner`; all randomness fans out from `ensemble.seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub ensemble: EnsembleConfig,
    pub eval: EvalOptions,
    pub sweep: SweepSpec,
    pub uncertainty: UncertaintySpec,
    /// Root for command artifacts; the BDECF_OUT environment variable
    /// overrides it.
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalOptions::default(),
            sweep: SweepSpec::default(),
            uncertainty: UncertaintySpec::default(),
            output_dir: "runs".into(),
        }
    }
}

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ENV: &str = "BDECF_OUT";

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.ensemble.validate()?;
        self.eval.validate()?;
        self.uncertainty.validate()?;
        if self.sweep.fractions.is_empty() {
            return Err(Error::InvalidConfig("sweep.fractions must not be empty".into()));
        }
        for &f in &self.sweep.fractions {
            if !(f > 0.0 && f <= 1.0 && f.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "sweep.fractions entries must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Short digest identifying this exact configuration.
    pub fn fingerprint(&self) -> String {
        crate::eval::config_digest(self)
    }

    /// The artifact root: `BDECF_OUT` when set, else `output_dir`.
    pub fn output_root(&self) -> String {
        if let Ok(v) = std::env::var(OUTPUT_ENV) {
            if !v.is_empty() {
                return v;
            }
        }
        self.output_dir.clone()
    }

    /// Apply one `key=value` override using the key's dotted TOML path
    /// (e.g. `ensemble.num_learners=4`, `eval.cutoffs=[1,5,10]`). Unknown
    /// paths and ill-typed values are rejected.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let bad = |msg: String| Error::InvalidConfig(format!("override {key}: {msg}"));
        if key.is_empty() {
            return Err(bad("empty key".into()));
        }
        let mut root = toml::Value::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut root;
        for part in &parts[..parts.len() - 1] {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| bad(format!("{part} is not a table")))?;
            cur = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let leaf = parts[parts.len() - 1];
        let value = parse_value(raw);
        cur.as_table_mut()
            .ok_or_else(|| bad(format!("{leaf} has no parent table")))?
            .insert(leaf.to_string(), value);
        *self = root.try_into().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

/// Interpret an override value as a TOML literal, falling back to a plain
/// string so `--set dataset.format=csv` works without quoting.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::CombineMode;
    use crate::model::MatchingKind;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
        // Spot-check the documented defaults.
        assert_eq!(back.ensemble.num_learners, 10);
        assert_eq!(back.ensemble.bootstrap_fraction, 0.8);
        assert_eq!(back.ensemble.learner.embedding_dim, 64);
        assert_eq!(back.ensemble.learner.num_heads, 4);
        assert_eq!(back.eval.num_negatives, 100);
        assert_eq!(back.eval.cutoffs, vec![1, 5, 10]);
        assert_eq!(back.sweep.fractions, SWEEP_FRACTIONS.to_vec());
        assert_eq!(back.uncertainty.score.alpha, 10.0);
        assert_eq!(back.uncertainty.score.beta, 80.0);
        assert_eq!(back.uncertainty.thresholds.sparse_below, 22);
        assert_eq!(back.dataset.min_item_raters, 5);
        assert_eq!(back.dataset.min_user_ratings, 20);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let err = RunConfig::from_toml_str("[ensemble]\nnum_larners = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("num_larners"), "{msg}");
        assert!(RunConfig::from_toml_str("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn validation_requires_a_dataset_path() {
        let cfg = RunConfig::default();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("dataset.path"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let mut ok = RunConfig::default();
        ok.dataset.path = "ratings.csv".into();
        ok.dataset.format = "csv".into();
        ok.validate().unwrap();

        ok.dataset.format = "tsv".into();
        assert!(ok.validate().is_err());
    }

    #[test]
    fn overrides_follow_dotted_paths_and_types() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("ensemble.num_learners", "4").unwrap();
        assert_eq!(cfg.ensemble.num_learners, 4);
        cfg.apply_override("ensemble.learner.learning_rate", "0.01").unwrap();
        assert_eq!(cfg.ensemble.learner.learning_rate, 0.01);
        cfg.apply_override("ensemble.learner.matching", "cosine").unwrap();
        assert_eq!(cfg.ensemble.learner.matching, MatchingKind::Cosine);
        cfg.apply_override("ensemble.combine", "average").unwrap();
        assert_eq!(cfg.ensemble.combine, CombineMode::Average);
        cfg.apply_override("eval.cutoffs", "[1, 5, 10, 20]").unwrap();
        assert_eq!(cfg.eval.cutoffs, vec![1, 5, 10, 20]);
        cfg.apply_override("dataset.path", "data/u.data").unwrap();
        assert_eq!(cfg.dataset.path, "data/u.data");
        cfg.apply_override("sweep.fractions", "[0.5, 1.0]").unwrap();
        assert_eq!(cfg.sweep.fractions, vec![0.5, 1.0]);

        // Unknown key and wrong type are both named in the error.
        let err = cfg.apply_override("ensemble.num_larners", "4").unwrap_err();
        assert!(err.to_string().contains("num_larners"), "{err}");
        assert!(cfg.apply_override("ensemble.num_learners", "\"four\"").is_err());
        // Failed overrides leave the config unchanged.
        assert_eq!(cfg.ensemble.num_learners, 4);
    }

    #[test]
    fn fingerprint_distinguishes_configs() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.apply_override("ensemble.seed", "43").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn prior_family_is_selectable_from_toml() {
        let cfg = RunConfig::from_toml_str(
            "[ensemble.learner.prior]\nfamily = \"isotropic\"\nmu = 0.0\nsigma = 2.0\n",
        )
        .unwrap();
        assert_eq!(
            cfg.ensemble.learner.prior,
            crate::bayes::PriorSpec::Isotropic { mu: 0.0, sigma: 2.0 }
        );
    }
}
