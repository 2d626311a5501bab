//! The single TOML file that drives a pipeline run.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{AdaptConfig, DEFAULT_T_HIGH, DEFAULT_T_LOW};
use crate::corpus::{tokenizer_by_name, Format, DEFAULT_DELIMITER};
use crate::error::{Error, Result};
use crate::features::{DEFAULT_EMBEDDING_DIM, DEFAULT_VOCAB_SIZE};
use crate::filter::{KernelSpec, SvmConfig, DEFAULT_MAX_ITER, DEFAULT_NU, KKT_TOL};
use crate::index::{validate_weights, Bucketing, DEFAULT_DI_WEIGHTS};
use crate::regressor::gru::{Direction, GruConfig, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_MAX_LEN};
use crate::regressor::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub features: FeaturesConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub ridge: RidgeConfig,
    pub filter: FilterConfig,
    pub adapt: AdaptSection,
    pub index: IndexConfig,
    /// Directory relative paths are resolved against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub survey: PathBuf,
    /// One or more news files, e.g. one per year.
    pub news: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            survey: PathBuf::from("survey.jsonl"),
            news: vec![PathBuf::from("news.jsonl")],
            embeddings: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub delimiter: String,
    pub tokenizer: String,
    /// Inferred from the file extension when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survey_format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub news_format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date_from: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date_to: Option<NaiveDate>,
    /// Share of survey statements used for training; the rest is the test set.
    pub train_fraction: f64,
    /// Share of the training portion held out for checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            delimiter: DEFAULT_DELIMITER.to_string(),
            tokenizer: "whitespace".to_string(),
            survey_format: None,
            news_format: None,
            date_from: None,
            date_to: None,
            train_fraction: 0.9,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Vocabulary of the recurrent model (survey training split plus news).
    pub vocab_size: usize,
    /// Bag-of-words vocabulary of the filter and the ridge baseline (survey
    /// training split only).
    pub bow_vocab_size: usize,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            bow_vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub direction: Direction,
    pub max_len: usize,
    pub trainable_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            direction: Direction::Forward,
            max_len: DEFAULT_MAX_LEN,
            trainable_embeddings: true,
        }
    }
}

/// Training settings of the initial model; the seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            clip_norm: t.clip_norm,
            patience: t.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    pub lambda: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { lambda: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub nu: f64,
    pub kernel: KernelKind,
    /// rbf only; picked from the data when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub max_iter: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            nu: DEFAULT_NU,
            kernel: KernelKind::Rbf,
            gamma: None,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub t_high: f64,
    pub t_low: f64,
    pub epochs: usize,
    /// Defaults to a tenth of the initial training rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub balance: bool,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            t_high: DEFAULT_T_HIGH,
            t_low: DEFAULT_T_LOW,
            epochs: 3,
            learning_rate: None,
            balance: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub bucketing: Bucketing,
    /// Weights of conditions +2, +1, 0, -1, -2.
    pub di_weights: [f64; 5],
    /// Survey respondents whose occupation contains any of these strings form
    /// the subgroup diffusion index; empty disables it.
    pub subgroup_occupations: Vec<String>,
    /// Words probed before and after adaptation; empty means the
    /// `lexicon_top` most frequent vocabulary words.
    pub lexicon_words: Vec<String>,
    pub lexicon_top: usize,
    /// Words whose influence series are written; empty means the
    /// `influence_top` words with the largest total absolute influence.
    pub influence_words: Vec<String>,
    pub influence_top: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            bucketing: Bucketing::Monthly,
            di_weights: DEFAULT_DI_WEIGHTS,
            subgroup_occupations: Vec::new(),
            lexicon_words: Vec::new(),
            lexicon_top: 50,
            influence_words: Vec::new(),
            influence_top: 5,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            features: FeaturesConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            ridge: RidgeConfig::default(),
            filter: FilterConfig::default(),
            adapt: AdaptSection::default(),
            index: IndexConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid pipeline config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml_str(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialisation with the output directory
    /// blanked, so the same experiment written to two places hashes alike.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn survey_path(&self) -> PathBuf {
        self.resolve(&self.paths.survey)
    }

    pub fn news_paths(&self) -> Vec<PathBuf> {
        self.paths.news.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn embeddings_path(&self) -> Option<PathBuf> {
        self.paths.embeddings.as_ref().map(|p| self.resolve(p))
    }

    /// Checks values and that every input file exists.
    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![self.survey_path()];
        if self.paths.news.is_empty() {
            return Err(Error::Config("no news corpus configured".into()));
        }
        inputs.extend(self.news_paths());
        inputs.extend(self.embeddings_path());
        for p in &inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        if self.corpus.delimiter.is_empty() {
            return Err(Error::Config("sentence delimiter must not be empty".into()));
        }
        tokenizer_by_name(&self.corpus.tokenizer)?;
        let c = &self.corpus;
        if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", c.train_fraction)));
        }
        if !(0.0..1.0).contains(&c.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 1)",
                c.validation_fraction
            )));
        }
        if let (Some(a), Some(b)) = (c.date_from, c.date_to) {
            if a > b {
                return Err(Error::Config(format!("date_from {a} is after date_to {b}")));
            }
        }
        if self.features.vocab_size == 0 || self.features.bow_vocab_size == 0 {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        self.gru_config().validate()?;
        self.train_config(0).validate()?;
        self.adapt_config(0).validate()?;
        if !(self.ridge.lambda > 0.0 && self.ridge.lambda.is_finite()) {
            return Err(Error::Config(format!("ridge lambda must be positive, got {}", self.ridge.lambda)));
        }
        if !(self.filter.nu > 0.0 && self.filter.nu <= 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1], got {}", self.filter.nu)));
        }
        if let Some(g) = self.filter.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        validate_weights(&self.index.di_weights)
    }

    pub fn gru_config(&self) -> GruConfig {
        GruConfig {
            embedding_dim: self.model.embedding_dim,
            hidden: self.model.hidden,
            layers: self.model.layers,
            direction: self.model.direction,
            max_len: self.model.max_len,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            clip_norm: t.clip_norm,
            seed,
            patience: t.patience,
        }
    }

    pub fn adapt_config(&self, seed: u64) -> AdaptConfig {
        let base = self.train_config(seed);
        AdaptConfig {
            t_high: self.adapt.t_high,
            t_low: self.adapt.t_low,
            fine_tune: TrainConfig {
                epochs: self.adapt.epochs,
                learning_rate: self.adapt.learning_rate.unwrap_or(base.learning_rate * 0.1),
                patience: 0,
                ..base
            },
            balance: self.adapt.balance,
            allow_unfiltered: false,
        }
    }

    pub fn svm_config(&self, seed: u64) -> SvmConfig {
        SvmConfig {
            nu: self.filter.nu,
            kernel: match self.filter.kernel {
                KernelKind::Rbf => KernelSpec::Rbf {
                    gamma: self.filter.gamma,
                },
                KernelKind::Linear => KernelSpec::Linear,
            },
            max_iter: self.filter.max_iter,
            tolerance: KKT_TOL,
            seed,
        }
    }
}

/// Corpus format from an explicit setting or the file extension.
pub fn format_for(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Jsonl,
    })
}

/// Seed of one stage, derived from the run seed and the stage name.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 11;
        cfg.paths.embeddings = Some("vec.txt".into());
        cfg.filter.gamma = Some(0.25);
        cfg.adapt.learning_rate = Some(3e-4);
        cfg.corpus.date_from = NaiveDate::from_ymd_opt(2013, 1, 1);
        cfg.index.subgroup_occupations = vec!["factory".into()];
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml_str(&text, Path::new("")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.output_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml_str("[model]\nhiden = 3\n", Path::new("")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_embedding_file_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["survey.jsonl", "news.jsonl"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let mut cfg = PipelineConfig::from_toml_str("", dir.path()).unwrap();
        cfg.validate().unwrap();
        cfg.paths.embeddings = Some("missing.vec".into());
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("missing.vec")), "{err}");
    }

    #[test]
    fn fine_tune_rate_defaults_to_a_tenth() {
        let cfg = PipelineConfig::default();
        let a = cfg.adapt_config(0);
        assert_eq!(a.fine_tune.learning_rate, cfg.train.learning_rate * 0.1);
        assert_eq!(a.fine_tune.patience, 0);
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(stage_seed(1, "train"), stage_seed(1, "split"));
        assert_eq!(stage_seed(1, "train"), stage_seed(1, "train"));
    }
}
