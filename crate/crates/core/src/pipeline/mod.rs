//! End-to-end run from raw corpora to the sentiment index, its correlations
//! with the survey diffusion index and per-word influence.
//!
//! Every stage writes its outputs under the run's output directory and is
//! recorded in `manifest.json` with file digests and a digest of its inputs.
//! A re-run skips stages whose recorded outputs are intact and whose inputs
//! are unchanged, so deleting an artifact re-creates just that stage and
//! whatever depends on bytes that actually changed.

mod config;
mod report;
mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    format_for, stage_seed, AdaptSection, CorpusConfig, FeaturesConfig, FilterConfig, IndexConfig, KernelKind,
    ModelConfig, PathsConfig, PipelineConfig, RidgeConfig, TrainSection,
};
pub use report::{report, ReportOutput, REPORT_DIR};
pub use stages::{
    lexicon_words, paths, read_eval, top_influence_words, CorrelationRow, FilterReport, FilterTrainStats,
    RejectedLine, SplitIds, EVAL_GRU_M, EVAL_GRU_M_PRIME, EVAL_RIDGE, SERIES_DI, SERIES_DI_SUBGROUP, SERIES_M_ALL,
    SERIES_M_FILTERED, SERIES_M_PRIME,
};

use crate::error::{Error, Result};
use crate::filter::OneClassSvm;
use crate::io;
use crate::regressor::{Generation, GruModel};
use stages::{StageCtx, STAGES};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

/// Stage names in execution order.
pub fn stage_names() -> Vec<&'static str> {
    STAGES.iter().map(|(n, _)| *n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// The stage's primary output.
    pub artifact: String,
    pub aux: Vec<String>,
    /// SHA-256 of every file the stage wrote, keyed by relative path.
    pub files: BTreeMap<String, String>,
    /// Digest of the config hash, the input corpora and all earlier outputs.
    pub input_digest: String,
    pub seconds: f64,
    pub reused: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<Generation>,
    pub id: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Copy of the effective configuration, relative to the output dir.
    pub config_file: String,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub models: Vec<ModelRecord>,
    #[serde(default)]
    pub reports: Vec<String>,
}

impl RunManifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        io::read_json(&out_dir.join(MANIFEST_FILE))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        io::write_json(&out_dir.join(MANIFEST_FILE), self)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Primary artifact of each stage, in stage order.
    pub fn artifacts(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.artifact.as_str()).collect()
    }

    /// Every file under the output dir the manifest accounts for, itself
    /// included.
    pub fn all_files(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.stages.iter().flat_map(|s| s.files.keys().cloned()).collect();
        out.insert(self.config_file.clone());
        out.insert(MANIFEST_FILE.to_string());
        out.extend(self.reports.iter().cloned());
        out
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn outputs_intact(out: &Path, files: &BTreeMap<String, String>) -> bool {
    files
        .iter()
        .all(|(rel, digest)| file_sha256(&out.join(rel)).is_ok_and(|d| &d == digest))
}

/// Runs (or resumes) every stage and returns the final manifest. The
/// manifest is rewritten after each stage, so a failed run keeps the
/// record of what it finished.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let config_hash = cfg.hash()?;
    let previous = RunManifest::load(&out).ok();
    io::write_text(&out.join(CONFIG_COPY), &cfg.to_toml()?)?;

    let mut inputs = BTreeMap::new();
    let mut input_paths = vec![cfg.survey_path()];
    input_paths.extend(cfg.news_paths());
    input_paths.extend(cfg.embeddings_path());
    for p in &input_paths {
        inputs.insert(p.display().to_string(), file_sha256(p)?);
    }
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.clone(),
        seed: cfg.seed,
        config_file: CONFIG_COPY.to_string(),
        inputs,
        stages: Vec::new(),
        models: Vec::new(),
        reports: previous
            .as_ref()
            .map(|p| p.reports.iter().filter(|r| out.join(r).is_file()).cloned().collect())
            .unwrap_or_default(),
    };

    let mut upstream = Sha256::new();
    upstream.update(config_hash.as_bytes());
    for d in manifest.inputs.values() {
        upstream.update(d.as_bytes());
    }
    for (name, run) in STAGES {
        let input_digest = hex::encode(upstream.clone().finalize());
        let prior = previous.as_ref().and_then(|p| p.stage(name));
        let record = match prior {
            Some(r) if r.input_digest == input_digest && outputs_intact(&out, &r.files) => {
                log::info!("{name}: outputs up to date, skipping");
                StageRecord {
                    seconds: 0.0,
                    reused: true,
                    ..r.clone()
                }
            }
            _ => {
                log::info!("{name}: running");
                let ctx = StageCtx {
                    cfg,
                    out: &out,
                    seed: stage_seed(cfg.seed, name),
                };
                let start = Instant::now();
                let written = match run(&ctx) {
                    Ok(w) => w,
                    Err(e) => {
                        manifest.save(&out)?;
                        return Err(e.in_stage(name));
                    }
                };
                let seconds = start.elapsed().as_secs_f64();
                let mut files = BTreeMap::new();
                for rel in std::iter::once(written.artifact).chain(written.aux.iter().copied()) {
                    files.insert(rel.to_string(), file_sha256(&out.join(rel))?);
                }
                if let Some(r) = prior {
                    for stale in r.files.keys().filter(|k| !files.contains_key(*k)) {
                        let _ = fs::remove_file(out.join(stale));
                    }
                }
                StageRecord {
                    name: name.to_string(),
                    artifact: written.artifact.to_string(),
                    aux: written.aux.iter().map(|s| s.to_string()).collect(),
                    files,
                    input_digest,
                    seconds,
                    reused: false,
                }
            }
        };
        for (rel, d) in &record.files {
            upstream.update(rel.as_bytes());
            upstream.update(d.as_bytes());
        }
        manifest.stages.push(record);
        manifest.save(&out)?;
    }
    manifest.models = model_records(&out)?;
    manifest.save(&out)?;
    Ok(manifest)
}

fn model_records(out: &Path) -> Result<Vec<ModelRecord>> {
    let mut models = Vec::new();
    for (role, rel) in [("M", paths::MODEL_M), ("M'", paths::MODEL_M_PRIME)] {
        let m = GruModel::load(&out.join(rel))?;
        models.push(ModelRecord {
            role: role.to_string(),
            generation: Some(m.meta.generation),
            id: m.id(),
            path: rel.to_string(),
        });
    }
    models.push(ModelRecord {
        role: "filter".to_string(),
        generation: None,
        id: OneClassSvm::load(&out.join(paths::FILTER_MODEL))?.id()?,
        path: paths::FILTER_MODEL.to_string(),
    });
    models.push(ModelRecord {
        role: "ridge".to_string(),
        generation: None,
        id: file_sha256(&out.join(paths::RIDGE))?[..16].to_string(),
        path: paths::RIDGE.to_string(),
    });
    Ok(models)
}
