//! The eleven stages. Each reads its inputs from the artifacts of earlier
//! stages, so any suffix of the run can be repeated on its own.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{format_for, PipelineConfig};
use crate::adapt::{self, PseudoLabelSet};
use crate::corpus::{
    self, make_split, sentence_records, tokenizer_by_name, IngestOptions, LabeledExample, SentenceRecord, Source,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::features::{load_embeddings, tfidf, EmbeddingTable, TfidfConfig, Vocabulary};
use crate::filter::{filter_corpus, threshold_report, FilterStats, Filtered, OneClassSvm, SolverStats, ThresholdRow};
use crate::index::{
    aggregate, diffusion_index, ewdi_subgroup, influence_csv, influence_decomposition_check, influence_table, pearson,
    word_influence, CorrelationReport, IndexSeries, SentenceSentiment, SurveyResponse,
};
use crate::io;
use crate::regressor::{evaluate, train, EvalReport, GruModel, RidgeModel};

/// Relative paths of everything a run writes.
pub mod paths {
    pub const SENTENCES: &str = "corpus/sentences.jsonl";
    pub const REJECTED: &str = "corpus/rejected.jsonl";
    pub const SPLIT: &str = "split/split.json";
    pub const VOCAB: &str = "models/vocab.tsv";
    pub const BOW_VOCAB: &str = "models/bow_vocab.tsv";
    pub const EMBEDDING_COVERAGE: &str = "models/embedding_coverage.json";
    pub const MODEL_M: &str = "models/gru_m.bin";
    pub const TRAIN_LOG_M: &str = "models/train_log_m.json";
    pub const RIDGE: &str = "models/ridge.bin";
    pub const EVAL_M: &str = "models/eval_m.json";
    pub const FILTER_MODEL: &str = "models/ocsvm.bin";
    pub const FILTER_TRAIN_STATS: &str = "models/ocsvm_stats.json";
    pub const VERDICTS: &str = "filter/verdicts.jsonl";
    pub const KEPT: &str = "filter/kept.jsonl";
    pub const FILTER_STATS: &str = "filter/stats.json";
    pub const PSEUDO: &str = "adapt/pseudo_labels.jsonl";
    pub const HISTOGRAM: &str = "adapt/histogram.csv";
    pub const PSEUDO_STATS: &str = "adapt/pseudo_stats.json";
    pub const MODEL_M_PRIME: &str = "models/gru_m_prime.bin";
    pub const TRAIN_LOG_M_PRIME: &str = "models/train_log_m_prime.json";
    pub const EVAL_M_PRIME: &str = "models/eval_m_prime.json";
    pub const LEXICON: &str = "adapt/lexicon_diff.csv";
    pub const SCORES: &str = "index/sentence_scores.jsonl";
    pub const SCORES_M_ALL: &str = "index/sentence_scores_m_all.jsonl";
    pub const SCORES_M_FILTERED: &str = "index/sentence_scores_m_filtered.jsonl";
    pub const INDEX: &str = "index/sentiment_index.csv";
    pub const INDEX_M_ALL: &str = "index/sentiment_index_m_all.csv";
    pub const INDEX_M_FILTERED: &str = "index/sentiment_index_m_filtered.csv";
    pub const DIFFUSION: &str = "index/diffusion.csv";
    pub const DIFFUSION_SUBGROUP: &str = "index/diffusion_subgroup.csv";
    pub const CORRELATIONS: &str = "index/correlations.json";
    pub const INFLUENCE: &str = "index/influence.csv";
    pub const DECOMPOSITION: &str = "index/decomposition_check.json";
}

use paths::*;

/// Series ids used in the index CSVs, correlations and charts.
pub const SERIES_M_ALL: &str = "M, all news";
pub const SERIES_M_FILTERED: &str = "M, filtered news";
pub const SERIES_M_PRIME: &str = "M', filtered news";
pub const SERIES_DI: &str = "diffusion index";
pub const SERIES_DI_SUBGROUP: &str = "diffusion index, subgroup";

/// Model names in the evaluation files.
pub const EVAL_RIDGE: &str = "ridge";
pub const EVAL_GRU_M: &str = "GRU M";
pub const EVAL_GRU_M_PRIME: &str = "GRU M'";

const THRESHOLD_GRID: [f64; 7] = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
const HISTOGRAM_WIDTH: f64 = 0.1;
const DECOMPOSITION_LIMIT: f64 = 1e-9;

pub(crate) struct StageCtx<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: &'a Path,
    pub seed: u64,
}

impl StageCtx<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

/// What a stage wrote, relative to the output directory.
pub(crate) struct StageFiles {
    pub artifact: &'static str,
    pub aux: Vec<&'static str>,
}

pub(crate) type StageFn = fn(&StageCtx) -> Result<StageFiles>;

pub(crate) const STAGES: [(&str, StageFn); 11] = [
    ("ingest", ingest),
    ("split", split),
    ("train", train_m),
    ("filter-train", filter_train),
    ("filter", filter_news),
    ("pseudo-label", pseudo_label),
    ("fine-tune", fine_tune),
    ("score", score),
    ("aggregate", aggregate_stage),
    ("correlate", correlate),
    ("decompose", decompose),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

/// Survey statement ids of each split part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterTrainStats {
    pub n_train: usize,
    pub nu: f64,
    pub kernel: crate::filter::Kernel,
    pub solver: SolverStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub stats: FilterStats,
    pub thresholds: Vec<ThresholdRow>,
}

/// One row of the correlation table; `r` is absent when it is undefined
/// (fewer than two shared periods or a constant series).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub series: String,
    pub reference: String,
    pub r: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct SurveySplit {
    train: Vec<LabeledExample>,
    validation: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
}

fn records(ctx: &StageCtx) -> Result<Vec<SentenceRecord>> {
    io::read_jsonl(&ctx.path(SENTENCES))
}

fn news(records: Vec<SentenceRecord>) -> Vec<SentenceRecord> {
    records.into_iter().filter(|r| r.source == Source::News).collect()
}

fn load_split(ctx: &StageCtx, records: &[SentenceRecord]) -> Result<SurveySplit> {
    let ids: SplitIds = io::read_json(&ctx.path(SPLIT))?;
    let by_id: HashMap<&str, LabeledExample> = records
        .iter()
        .filter_map(|r| r.labeled().map(|ex| (r.sentence.doc_id.as_str(), ex)))
        .collect();
    let pick = |part: &[String]| -> Result<Vec<LabeledExample>> {
        part.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("split refers to unknown survey statement `{id}`")))
            })
            .collect()
    };
    Ok(SurveySplit {
        train: pick(&ids.train)?,
        validation: pick(&ids.validation)?,
        test: pick(&ids.test)?,
    })
}

fn vocab(ctx: &StageCtx) -> Result<Vocabulary> {
    Vocabulary::load_tsv(&ctx.path(VOCAB))
}

fn bow_vocab(ctx: &StageCtx) -> Result<Vocabulary> {
    Vocabulary::load_tsv(&ctx.path(BOW_VOCAB))
}

fn read_scores(ctx: &StageCtx, rel: &str) -> Result<Vec<SentenceSentiment>> {
    io::read_jsonl(&ctx.path(rel))
}

fn read_series(ctx: &StageCtx, rel: &str, id: &str) -> Result<IndexSeries> {
    IndexSeries::from_csv(id, &io::read_text(&ctx.path(rel))?)
}

// ---------------------------------------------------------------------------

fn ingest(ctx: &StageCtx) -> Result<StageFiles> {
    let c = &ctx.cfg.corpus;
    let tokenizer = tokenizer_by_name(&c.tokenizer)?;
    let range = match (c.date_from, c.date_to) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(NaiveDate::MIN), b.unwrap_or(NaiveDate::MAX))),
    };
    let mut inputs = vec![(ctx.cfg.survey_path(), Source::Survey, c.survey_format)];
    inputs.extend(ctx.cfg.news_paths().into_iter().map(|p| (p, Source::News, c.news_format)));

    let mut docs = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (path, source, format) in inputs {
        let mut opts = IngestOptions::new(format_for(&path, format), source);
        opts.date_range = range;
        let got = corpus::ingest(&path, &opts)?;
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        rejected.extend(got.rejected.into_iter().map(|r| RejectedLine {
            file: file.clone(),
            line: r.line,
            reason: r.reason,
        }));
        for d in got.documents {
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::Data(format!("document id `{}` appears in more than one file", d.doc_id)));
            }
            docs.push(d);
        }
    }
    let records = sentence_records(&docs, &c.delimiter, tokenizer.as_ref());
    let n_survey = records.iter().filter(|r| r.label.is_some()).count();
    let n_news = records.len() - n_survey;
    if n_survey < 2 {
        return Err(Error::Data(format!("survey corpus has {n_survey} labeled statements, need at least 2")));
    }
    if n_news == 0 {
        return Err(Error::Data("news corpus has no sentences".into()));
    }
    log::info!("ingest: {n_survey} survey statements, {n_news} news sentences, {} rejected", rejected.len());
    io::write_jsonl(&ctx.path(SENTENCES), &records)?;
    io::write_jsonl(&ctx.path(REJECTED), &rejected)?;
    Ok(StageFiles {
        artifact: SENTENCES,
        aux: vec![REJECTED],
    })
}

fn split(ctx: &StageCtx) -> Result<StageFiles> {
    let c = &ctx.cfg.corpus;
    let survey: Vec<String> = records(ctx)?
        .into_iter()
        .filter(|r| r.label.is_some())
        .map(|r| r.sentence.doc_id)
        .collect();
    let (train, test) = make_split(
        &survey,
        &SplitSpec {
            train_fraction: c.train_fraction,
            seed: ctx.seed,
        },
    )?;
    let (train, validation) = if c.validation_fraction > 0.0 && train.len() >= 2 {
        make_split(
            &train,
            &SplitSpec {
                train_fraction: 1.0 - c.validation_fraction,
                seed: ctx.seed.wrapping_add(1),
            },
        )?
    } else {
        (train, Vec::new())
    };
    log::info!(
        "split: {} train, {} validation, {} test",
        train.len(),
        validation.len(),
        test.len()
    );
    io::write_json(
        &ctx.path(SPLIT),
        &SplitIds {
            train,
            validation,
            test,
        },
    )?;
    Ok(StageFiles {
        artifact: SPLIT,
        aux: Vec::new(),
    })
}

fn train_m(ctx: &StageCtx) -> Result<StageFiles> {
    let cfg = ctx.cfg;
    let records = records(ctx)?;
    let split = load_split(ctx, &records)?;
    let news_sentences = records.iter().filter(|r| r.source == Source::News).map(|r| &r.sentence);
    let vocab = Vocabulary::build(
        split.train.iter().map(|e| &e.sentence).chain(news_sentences),
        cfg.features.vocab_size,
    )?;
    let bow = Vocabulary::build(split.train.iter().map(|e| &e.sentence), cfg.features.bow_vocab_size)?;
    vocab.save_tsv(&ctx.path(VOCAB))?;
    bow.save_tsv(&ctx.path(BOW_VOCAB))?;
    let mut aux = vec![VOCAB, BOW_VOCAB];

    let dim = cfg.model.embedding_dim;
    let mut table = match cfg.embeddings_path() {
        Some(path) => {
            let (table, coverage) = load_embeddings(&path, &vocab, dim, ctx.seed)?;
            log::info!("train: embedding coverage {:.3}", coverage.ratio);
            io::write_json(&ctx.path(EMBEDDING_COVERAGE), &coverage)?;
            aux.push(EMBEDDING_COVERAGE);
            table
        }
        None => EmbeddingTable::random(vocab.n_ids(), dim, ctx.seed),
    };
    table.trainable = cfg.model.trainable_embeddings;
    let model = GruModel::new(cfg.gru_config(), table, vocab.hash(), ctx.seed)?;
    log::info!("train: {} parameters, {} examples", model.n_params(), split.train.len());
    let outcome = train(model, &vocab, &split.train, &split.validation, &cfg.train_config(ctx.seed))?;
    outcome.model.save(&ctx.path(MODEL_M))?;
    io::write_json(&ctx.path(TRAIN_LOG_M), &outcome.log)?;

    let ridge = RidgeModel::fit(&bow, &split.train, cfg.ridge.lambda)?;
    ridge.save(&ctx.path(RIDGE))?;
    let mut eval = BTreeMap::new();
    eval.insert(EVAL_RIDGE.to_string(), ridge.evaluate(&bow, &split.test)?);
    eval.insert(EVAL_GRU_M.to_string(), evaluate(&outcome.model, &vocab, &split.test)?);
    io::write_json(&ctx.path(EVAL_M), &eval)?;
    aux.extend([TRAIN_LOG_M, RIDGE, EVAL_M]);
    Ok(StageFiles {
        artifact: MODEL_M,
        aux,
    })
}

fn filter_train(ctx: &StageCtx) -> Result<StageFiles> {
    let records = records(ctx)?;
    let split = load_split(ctx, &records)?;
    let bow = bow_vocab(ctx)?;
    let features = TfidfConfig::filter();
    let vectors: Vec<_> = split.train.iter().map(|e| tfidf(&e.sentence.tokens, &bow, &features)).collect();
    let (svm, solver) = OneClassSvm::train(&vectors, features, &ctx.cfg.svm_config(ctx.seed))?;
    log::info!(
        "filter-train: {} support vectors after {} iterations",
        solver.n_support,
        solver.iterations
    );
    svm.save(&ctx.path(FILTER_MODEL))?;
    io::write_json(
        &ctx.path(FILTER_TRAIN_STATS),
        &FilterTrainStats {
            n_train: svm.n_train,
            nu: svm.nu,
            kernel: svm.kernel,
            solver,
        },
    )?;
    Ok(StageFiles {
        artifact: FILTER_MODEL,
        aux: vec![FILTER_TRAIN_STATS],
    })
}

fn filter_news(ctx: &StageCtx) -> Result<StageFiles> {
    let news = news(records(ctx)?);
    let svm = OneClassSvm::load(&ctx.path(FILTER_MODEL))?;
    let outcome = filter_corpus(&svm, &bow_vocab(ctx)?, news)?;
    log::info!(
        "filter: kept {} of {} news sentences",
        outcome.stats.inliers,
        outcome.stats.total
    );
    io::write_jsonl(&ctx.path(VERDICTS), &outcome.verdicts)?;
    outcome.inliers.save_jsonl(&ctx.path(KEPT))?;
    io::write_json(
        &ctx.path(FILTER_STATS),
        &FilterReport {
            stats: outcome.stats,
            thresholds: threshold_report(&outcome.verdicts, &THRESHOLD_GRID),
        },
    )?;
    Ok(StageFiles {
        artifact: VERDICTS,
        aux: vec![KEPT, FILTER_STATS],
    })
}

fn pseudo_label(ctx: &StageCtx) -> Result<StageFiles> {
    let vocab = vocab(ctx)?;
    let m = GruModel::load_for(&ctx.path(MODEL_M), &vocab)?;
    let kept = Filtered::<SentenceRecord>::load_jsonl(&ctx.path(KEPT))?;
    let labeling = adapt::pseudo_label(&m, &vocab, &kept, &ctx.cfg.adapt_config(ctx.seed))?;
    let p = &labeling.set.provenance;
    log::info!(
        "pseudo-label: {} positive, {} negative of {} scored",
        p.positive,
        p.negative,
        p.scored
    );
    labeling.set.save_jsonl(&ctx.path(PSEUDO))?;
    io::write_text(
        &ctx.path(HISTOGRAM),
        &adapt::histogram_csv(&adapt::histogram(&labeling.scores, HISTOGRAM_WIDTH)),
    )?;
    io::write_json(&ctx.path(PSEUDO_STATS), &labeling.set.provenance)?;
    Ok(StageFiles {
        artifact: PSEUDO,
        aux: vec![HISTOGRAM, PSEUDO_STATS],
    })
}

/// Words probed before and after adaptation.
pub fn lexicon_words(cfg: &PipelineConfig, vocab: &Vocabulary) -> Vec<String> {
    if cfg.index.lexicon_words.is_empty() {
        vocab.words().iter().take(cfg.index.lexicon_top).cloned().collect()
    } else {
        cfg.index.lexicon_words.clone()
    }
}

fn fine_tune(ctx: &StageCtx) -> Result<StageFiles> {
    let cfg = ctx.cfg;
    let vocab = vocab(ctx)?;
    let m = GruModel::load_for(&ctx.path(MODEL_M), &vocab)?;
    let pseudo = PseudoLabelSet::load_jsonl(&ctx.path(PSEUDO), cfg.adapt.t_high, cfg.adapt.t_low)?;
    let outcome = adapt::fine_tune(&m, &vocab, &pseudo, &cfg.adapt_config(ctx.seed))?;
    let m_prime = outcome.model;
    m_prime.save(&ctx.path(MODEL_M_PRIME))?;
    io::write_json(&ctx.path(TRAIN_LOG_M_PRIME), &outcome.log)?;

    let records = records(ctx)?;
    let split = load_split(ctx, &records)?;
    let mut eval = BTreeMap::new();
    eval.insert(EVAL_GRU_M_PRIME.to_string(), evaluate(&m_prime, &vocab, &split.test)?);
    io::write_json(&ctx.path(EVAL_M_PRIME), &eval)?;

    let words = lexicon_words(cfg, &vocab);
    let before = adapt::probe_lexicon(&m, &vocab, &words)?;
    let after = adapt::probe_lexicon(&m_prime, &vocab, &words)?;
    let rows = adapt::diff_lexicon(&before, &after)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["word", "rank_before", "rank_after", "score_before", "score_after", "movement"])?;
    for r in &rows {
        w.write_record([
            r.word.clone(),
            r.rank_before.to_string(),
            r.rank_after.to_string(),
            r.score_before.to_string(),
            r.score_after.to_string(),
            r.movement.symbol().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("lexicon CSV: {e}")))?;
    io::write_bytes(&ctx.path(LEXICON), &bytes)?;
    Ok(StageFiles {
        artifact: MODEL_M_PRIME,
        aux: vec![TRAIN_LOG_M_PRIME, EVAL_M_PRIME, LEXICON],
    })
}

fn score(ctx: &StageCtx) -> Result<StageFiles> {
    let vocab = vocab(ctx)?;
    let m = GruModel::load_for(&ctx.path(MODEL_M), &vocab)?;
    let m_prime = GruModel::load_for(&ctx.path(MODEL_M_PRIME), &vocab)?;
    let all = news(records(ctx)?);
    let kept = Filtered::<SentenceRecord>::load_jsonl(&ctx.path(KEPT))?;
    let (m_all, _) = crate::index::sentence_sentiments(&m, &vocab, &all)?;
    let (m_filtered, _) = crate::index::sentence_sentiments(&m, &vocab, kept.items())?;
    let (prime, _) = crate::index::sentence_sentiments(&m_prime, &vocab, kept.items())?;
    io::write_jsonl(&ctx.path(SCORES), &prime)?;
    io::write_jsonl(&ctx.path(SCORES_M_ALL), &m_all)?;
    io::write_jsonl(&ctx.path(SCORES_M_FILTERED), &m_filtered)?;
    Ok(StageFiles {
        artifact: SCORES,
        aux: vec![SCORES_M_ALL, SCORES_M_FILTERED],
    })
}

fn aggregate_stage(ctx: &StageCtx) -> Result<StageFiles> {
    let ix = &ctx.cfg.index;
    let b = ix.bucketing;
    for (src, dst) in [(SCORES, INDEX), (SCORES_M_ALL, INDEX_M_ALL), (SCORES_M_FILTERED, INDEX_M_FILTERED)] {
        let series = aggregate(&read_scores(ctx, src)?, b)?;
        io::write_text(&ctx.path(dst), &series.to_csv())?;
    }
    let responses: Vec<SurveyResponse> = records(ctx)?
        .into_iter()
        .filter_map(|r| {
            r.label.map(|condition| SurveyResponse {
                date: r.sentence.timestamp,
                condition,
                occupation: r.occupation,
            })
        })
        .collect();
    let di = diffusion_index(&responses, &ix.di_weights, b)?;
    io::write_text(&ctx.path(DIFFUSION), &di.to_csv())?;
    let mut aux = vec![INDEX_M_ALL, INDEX_M_FILTERED, DIFFUSION];
    if !ix.subgroup_occupations.is_empty() {
        let keep = |occ: &str| ix.subgroup_occupations.iter().any(|s| occ.contains(s.as_str()));
        let sub = ewdi_subgroup(&responses, keep, &ix.di_weights, b)?;
        io::write_text(&ctx.path(DIFFUSION_SUBGROUP), &sub.to_csv())?;
        aux.push(DIFFUSION_SUBGROUP);
    }
    Ok(StageFiles { artifact: INDEX, aux })
}

fn correlation_row(a: &IndexSeries, b: &IndexSeries) -> CorrelationRow {
    match pearson(a, b) {
        Ok(CorrelationReport { r, n, .. }) => CorrelationRow {
            series: a.id.clone(),
            reference: b.id.clone(),
            r: Some(r),
            n,
            note: None,
        },
        Err(e) => CorrelationRow {
            series: a.id.clone(),
            reference: b.id.clone(),
            r: None,
            n: 0,
            note: Some(e.to_string()),
        },
    }
}

fn correlate(ctx: &StageCtx) -> Result<StageFiles> {
    let di = read_series(ctx, DIFFUSION, SERIES_DI)?;
    let prime = read_series(ctx, INDEX, SERIES_M_PRIME)?;
    let mut rows = vec![
        correlation_row(&read_series(ctx, INDEX_M_ALL, SERIES_M_ALL)?, &di),
        correlation_row(&read_series(ctx, INDEX_M_FILTERED, SERIES_M_FILTERED)?, &di),
        correlation_row(&prime, &di),
    ];
    if !ctx.cfg.index.subgroup_occupations.is_empty() {
        let sub = read_series(ctx, DIFFUSION_SUBGROUP, SERIES_DI_SUBGROUP)?;
        rows.push(correlation_row(&prime, &sub));
    }
    for r in &rows {
        match r.r {
            Some(v) => log::info!("correlate: {} vs {}: r = {v:.3} over {} periods", r.series, r.reference, r.n),
            None => log::warn!("correlate: {} vs {}: undefined", r.series, r.reference),
        }
    }
    io::write_json(&ctx.path(CORRELATIONS), &rows)?;
    Ok(StageFiles {
        artifact: CORRELATIONS,
        aux: Vec::new(),
    })
}

/// The `k` words with the largest total absolute influence, ties by word.
pub fn top_influence_words(sentiments: &[SentenceSentiment], bucketing: crate::index::Bucketing, k: usize) -> Vec<String> {
    let mut total: HashMap<String, f64> = HashMap::new();
    for per_word in influence_table(sentiments, bucketing).into_values() {
        for (w, v) in per_word {
            *total.entry(w).or_insert(0.0) += v.abs();
        }
    }
    let mut ranked: Vec<(String, f64)> = total.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(w, _)| w).collect()
}

fn decompose(ctx: &StageCtx) -> Result<StageFiles> {
    let ix = &ctx.cfg.index;
    let scores = read_scores(ctx, SCORES)?;
    let words = if ix.influence_words.is_empty() {
        top_influence_words(&scores, ix.bucketing, ix.influence_top)
    } else {
        ix.influence_words.clone()
    };
    let series = words
        .iter()
        .map(|w| word_influence(&scores, w, ix.bucketing))
        .collect::<Result<Vec<_>>>()?;
    io::write_text(&ctx.path(INFLUENCE), &influence_csv(&series))?;
    let check = influence_decomposition_check(&scores, ix.bucketing)?;
    io::write_json(&ctx.path(DECOMPOSITION), &check)?;
    if check.max_residual > DECOMPOSITION_LIMIT {
        return Err(Error::Data(format!(
            "word influences do not sum to the index: residual {:e} in {:?}",
            check.max_residual, check.worst_period
        )));
    }
    Ok(StageFiles {
        artifact: INFLUENCE,
        aux: vec![DECOMPOSITION],
    })
}

/// Loads an evaluation file written by the pipeline.
pub fn read_eval(path: &Path) -> Result<BTreeMap<String, EvalReport>> {
    io::read_json(path)
}
