use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bizsent::adapt::{self, AdaptConfig, PseudoLabelSet};
use bizsent::corpus::{self, make_split, sentence_records, tokenizer_by_name, Format, IngestOptions, SentenceRecord, Source, SplitSpec};
use bizsent::features::{load_embeddings, tfidf, EmbeddingTable, TfidfConfig, VocabHash, Vocabulary, DEFAULT_VOCAB_SIZE};
use bizsent::filter::{filter_corpus, threshold_report, Filtered, KernelSpec, OneClassSvm, SvmConfig, DEFAULT_NU};
use bizsent::index::{self, Bucketing, IndexSeries, SentenceSentiment, SurveyResponse, DEFAULT_DI_WEIGHTS};
use bizsent::io;
use bizsent::pipeline::{self, format_for, KernelKind, PipelineConfig};
use bizsent::regressor::{self, GruConfig, GruModel, ParamSelection, TrainConfig};
use bizsent::synth::{self, WorldConfig};
use bizsent::{Error, Result};

/// Business sentiment index from survey statements and news text.
#[derive(Parser)]
#[command(name = "bizsent", version)]
struct Cli {
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a raw corpus and write its sentences as JSONL.
    Ingest(IngestArgs),
    /// Train the recurrent regressor on labeled survey sentences.
    Train(TrainArgs),
    /// Report the MSE of a trained model on labeled sentences.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of random models.
    Gradcheck(GradcheckArgs),
    /// Train the one-class relevance filter on survey sentences.
    FilterTrain(FilterTrainArgs),
    /// Split news sentences into relevant and irrelevant.
    FilterApply(FilterApplyArgs),
    /// Pseudo-label filtered news and fine-tune the model on it.
    Adapt(AdaptArgs),
    /// Score sentences with a model.
    Score(ScoreArgs),
    /// Aggregate sentence scores into a per-period index.
    Index(IndexArgs),
    /// Per-word influence series of a score file.
    Influence(InfluenceArgs),
    /// Diffusion index of rated survey responses.
    Ewdi(EwdiArgs),
    /// Pearson correlation of two index CSVs over their shared periods.
    Correlate(CorrelateArgs),
    /// Run every stage from a config file, resuming where possible.
    Pipeline(PipelineArgs),
    /// Write the markdown report and charts of a run.
    Report(ReportArgs),
    /// Write a synthetic survey/news corpus with a matching config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "news")]
    source: Source,
    /// jsonl or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, default_value = "whitespace")]
    tokenizer: String,
    #[arg(long, default_value = corpus::DEFAULT_DELIMITER)]
    delimiter: String,
    #[arg(long)]
    output: PathBuf,
    /// Also write a train/test split of the labeled statements here.
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = regressor::gru::DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = regressor::gru::DEFAULT_LAYERS)]
    layers: usize,
    #[arg(long, default_value_t = bizsent::features::DEFAULT_EMBEDDING_DIM)]
    embedding_dim: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled survey sentences (output of `ingest --source survey`).
    #[arg(long)]
    sentences: PathBuf,
    /// Extra unlabeled sentence files whose words join the vocabulary.
    #[arg(long)]
    news: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    #[arg(long)]
    freeze_embeddings: bool,
    /// Writes model.bin, vocab.tsv and train_log.json here.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    sentences: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    embedding_dim: usize,
    /// Number of random models to check.
    #[arg(long, default_value_t = 20)]
    models: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct FilterTrainArgs {
    /// Survey sentences the filter learns as in-domain.
    #[arg(long)]
    sentences: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NU)]
    nu: f64,
    #[arg(long, default_value = "rbf")]
    kernel: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Skip L2 normalisation of the tf-idf vectors.
    #[arg(long)]
    no_l2_norm: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes ocsvm.bin and bow_vocab.tsv here.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FilterApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    sentences: PathBuf,
    /// Writes verdicts.jsonl and kept.jsonl here.
    #[arg(long)]
    out_dir: PathBuf,
    /// Print the outlier rate at a grid of shifted decision thresholds.
    #[arg(long)]
    threshold_report: bool,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Filtered sentences (kept.jsonl of `filter-apply`).
    #[arg(long)]
    sentences: PathBuf,
    /// Accept a plain sentence file that never went through the filter.
    #[arg(long)]
    allow_unfiltered: bool,
    #[arg(long, default_value_t = adapt::DEFAULT_T_HIGH, allow_hyphen_values = true)]
    thigh: f64,
    #[arg(long, default_value_t = adapt::DEFAULT_T_LOW, allow_hyphen_values = true)]
    tlow: f64,
    #[arg(long, default_value_t = 3)]
    ft_epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    ft_lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    balance: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    /// Writes pseudo_labels.jsonl and model_prime.bin here.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    sentences: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "monthly")]
    bucketing: Bucketing,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long = "word", required = true)]
    words: Vec<String>,
    #[arg(long, default_value = "monthly")]
    bucketing: Bucketing,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct EwdiArgs {
    /// Raw survey corpus (jsonl or csv).
    #[arg(long)]
    survey: PathBuf,
    #[arg(long)]
    format: Option<Format>,
    /// Keep respondents whose occupation contains any of these.
    #[arg(long)]
    occupation: Vec<String>,
    /// Five comma-separated weights for conditions +2..-2.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value = "monthly")]
    bucketing: Bucketing,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "BIZSENT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    thigh: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tlow: Option<f64>,
    #[arg(long)]
    ft_epochs: Option<usize>,
    #[arg(long)]
    ft_lr: Option<f64>,
    /// Also write the report after the run.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a pipeline run.
    #[arg(long, env = "BIZSENT_OUTPUT_DIR")]
    dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    months: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::FilterTrain(a) => filter_train(a),
        Command::FilterApply(a) => filter_apply(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Score(a) => score(a),
        Command::Index(a) => index_cmd(a),
        Command::Influence(a) => influence(a),
        Command::Ewdi(a) => ewdi(a),
        Command::Correlate(a) => correlate(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Sentence records from either a plain JSONL file or a filtered file with
/// its provenance line.
fn read_sentences(path: &Path) -> Result<Vec<SentenceRecord>> {
    match Filtered::<SentenceRecord>::load_jsonl(path) {
        Ok(f) => Ok(f.into_items()),
        Err(_) => io::read_jsonl(path),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let tokenizer = tokenizer_by_name(&a.tokenizer)?;
    if a.delimiter.is_empty() {
        return Err(Error::Config("delimiter must not be empty".into()));
    }
    let got = corpus::ingest(&a.input, &IngestOptions::new(format_for(&a.input, a.format), a.source))?;
    let records = sentence_records(&got.documents, &a.delimiter, tokenizer.as_ref());
    io::write_jsonl(&a.output, &records)?;
    log::info!(
        "{} documents, {} sentences, {} rejected records",
        got.documents.len(),
        records.len(),
        got.rejected.len()
    );
    if let Some(path) = a.split_out {
        let ids: Vec<String> = records.iter().filter(|r| r.label.is_some()).map(|r| r.sentence.doc_id.clone()).collect();
        let (train, test) = make_split(
            &ids,
            &SplitSpec {
                train_fraction: a.train_fraction,
                seed: a.seed,
            },
        )?;
        io::write_json(
            &path,
            &pipeline::SplitIds {
                train,
                validation: Vec::new(),
                test,
            },
        )?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let records: Vec<SentenceRecord> = read_sentences(&a.sentences)?;
    let labeled: Vec<_> = records.iter().filter_map(SentenceRecord::labeled).collect();
    let mut news = Vec::new();
    for p in &a.news {
        news.extend(read_sentences(p)?);
    }
    let (train_set, validation) = if a.validation_fraction > 0.0 && labeled.len() >= 2 {
        make_split(
            &labeled,
            &SplitSpec {
                train_fraction: 1.0 - a.validation_fraction,
                seed: a.seed,
            },
        )?
    } else {
        (labeled, Vec::new())
    };
    let vocab = Vocabulary::build(
        train_set.iter().map(|e| &e.sentence).chain(news.iter().map(|r| &r.sentence)),
        a.vocab_size,
    )?;
    let dim = a.model.embedding_dim;
    let mut table = match &a.embedding_file {
        Some(path) => {
            let (t, cov) = load_embeddings(path, &vocab, dim, a.seed)?;
            log::info!("embedding coverage {:.3} ({} of {} words)", cov.ratio, cov.matched, cov.vocab_words);
            t
        }
        None => EmbeddingTable::random(vocab.n_ids(), dim, a.seed),
    };
    table.trainable = !a.freeze_embeddings;
    let config = GruConfig {
        embedding_dim: dim,
        hidden: a.model.hidden,
        layers: a.model.layers,
        ..GruConfig::default()
    };
    let model = GruModel::new(config, table, vocab.hash(), a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        patience: a.patience,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = regressor::train(model, &vocab, &train_set, &validation, &cfg)?;
    vocab.save_tsv(&a.out_dir.join("vocab.tsv"))?;
    outcome.model.save(&a.out_dir.join("model.bin"))?;
    io::write_json(&a.out_dir.join("train_log.json"), &outcome.log)?;
    print_json(&outcome.log)
}

fn eval(a: EvalArgs) -> Result<()> {
    let vocab = Vocabulary::load_tsv(&a.vocab)?;
    let model = GruModel::load_for(&a.model, &vocab)?;
    let examples: Vec<_> = read_sentences(&a.sentences)?.iter().filter_map(SentenceRecord::labeled).collect();
    print_json(&regressor::evaluate(&model, &vocab, &examples)?)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let config = GruConfig {
        embedding_dim: a.embedding_dim,
        hidden: a.hidden,
        layers: a.layers,
        ..GruConfig::default()
    };
    let rows = 6;
    let mut worst = 0.0f64;
    for k in 0..a.models {
        let seed = a.seed + k;
        let table = EmbeddingTable::random(rows, a.embedding_dim, seed);
        let model = GruModel::new(config.clone(), table, VocabHash(0), seed)?;
        let ids: Vec<u32> = (0..5).map(|i| (i * 7 + k as u32) % rows as u32).collect();
        let r = regressor::gradient_check(&model, &ids, 0.7, a.epsilon, ParamSelection::All);
        println!(
            "model {seed}: {} parameters, max relative error {:.3e} at {}",
            model.n_params(),
            r.max_relative_error,
            r.worst_parameter
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("worst relative error {worst:.3e} (tolerance {:.1e})", a.tolerance);
    if worst < a.tolerance {
        Ok(())
    } else {
        Err(Error::Data(format!("gradient check failed: {worst:.3e} >= {:.1e}", a.tolerance)))
    }
}

fn filter_train(a: FilterTrainArgs) -> Result<()> {
    let records = read_sentences(&a.sentences)?;
    let sentences: Vec<_> = records.iter().map(|r| &r.sentence).collect();
    let vocab = Vocabulary::build(sentences.iter().copied(), a.vocab_size)?;
    let mut features = TfidfConfig::filter();
    features.l2_normalize = !a.no_l2_norm;
    let vectors: Vec<_> = sentences.iter().map(|s| tfidf(&s.tokens, &vocab, &features)).collect();
    let kind: KernelKind = match a.kernel.as_str() {
        "rbf" => KernelKind::Rbf,
        "linear" => KernelKind::Linear,
        other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
    };
    let cfg = SvmConfig {
        nu: a.nu,
        kernel: match kind {
            KernelKind::Rbf => KernelSpec::Rbf { gamma: a.gamma },
            KernelKind::Linear => KernelSpec::Linear,
        },
        seed: a.seed,
        ..SvmConfig::default()
    };
    let (svm, stats) = OneClassSvm::train(&vectors, features, &cfg)?;
    vocab.save_tsv(&a.out_dir.join("bow_vocab.tsv"))?;
    svm.save(&a.out_dir.join("ocsvm.bin"))?;
    print_json(&stats)
}

fn filter_apply(a: FilterApplyArgs) -> Result<()> {
    let vocab = Vocabulary::load_tsv(&a.vocab)?;
    let svm = OneClassSvm::load(&a.model)?;
    let outcome = filter_corpus(&svm, &vocab, read_sentences(&a.sentences)?)?;
    io::write_jsonl(&a.out_dir.join("verdicts.jsonl"), &outcome.verdicts)?;
    outcome.inliers.save_jsonl(&a.out_dir.join("kept.jsonl"))?;
    print_json(&outcome.stats)?;
    if a.threshold_report {
        let grid = [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2];
        println!("threshold,outlier_rate");
        for row in threshold_report(&outcome.verdicts, &grid) {
            println!("{},{:.4}", row.threshold, row.outlier_rate);
        }
    }
    Ok(())
}

fn adapt_cmd(a: AdaptArgs) -> Result<()> {
    let vocab = Vocabulary::load_tsv(&a.vocab)?;
    let model = GruModel::load_for(&a.model, &vocab)?;
    let sentences = match Filtered::<SentenceRecord>::load_jsonl(&a.sentences) {
        Ok(f) => f,
        Err(e) if a.allow_unfiltered => {
            log::warn!("using unfiltered sentences: {e}");
            Filtered::unfiltered(io::read_jsonl(&a.sentences)?)
        }
        Err(e) => return Err(e),
    };
    let cfg = AdaptConfig {
        t_high: a.thigh,
        t_low: a.tlow,
        fine_tune: TrainConfig {
            epochs: a.ft_epochs,
            learning_rate: a.ft_lr,
            batch_size: a.batch_size,
            patience: 0,
            seed: a.seed,
            ..TrainConfig::default()
        },
        balance: a.balance,
        allow_unfiltered: a.allow_unfiltered,
    };
    let labeling = adapt::pseudo_label(&model, &vocab, &sentences, &cfg)?;
    if let Some(path) = &a.histogram_out {
        io::write_text(path, &adapt::histogram_csv(&adapt::histogram(&labeling.scores, 0.1)))?;
    }
    let set: PseudoLabelSet = labeling.set;
    set.save_jsonl(&a.out_dir.join("pseudo_labels.jsonl"))?;
    print_json(&set.provenance)?;
    let outcome = adapt::fine_tune(&model, &vocab, &set, &cfg)?;
    outcome.model.save(&a.out_dir.join("model_prime.bin"))?;
    io::write_json(&a.out_dir.join("train_log_prime.json"), &outcome.log)?;
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let vocab = Vocabulary::load_tsv(&a.vocab)?;
    let model = GruModel::load_for(&a.model, &vocab)?;
    let (scores, skipped) = index::sentence_sentiments(&model, &vocab, &read_sentences(&a.sentences)?)?;
    io::write_jsonl(&a.output, &scores)?;
    log::info!("scored {} sentences, skipped {skipped} empty", scores.len());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<SentenceSentiment>> {
    io::read_jsonl(path)
}

fn index_cmd(a: IndexArgs) -> Result<()> {
    let series = index::aggregate(&read_scores(&a.scores)?, a.bucketing)?;
    io::write_text(&a.output, &series.to_csv())?;
    if let Some(chart) = a.chart {
        io::write_text(&chart, &index::svg_chart("Sentiment index", &[&series]))?;
    }
    Ok(())
}

fn influence(a: InfluenceArgs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let series = a
        .words
        .iter()
        .map(|w| index::word_influence(&scores, w, a.bucketing))
        .collect::<Result<Vec<_>>>()?;
    io::write_text(&a.output, &index::influence_csv(&series))?;
    if let Some(chart) = a.chart {
        let as_series: Vec<IndexSeries> = series
            .iter()
            .map(|s| IndexSeries {
                id: s.word.clone(),
                bucketing: a.bucketing,
                points: s
                    .points
                    .iter()
                    .map(|p| index::IndexPoint {
                        period: p.period,
                        value: p.value,
                        n: usize::from(p.value.is_some()),
                    })
                    .collect(),
            })
            .collect();
        let refs: Vec<&IndexSeries> = as_series.iter().collect();
        io::write_text(&chart, &index::svg_chart("Word influence", &refs))?;
    }
    Ok(())
}

fn ewdi(a: EwdiArgs) -> Result<()> {
    let got = corpus::ingest(&a.survey, &IngestOptions::new(format_for(&a.survey, a.format), Source::Survey))?;
    let responses = SurveyResponse::from_documents(&got.documents);
    let weights: [f64; 5] = match a.weights {
        Some(w) => w
            .try_into()
            .map_err(|_| Error::Config("--weights takes exactly five values".into()))?,
        None => DEFAULT_DI_WEIGHTS,
    };
    let di = if a.occupation.is_empty() {
        index::diffusion_index(&responses, &weights, a.bucketing)?
    } else {
        index::ewdi_subgroup(
            &responses,
            |occ| a.occupation.iter().any(|s| occ.contains(s.as_str())),
            &weights,
            a.bucketing,
        )?
    };
    io::write_text(&a.output, &di.to_csv())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let name = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let sa = IndexSeries::from_csv(name(&a.a), &io::read_text(&a.a)?)?;
    let sb = IndexSeries::from_csv(name(&a.b), &io::read_text(&a.b)?)?;
    print_json(&index::pearson(&sa, &sb)?)
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(dir) = a.output_dir {
        // relative to the working directory, not the config file
        cfg.paths.output_dir = std::env::current_dir().map_err(|e| Error::io(".", e))?.join(dir);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.hidden {
        cfg.model.hidden = v;
    }
    if let Some(v) = a.layers {
        cfg.model.layers = v;
    }
    if let Some(v) = a.embedding_dim {
        cfg.model.embedding_dim = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.nu {
        cfg.filter.nu = v;
    }
    if let Some(v) = a.thigh {
        cfg.adapt.t_high = v;
    }
    if let Some(v) = a.tlow {
        cfg.adapt.t_low = v;
    }
    if let Some(v) = a.ft_epochs {
        cfg.adapt.epochs = v;
    }
    if let Some(v) = a.ft_lr {
        cfg.adapt.learning_rate = Some(v);
    }
    let manifest = pipeline::run_pipeline(&cfg)?;
    println!("config hash {}", manifest.config_hash);
    for s in &manifest.stages {
        let how = if s.reused { "reused" } else { "ran" };
        println!("{:<13} {how:<6} {:>8.2}s  {}", s.name, s.seconds, s.artifact);
    }
    if a.report {
        let out = pipeline::report(&cfg.output_dir())?;
        println!("report {}", out.markdown.display());
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = pipeline::report(&a.dir)?;
    for m in &out.missing {
        log::warn!("missing artifact: {m}");
    }
    println!("{}", out.markdown.display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut cfg = WorldConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.months {
        cfg.months = m;
    }
    synth::write_fixture(&a.out_dir, &cfg)
}
