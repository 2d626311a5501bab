//! Synthetic corpora with known ground truth: a rated survey and a news
//! stream whose in-domain sentences follow a latent monthly business
//! condition, plus off-topic noise articles.

use chrono::{Months, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, Document, Source};

pub const ECON_WORDS: &[&str] = &[
    "sales", "orders", "customers", "prices", "demand", "inventory", "exports", "profits", "shipments", "production",
    "consumers", "spending", "bookings", "traffic", "margins", "wages", "investment", "yen", "retail", "factory",
];

pub const SPORT_WORDS: &[&str] = &[
    "goal", "match", "striker", "league", "referee", "stadium", "coach", "penalty", "inning", "pitcher", "tournament",
    "keeper", "season", "derby", "umpire", "sprint", "medal", "relay", "racket", "wicket",
];

/// Sentiment words for conditions +2, +1, 0, -1, -2.
pub const SENTIMENT_WORDS: [&[&str]; 5] = [
    &["booming", "surging", "soaring"],
    &["improving", "firm", "recovering"],
    &["flat", "steady", "unchanged"],
    &["sluggish", "softening", "weak"],
    &["slumping", "collapsing", "plunging"],
];

pub const OCCUPATIONS: &[&str] = &[
    "manufacturing plant",
    "auto parts factory",
    "electronics factory",
    "retail store",
    "restaurant",
    "hotel",
    "taxi company",
    "travel agency",
];

pub fn sentiment_words(level: i8) -> &'static [&'static str] {
    SENTIMENT_WORDS[(2 - level.clamp(-2, 2)) as usize]
}

/// True for the occupations generated as industry respondents.
pub fn is_industry(occupation: &str) -> bool {
    occupation.contains("factory") || occupation.contains("plant")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub start: NaiveDate,
    pub months: usize,
    pub survey_per_month: usize,
    pub news_articles_per_month: usize,
    pub sentences_per_article: usize,
    /// Share of news articles drawn from the off-topic vocabulary.
    pub off_domain_fraction: f64,
    /// Standard deviation of individual ratings around the monthly condition.
    pub rating_noise: f64,
    /// Extra optimism of industry respondents, in condition units.
    pub industry_bias: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            start: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            months: 24,
            survey_per_month: 30,
            news_articles_per_month: 12,
            sentences_per_article: 3,
            off_domain_fraction: 0.3,
            rating_noise: 0.8,
            industry_bias: 0.6,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub survey: Vec<Document>,
    pub news: Vec<Document>,
    /// Latent monthly condition, one value per month from `start`.
    pub truth: Vec<(NaiveDate, f64)>,
}

/// Smooth latent path in roughly [-1.5, 1.5]: two sinusoids plus a small
/// random walk.
pub fn latent_path(months: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let step = Normal::new(0.0, 0.15).expect("valid normal");
    let mut walk = 0.0;
    (0..months)
        .map(|m| {
            walk = 0.9 * walk + step.sample(rng);
            let t = m as f64;
            (1.0 * (t / 5.0 + phase).sin() + 0.4 * (t / 2.3).cos() + walk).clamp(-1.8, 1.8)
        })
        .collect()
}

/// Rounds and clamps a latent value to a condition level.
pub fn level_of(x: f64) -> i8 {
    x.round().clamp(-2.0, 2.0) as i8
}

/// Business sentence of 4-7 tokens carrying the sentiment of `level`.
pub fn econ_sentence(rng: &mut ChaCha8Rng, level: i8) -> Vec<String> {
    let n = rng.random_range(3..=5);
    let mut toks: Vec<String> = (0..n).map(|_| pick(rng, ECON_WORDS).to_string()).collect();
    let words = sentiment_words(level);
    for _ in 0..rng.random_range(1..=2) {
        let at = rng.random_range(0..=toks.len());
        toks.insert(at, pick(rng, words).to_string());
    }
    toks
}

/// Off-topic sentence of 4-7 tokens from the sports vocabulary.
pub fn sport_sentence(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(4..=7);
    (0..n).map(|_| pick(rng, SPORT_WORDS).to_string()).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

pub fn generate_world(cfg: &WorldConfig) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = latent_path(cfg.months, &mut rng);
    let noise = Normal::new(0.0, cfg.rating_noise.max(1e-9)).expect("valid normal");
    let mut survey = Vec::new();
    let mut news = Vec::new();
    let mut truth = Vec::new();
    for (m, &g) in path.iter().enumerate() {
        let month = cfg.start + Months::new(m as u32);
        truth.push((month, g));
        for k in 0..cfg.survey_per_month {
            let occupation = pick(&mut rng, OCCUPATIONS);
            let bias = if is_industry(occupation) { cfg.industry_bias } else { 0.0 };
            let level = level_of(g + bias + noise.sample(&mut rng));
            let day = rng.random_range(1..=28);
            survey.push(Document {
                doc_id: format!("s{m:03}-{k:03}"),
                timestamp: on_day(month, day),
                source: Source::Survey,
                title: None,
                body: econ_sentence(&mut rng, level).join(" "),
                region: None,
                occupation: Some(occupation.to_string()),
                condition: Some(Condition::new(level.into()).expect("clamped level")),
            });
        }
        for k in 0..cfg.news_articles_per_month {
            let off = rng.random_bool(cfg.off_domain_fraction.clamp(0.0, 1.0));
            let sentences: Vec<String> = (0..cfg.sentences_per_article)
                .map(|_| {
                    if off {
                        sport_sentence(&mut rng).join(" ")
                    } else {
                        let level = level_of(g + noise.sample(&mut rng));
                        econ_sentence(&mut rng, level).join(" ")
                    }
                })
                .collect();
            let day = rng.random_range(1..=28);
            news.push(Document {
                doc_id: format!("n{m:03}-{k:03}"),
                timestamp: on_day(month, day),
                source: Source::News,
                title: None,
                body: sentences.join("。"),
                region: None,
                occupation: None,
                condition: None,
            });
        }
    }
    World { survey, news, truth }
}

fn on_day(month: NaiveDate, day: u32) -> NaiveDate {
    chrono::Datelike::with_day(&month, day).expect("day 1-28 exists in every month")
}

/// Pipeline configuration matching the bundled fixture: desk-scale model
/// sizes that finish in seconds.
pub const FIXTURE_CONFIG: &str = r#"seed = 7

[paths]
survey = "survey.jsonl"
news = ["news.jsonl"]
output_dir = "out"

[model]
embedding_dim = 16
hidden = 16
layers = 1

[train]
epochs = 6
batch_size = 16
learning_rate = 0.01

[adapt]
epochs = 2
learning_rate = 0.001

[index]
subgroup_occupations = ["factory", "plant"]
lexicon_words = ["booming", "surging", "improving", "firm", "flat", "steady", "sluggish", "weak", "slumping", "plunging"]
influence_words = ["sales", "booming", "slumping"]
"#;

/// Serialises documents as JSONL in the ingest format.
pub fn documents_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents serialize"));
        out.push('\n');
    }
    out
}

/// Writes `survey.jsonl`, `news.jsonl` and `pipeline.toml` for `cfg` into
/// `dir`; the bundled fixture is this with the default world.
pub fn write_fixture(dir: &std::path::Path, cfg: &WorldConfig) -> crate::Result<()> {
    let world = generate_world(cfg);
    crate::io::write_text(&dir.join("survey.jsonl"), &documents_jsonl(&world.survey))?;
    crate::io::write_text(&dir.join("news.jsonl"), &documents_jsonl(&world.news))?;
    crate::io::write_text(&dir.join("pipeline.toml"), FIXTURE_CONFIG)
}
