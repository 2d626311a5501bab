//! Corpus ingestion, sentence splitting, tokenization and train/test splits.
//!
//! Documents arrive as JSONL (one object per line with `doc_id`, `date`,
//! `source`, `title`, `body`) or as CSV survey exports with the columns
//! `date, region, occupation, condition, statement`. Records that fail to
//! parse are skipped and reported with their line number; an unreadable
//! file is fatal.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_DELIMITER: &str = "。";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Survey,
    News,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "survey" => Ok(Source::Survey),
            "news" => Ok(Source::News),
            other => Err(Error::Config(format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Five-point economic condition, stored on the integer scale -2..=2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Condition(i8);

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition(2),
        Condition(1),
        Condition(0),
        Condition(-1),
        Condition(-2),
    ];

    pub fn new(value: i64) -> Result<Self> {
        if (-2..=2).contains(&value) {
            Ok(Condition(value as i8))
        } else {
            Err(Error::Data(format!("condition {value} outside -2..=2")))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Parses either the integer scale or the five survey symbols
    /// (◎ ○ □ ▲ ×, best to worst).
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let symbol = match t {
            "◎" => Some(2),
            "○" => Some(1),
            "□" => Some(0),
            "▲" => Some(-1),
            "×" => Some(-2),
            _ => None,
        };
        match symbol {
            Some(v) => Ok(Condition(v)),
            None => t
                .parse::<i64>()
                .map_err(|_| Error::Data(format!("unrecognised condition `{t}`")))
                .and_then(Condition::new),
        }
    }
}

impl TryFrom<i64> for Condition {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Condition::new(value)
    }
}

impl From<Condition> for i64 {
    fn from(c: Condition) -> i64 {
        i64::from(c.0)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(rename = "date")]
    pub timestamp: NaiveDate,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

/// A tokenized text unit. `tokens.len()` is the sentence length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub ordinal: usize,
    #[serde(rename = "date")]
    pub timestamp: NaiveDate,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, ordinal: usize, timestamp: NaiveDate, tokens: Vec<String>) -> Self {
        Sentence {
            doc_id: doc_id.into(),
            ordinal,
            timestamp,
            tokens,
        }
    }

    /// Convenience constructor for whitespace-separated text.
    pub fn from_text(doc_id: impl Into<String>, ordinal: usize, timestamp: NaiveDate, text: &str) -> Self {
        Sentence::new(
            doc_id,
            ordinal,
            timestamp,
            text.split_whitespace().map(str::to_string).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Occurrence count of every distinct token.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

impl AsRef<Sentence> for Sentence {
    fn as_ref(&self) -> &Sentence {
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub sentence: Sentence,
    pub label: Condition,
}

impl LabeledExample {
    pub fn new(sentence: Sentence, label: Condition) -> Self {
        LabeledExample { sentence, label }
    }

    pub fn target(&self) -> f64 {
        self.label.as_f64()
    }
}

impl AsRef<Sentence> for LabeledExample {
    fn as_ref(&self) -> &Sentence {
        &self.sentence
    }
}

/// Line format of the sentence files passed between stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    #[serde(flatten)]
    pub sentence: Sentence,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
}

impl SentenceRecord {
    pub fn labeled(&self) -> Option<LabeledExample> {
        self.label.map(|label| LabeledExample::new(self.sentence.clone(), label))
    }
}

impl AsRef<Sentence> for SentenceRecord {
    fn as_ref(&self) -> &Sentence {
        &self.sentence
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// ingestion

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub format: Format,
    pub source: Source,
    /// Inclusive range of accepted dates.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
}

impl IngestOptions {
    pub fn new(format: Format, source: Source) -> Self {
        IngestOptions {
            format,
            source,
            date_range: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub rejected: Vec<RejectedRecord>,
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".to_string());
    let ingested = ingest_reader(file, &origin, opts).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    for r in &ingested.rejected {
        log::warn!("{}: line {}: record skipped: {}", path.display(), r.line, r.reason);
    }
    Ok(ingested)
}

/// Ingests from any reader; `origin` prefixes generated document ids.
pub fn ingest_reader<R: Read>(reader: R, origin: &str, opts: &IngestOptions) -> Result<Ingested> {
    let raw = match opts.format {
        Format::Jsonl => read_jsonl_records(reader)?,
        Format::Csv => read_csv_records(reader)?,
    };
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (line, fields) in raw {
        let parsed = fields.and_then(|f| f.into_document(line, origin, opts));
        match parsed {
            Ok(doc) => {
                if !seen.insert(doc.doc_id.clone()) {
                    out.rejected.push(RejectedRecord {
                        line,
                        reason: format!("duplicate doc_id `{}`", doc.doc_id),
                    });
                } else {
                    out.documents.push(doc);
                }
            }
            Err(reason) => out.rejected.push(RejectedRecord { line, reason }),
        }
    }
    Ok(out)
}

#[derive(Default)]
struct RawFields {
    doc_id: Option<String>,
    date: Option<String>,
    source: Option<String>,
    title: Option<String>,
    body: Option<String>,
    region: Option<String>,
    occupation: Option<String>,
    condition: Option<String>,
}

type RawRecord = (usize, std::result::Result<RawFields, String>);

fn read_jsonl_records<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => {
                let get = |keys: &[&str]| -> Option<String> {
                    keys.iter().find_map(|k| match map.get(*k) {
                        Some(Value::String(s)) => Some(s.clone()),
                        Some(Value::Number(n)) => Some(n.to_string()),
                        _ => None,
                    })
                };
                Ok(RawFields {
                    doc_id: get(&["doc_id", "id"]),
                    date: get(&["date", "timestamp"]),
                    source: get(&["source"]),
                    title: get(&["title"]),
                    body: get(&["body", "statement"]),
                    region: get(&["region"]),
                    occupation: get(&["occupation"]),
                    condition: get(&["condition", "label"]),
                })
            }
            Ok(_) => Err("record is not a JSON object".to_string()),
            Err(e) => Err(format!("malformed JSON: {e}")),
        };
        out.push((idx + 1, fields));
    }
    Ok(out)
}

fn read_csv_records<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let c_id = col(&["doc_id", "id"]);
    let c_date = col(&["date", "timestamp"]);
    let c_source = col(&["source"]);
    let c_title = col(&["title"]);
    let c_body = col(&["statement", "body"]);
    let c_region = col(&["region"]);
    let c_occ = col(&["occupation"]);
    let c_cond = col(&["condition", "label"]);

    let mut out = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).map(str::to_string);
                out.push((
                    line,
                    Ok(RawFields {
                        doc_id: get(c_id),
                        date: get(c_date),
                        source: get(c_source),
                        title: get(c_title),
                        body: get(c_body),
                        region: get(c_region),
                        occupation: get(c_occ),
                        condition: get(c_cond),
                    }),
                ));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.push((line, Err(format!("malformed CSV: {e}"))));
            }
        }
    }
    Ok(out)
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

impl RawFields {
    fn into_document(self, line: usize, origin: &str, opts: &IngestOptions) -> std::result::Result<Document, String> {
        let body = self.body.ok_or("missing body")?;
        let date_text = non_empty(self.date).ok_or("missing date")?;
        let timestamp = parse_date(&date_text).ok_or_else(|| format!("unparseable date `{date_text}`"))?;
        if let Some((lo, hi)) = opts.date_range {
            if timestamp < lo || timestamp > hi {
                return Err(format!("date {timestamp} outside {lo}..={hi}"));
            }
        }
        let source = match non_empty(self.source) {
            Some(s) => s.parse::<Source>().map_err(|e| e.to_string())?,
            None => opts.source,
        };
        let condition = match non_empty(self.condition) {
            Some(c) => Some(Condition::parse(&c).map_err(|e| e.to_string())?),
            None => None,
        };
        if source == Source::Survey && condition.is_none() {
            return Err("survey record without condition".to_string());
        }
        Ok(Document {
            doc_id: non_empty(self.doc_id).unwrap_or_else(|| format!("{origin}:{line}")),
            timestamp,
            source,
            title: non_empty(self.title),
            body,
            region: non_empty(self.region),
            occupation: non_empty(self.occupation),
            condition,
        })
    }
}

/// Accepts `YYYY-MM-DD`, RFC 3339 timestamps and `YYYY-MM` (first of month).
pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let t = text.trim();
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.date_naive());
    }
    NaiveDate::parse_from_str(&format!("{t}-01"), "%Y-%m-%d").ok()
}

// ---------------------------------------------------------------------------
// sentences and tokens

/// Splits text on `delimiter`, dropping fragments that are empty or blank.
pub fn split_sentences<'a>(body: &'a str, delimiter: &str) -> Vec<&'a str> {
    assert!(!delimiter.is_empty(), "sentence delimiter must be non-empty");
    body.split(delimiter).filter(|f| !f.trim().is_empty()).collect()
}

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Splits on whitespace and strips leading/trailing punctuation.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '。' | '、' | '，' | '．' | '！' | '？' | '「' | '」' | '『' | '』' | '（' | '）' | '・' | '…' | '“'
                | '”' | '‘' | '’' | '—' | '–' | '：' | '；' | '【' | '】'
        )
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| t.trim_matches(is_punctuation))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }
}

/// Passthrough for text that was segmented offline (e.g. by a morphological
/// analyser): tokens are separated by a single character and kept verbatim.
#[derive(Clone, Debug)]
pub struct PretokenizedTokenizer {
    separator: char,
    name: String,
}

impl PretokenizedTokenizer {
    pub fn new(separator: char) -> Self {
        let name = if separator == ' ' {
            "pretokenized".to_string()
        } else {
            format!("pretokenized:{separator}")
        };
        PretokenizedTokenizer { separator, name }
    }
}

impl Tokenizer for PretokenizedTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(self.separator)
            .map(|t| t.trim_matches(|c: char| c == '\n' || c == '\r'))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }
}

/// Looks up a tokenizer by registered name: `whitespace`, `pretokenized`
/// (space separated) or `pretokenized:<char>`.
pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer>> {
    match name {
        "whitespace" => Ok(Box::new(WhitespaceTokenizer)),
        "pretokenized" => Ok(Box::new(PretokenizedTokenizer::new(' '))),
        other => {
            if let Some(sep) = other.strip_prefix("pretokenized:") {
                let mut chars = sep.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    return Ok(Box::new(PretokenizedTokenizer::new(c)));
                }
                if sep == "\\t" {
                    return Ok(Box::new(PretokenizedTokenizer::new('\t')));
                }
            }
            Err(Error::Config(format!("unknown tokenizer `{other}`")))
        }
    }
}

/// Sentences of a document: the title (if any) first, then the body
/// fragments. Fragments with no tokens are dropped.
pub fn document_sentences(doc: &Document, delimiter: &str, tokenizer: &dyn Tokenizer) -> Vec<Sentence> {
    let title = doc.title.as_deref().into_iter();
    let body = split_sentences(&doc.body, delimiter).into_iter();
    title
        .chain(body)
        .map(|text| tokenizer.tokenize(text))
        .filter(|tokens| !tokens.is_empty())
        .enumerate()
        .map(|(ordinal, tokens)| Sentence::new(doc.doc_id.clone(), ordinal, doc.timestamp, tokens))
        .collect()
}

/// A survey statement becomes one labeled sequence covering the whole text.
pub fn survey_example(doc: &Document, tokenizer: &dyn Tokenizer) -> Option<LabeledExample> {
    let label = doc.condition?;
    let tokens = tokenizer.tokenize(&doc.body);
    if tokens.is_empty() {
        return None;
    }
    Some(LabeledExample::new(
        Sentence::new(doc.doc_id.clone(), 0, doc.timestamp, tokens),
        label,
    ))
}

/// Sentence records for a batch of documents, in document order.
pub fn sentence_records(docs: &[Document], delimiter: &str, tokenizer: &dyn Tokenizer) -> Vec<SentenceRecord> {
    let mut out = Vec::new();
    for doc in docs {
        match doc.source {
            Source::Survey => {
                if let Some(ex) = survey_example(doc, tokenizer) {
                    out.push(SentenceRecord {
                        sentence: ex.sentence,
                        source: Source::Survey,
                        label: Some(ex.label),
                        occupation: doc.occupation.clone(),
                    });
                }
            }
            Source::News => {
                out.extend(document_sentences(doc, delimiter, tokenizer).into_iter().map(|s| SentenceRecord {
                    sentence: s,
                    source: Source::News,
                    label: None,
                    occupation: None,
                }));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// splits

/// Deterministic random partition into (train, test), preserving input order
/// inside each side. The train side has `round(train_fraction * n)` items,
/// clamped so neither side is empty.
pub fn make_split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 examples to split, got {n}")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (item, is_train) in items.iter().zip(in_train) {
        if is_train {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn opts(format: Format) -> IngestOptions {
        IngestOptions::new(format, Source::News)
    }

    #[test]
    fn jsonl_two_records() {
        let text = "{\"id\":\"a\",\"date\":\"2013-05-01\",\"body\":\"x\"}\n{\"id\":\"b\",\"date\":\"2013-05-02\",\"body\":\"y\"}\n";
        let got = ingest_reader(text.as_bytes(), "t", &opts(Format::Jsonl)).unwrap();
        assert_eq!(got.documents.len(), 2);
        assert!(got.rejected.is_empty());
        assert_eq!(got.documents[1].doc_id, "b");
        assert_eq!(got.documents[1].timestamp, d("2013-05-02"));
    }

    #[test]
    fn missing_body_is_rejected_with_line() {
        let text = "{\"id\":\"a\",\"date\":\"2013-05-01\",\"body\":\"x\"}\n{\"id\":\"b\",\"date\":\"2013-05-02\"}\n";
        let got = ingest_reader(text.as_bytes(), "t", &opts(Format::Jsonl)).unwrap();
        assert_eq!(got.documents.len(), 1);
        assert_eq!(got.rejected, vec![RejectedRecord { line: 2, reason: "missing body".into() }]);
    }

    #[test]
    fn bad_dates_and_duplicates_are_rejected() {
        let text = "{\"id\":\"a\",\"date\":\"yesterday\",\"body\":\"x\"}\n\
                    {\"id\":\"b\",\"date\":\"2013-05-02\",\"body\":\"y\"}\n\
                    {\"id\":\"b\",\"date\":\"2013-05-02\",\"body\":\"z\"}\n\
                    not json\n";
        let got = ingest_reader(text.as_bytes(), "t", &opts(Format::Jsonl)).unwrap();
        assert_eq!(got.documents.len(), 1);
        let lines: Vec<usize> = got.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![1, 3, 4]);
    }

    #[test]
    fn date_range_is_enforced() {
        let text = "{\"id\":\"a\",\"date\":\"2012-01-01\",\"body\":\"x\"}\n{\"id\":\"b\",\"date\":\"2013-01-01\",\"body\":\"x\"}\n";
        let mut o = opts(Format::Jsonl);
        o.date_range = Some((d("2013-01-01"), d("2018-12-31")));
        let got = ingest_reader(text.as_bytes(), "t", &o).unwrap();
        assert_eq!(got.documents.len(), 1);
        assert_eq!(got.rejected[0].line, 1);
    }

    #[test]
    fn csv_survey_with_symbols() {
        let text = "date,region,occupation,condition,statement\n\
                    2014-04,Hokkaido,Taxi driver,×,\"Although sales are declining, seasonal factors matter.\"\n\
                    2014-04,North Kanto,Manufacturing,◎,Exports are increasing.\n\
                    2014-04,Kinki,Retail,,no condition\n";
        let o = IngestOptions::new(Format::Csv, Source::Survey);
        let got = ingest_reader(text.as_bytes(), "ew", &o).unwrap();
        assert_eq!(got.documents.len(), 2);
        assert_eq!(got.documents[0].condition, Some(Condition::new(-2).unwrap()));
        assert_eq!(got.documents[0].body, "Although sales are declining, seasonal factors matter.");
        assert_eq!(got.documents[0].timestamp, d("2014-04-01"));
        assert_eq!(got.documents[1].condition, Some(Condition::new(2).unwrap()));
        assert_eq!(got.rejected.len(), 1);
        assert_eq!(got.rejected[0].line, 4);
    }

    #[test]
    fn csv_round_trip_preserves_quoted_commas() {
        let bodies = [
            "sales, however, fell",
            "plain",
            "he said \"up, up\", then left",
            "multi\nline, body",
        ];
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["date", "region", "occupation", "condition", "statement"]).unwrap();
            for b in bodies {
                w.write_record(["2015-01-05", "Kanto", "Retail", "1", b]).unwrap();
            }
            w.flush().unwrap();
        }
        let got = ingest_reader(&buf[..], "rt", &IngestOptions::new(Format::Csv, Source::Survey)).unwrap();
        let read: Vec<&str> = got.documents.iter().map(|d| d.body.as_str()).collect();
        assert_eq!(read, bodies);
    }

    #[test]
    fn sentence_splitting_rules() {
        assert_eq!(split_sentences("A。B。", "。"), vec!["A", "B"]);
        assert_eq!(split_sentences("no delimiter here", "。"), vec!["no delimiter here"]);
        assert_eq!(split_sentences("A。。B", "。"), vec!["A", "B"]);
        assert!(split_sentences("", "。").is_empty());
    }

    #[test]
    fn default_tokenizer() {
        let t = WhitespaceTokenizer;
        assert_eq!(t.tokenize("sales are up"), vec!["sales", "are", "up"]);
        assert!(t.tokenize("").is_empty());
        assert_eq!(t.tokenize("Sales, are up! (really)"), vec!["Sales", "are", "up", "really"]);
        assert_eq!(t.tokenize("not-good ..."), vec!["not-good"]);
    }

    #[test]
    fn pretokenized_passthrough_matches_hand_split() {
        let fixtures: [(&str, &[&str]); 10] = [
            ("景気 は 回復 し て いる", &["景気", "は", "回復", "し", "て", "いる"]),
            ("売上 が 減少", &["売上", "が", "減少"]),
            ("a", &["a"]),
            ("a b", &["a", "b"]),
            ("a  b", &["a", "b"]),
            ("、 。", &["、", "。"]),
            ("x, y", &["x,", "y"]),
            ("tok-1 tok_2", &["tok-1", "tok_2"]),
            ("", &[]),
            ("end ", &["end"]),
        ];
        let t = tokenizer_by_name("pretokenized").unwrap();
        for (input, expected) in fixtures {
            assert_eq!(t.tokenize(input), expected, "input {input:?}");
        }
        let bar = tokenizer_by_name("pretokenized:|").unwrap();
        assert_eq!(bar.tokenize("a b|c"), vec!["a b", "c"]);
    }

    #[test]
    fn unknown_tokenizer_is_config_error() {
        assert!(matches!(tokenizer_by_name("mecab"), Err(Error::Config(_))));
    }

    #[test]
    fn title_is_sentence_zero() {
        let doc = Document {
            doc_id: "n1".into(),
            timestamp: d("2015-08-24"),
            source: Source::News,
            title: Some("Stocks fall".into()),
            body: "China markets slump. Exports weak.".into(),
            region: None,
            occupation: None,
            condition: None,
        };
        let s = document_sentences(&doc, ".", &WhitespaceTokenizer);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].tokens, vec!["Stocks", "fall"]);
        assert_eq!(s[2].ordinal, 2);
        assert!(s.iter().all(|x| x.timestamp == doc.timestamp));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, te) = make_split(&items, &SplitSpec { train_fraction: 0.9, seed: 1 }).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        let (tr, te) = make_split(&[1, 2], &SplitSpec { train_fraction: 0.5, seed: 1 }).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert!(make_split(&[1], &SplitSpec::default()).is_err());
        assert!(make_split(&[1, 2], &SplitSpec { train_fraction: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn split_seed_behaviour() {
        let items: Vec<u32> = (0..1000).collect();
        let a = make_split(&items, &SplitSpec { train_fraction: 0.9, seed: 7 }).unwrap();
        let b = make_split(&items, &SplitSpec { train_fraction: 0.9, seed: 7 }).unwrap();
        let c = make_split(&items, &SplitSpec { train_fraction: 0.9, seed: 8 }).unwrap();
        let set = |v: &Vec<u32>| v.iter().copied().collect::<HashSet<_>>();
        assert_eq!(set(&a.1), set(&b.1));
        assert_ne!(set(&a.1), set(&c.1));
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (tr, te) = make_split(&items, &SplitSpec { train_fraction: frac, seed }).unwrap();
            prop_assert_eq!(tr.len() + te.len(), n);
            let expected = ((frac * n as f64).round() as usize).clamp(1, n - 1);
            prop_assert_eq!(tr.len(), expected);
            let mut all: Vec<usize> = tr.iter().chain(te.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }

        #[test]
        fn splitting_then_rejoining_reproduces_body(
            pieces in proptest::collection::vec("[a-z ]{0,6}", 0..8),
            trailing in any::<bool>(),
        ) {
            let mut body = pieces.join("。");
            if trailing { body.push('。'); }
            let kept: Vec<&str> = pieces.iter().map(String::as_str).filter(|p| !p.trim().is_empty()).collect();
            let got = split_sentences(&body, "。");
            prop_assert_eq!(&got, &kept);
            // rejoin: only blank fragments and the trailing delimiter may be lost
            let rejoined = got.join("。");
            let squeezed: Vec<&str> = body.split('。').filter(|p| !p.trim().is_empty()).collect();
            prop_assert_eq!(rejoined, squeezed.join("。"));
        }

        #[test]
        fn token_counts_sum_to_length(words in proptest::collection::vec("[a-c]{1,2}", 1..20)) {
            let s = Sentence::new("d", 0, NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), words);
            prop_assert_eq!(s.counts().values().sum::<usize>(), s.len());
        }
    }
}
