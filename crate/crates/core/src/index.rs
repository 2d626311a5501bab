//! Index construction: per-period mean sentence sentiment, per-word
//! attribution of that mean, the survey diffusion index, and Pearson
//! correlation between series.
//!
//! For a period `t` with sentences `S_t`, the index is the mean sentence score
//! and the influence of word `w` is
//!
//! ```text
//! p(t, w) = 1/|S_t| * sum_{s in S_t} count(s, w) * p_s / len(s)
//! ```
//!
//! so the influences of all words in a period sum to the period's index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Condition, Document, Sentence, Source};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::regressor::GruModel;

// ---------------------------------------------------------------------------
// periods

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucketing {
    #[default]
    Monthly,
    Quarterly,
    Yearly,
}

impl FromStr for Bucketing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monthly" | "month" => Ok(Bucketing::Monthly),
            "quarterly" | "quarter" => Ok(Bucketing::Quarterly),
            "yearly" | "year" => Ok(Bucketing::Yearly),
            other => Err(Error::Config(format!("unknown bucketing `{other}`"))),
        }
    }
}

/// A calendar bucket. Ordering is chronological within one bucketing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Period {
    pub year: i32,
    /// Month (1-12), quarter (1-4) or 1 for yearly buckets.
    pub sub: u32,
    pub bucketing: Bucketing,
}

impl Period {
    pub fn of(date: NaiveDate, bucketing: Bucketing) -> Self {
        let sub = match bucketing {
            Bucketing::Monthly => date.month(),
            Bucketing::Quarterly => (date.month() - 1) / 3 + 1,
            Bucketing::Yearly => 1,
        };
        Period {
            year: date.year(),
            sub,
            bucketing,
        }
    }

    fn per_year(self) -> u32 {
        match self.bucketing {
            Bucketing::Monthly => 12,
            Bucketing::Quarterly => 4,
            Bucketing::Yearly => 1,
        }
    }

    pub fn next(self) -> Self {
        if self.sub >= self.per_year() {
            Period {
                year: self.year + 1,
                sub: 1,
                ..self
            }
        } else {
            Period {
                sub: self.sub + 1,
                ..self
            }
        }
    }

    /// Every period from `self` through `last`, inclusive.
    pub fn through(self, last: Period) -> Vec<Period> {
        let mut out = Vec::new();
        let mut p = self;
        while p <= last {
            out.push(p);
            p = p.next();
        }
        out
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bucketing {
            Bucketing::Monthly => write!(f, "{:04}-{:02}", self.year, self.sub),
            Bucketing::Quarterly => write!(f, "{:04}Q{}", self.year, self.sub),
            Bucketing::Yearly => write!(f, "{:04}", self.year),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("invalid period `{s}`"));
        let (year, sub, bucketing) = if let Some((y, q)) = s.split_once('Q') {
            (y, q.parse::<u32>().map_err(|_| bad())?, Bucketing::Quarterly)
        } else if let Some((y, m)) = s.split_once('-') {
            (y, m.parse::<u32>().map_err(|_| bad())?, Bucketing::Monthly)
        } else {
            (s, 1, Bucketing::Yearly)
        };
        let p = Period {
            year: year.parse().map_err(|_| bad())?,
            sub,
            bucketing,
        };
        if sub == 0 || sub > p.per_year() {
            return Err(bad());
        }
        Ok(p)
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// sentence scores and series

/// A scored sentence; also the line format of sentence-score files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceSentiment {
    #[serde(flatten)]
    pub sentence: Sentence,
    pub score: f64,
}

impl AsRef<Sentence> for SentenceSentiment {
    fn as_ref(&self) -> &Sentence {
        &self.sentence
    }
}

/// Scores every non-empty sentence, keeping input order. Returns the scores
/// and the number of skipped empty sentences.
pub fn sentence_sentiments<T>(model: &GruModel, vocab: &Vocabulary, sentences: &[T]) -> Result<(Vec<SentenceSentiment>, usize)>
where
    T: AsRef<Sentence> + Sync,
{
    model.check_vocab(vocab)?;
    let kept: Vec<&Sentence> = sentences.iter().map(AsRef::as_ref).filter(|s| !s.is_empty()).collect();
    let skipped = sentences.len() - kept.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} empty sentences while scoring");
    }
    let out = kept
        .par_iter()
        .map(|s| {
            Ok(SentenceSentiment {
                sentence: (*s).clone(),
                score: model.predict_tokens(vocab, &s.tokens)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexPoint {
    pub period: Period,
    /// `None` marks a period without observations.
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub id: String,
    pub bucketing: Bucketing,
    pub points: Vec<IndexPoint>,
}

impl IndexSeries {
    /// Mean of `(date, value)` observations per period, with explicit gaps
    /// for empty periods between the first and last populated one.
    pub fn from_observations<I>(id: impl Into<String>, bucketing: Bucketing, obs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NaiveDate, f64)>,
    {
        let mut sums: BTreeMap<Period, (f64, usize)> = BTreeMap::new();
        for (d, v) in obs {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite observation on {d}")));
            }
            let e = sums.entry(Period::of(d, bucketing)).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        let (first, last) = match (sums.keys().next(), sums.keys().next_back()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::Data("cannot aggregate an empty set of sentences".into())),
        };
        let points = first
            .through(last)
            .into_iter()
            .map(|p| match sums.get(&p) {
                Some(&(sum, n)) => IndexPoint {
                    period: p,
                    value: Some(sum / n as f64),
                    n,
                },
                None => IndexPoint {
                    period: p,
                    value: None,
                    n: 0,
                },
            })
            .collect();
        Ok(IndexSeries {
            id: id.into(),
            bucketing,
            points,
        })
    }

    pub fn value(&self, period: Period) -> Option<f64> {
        self.points.iter().find(|p| p.period == period).and_then(|p| p.value)
    }

    /// Non-gap `(period, value)` pairs.
    pub fn observed(&self) -> impl Iterator<Item = (Period, f64)> + '_ {
        self.points.iter().filter_map(|p| p.value.map(|v| (p.period, v)))
    }

    /// CSV with header `period,value,n`; gaps leave `value` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,value,n\n");
        for p in &self.points {
            match p.value {
                Some(v) => out.push_str(&format!("{},{},{}\n", p.period, v, p.n)),
                None => out.push_str(&format!("{},,0\n", p.period)),
            }
        }
        out
    }

    pub fn from_csv(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("series CSV lacks a `{name}` column")))
        };
        let (pc, vc) = (col("period")?, col("value")?);
        let nc = headers.iter().position(|h| h == "n");
        let mut points: Vec<IndexPoint> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let period: Period = rec.get(pc).unwrap_or("").parse()?;
            let raw = rec.get(vc).unwrap_or("").trim();
            let value = if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| Error::Data(format!("row {}: bad value `{raw}`", i + 2)))?)
            };
            let n = nc
                .and_then(|c| rec.get(c))
                .and_then(|s| s.trim().parse().ok())
                .unwrap_or(usize::from(value.is_some()));
            if let Some(prev) = points.last() {
                if prev.period.bucketing != period.bucketing || prev.period >= period {
                    return Err(Error::Data(format!("row {}: periods must be strictly increasing", i + 2)));
                }
            }
            points.push(IndexPoint { period, value, n });
        }
        let bucketing = points.first().map(|p| p.period.bucketing).unwrap_or_default();
        Ok(IndexSeries {
            id: id.into(),
            bucketing,
            points,
        })
    }
}

pub fn aggregate(sentiments: &[SentenceSentiment], bucketing: Bucketing) -> Result<IndexSeries> {
    IndexSeries::from_observations(
        "sentiment",
        bucketing,
        sentiments.iter().map(|s| (s.sentence.timestamp, s.score)),
    )
}

// ---------------------------------------------------------------------------
// word influence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluencePoint {
    pub period: Period,
    /// `None` where the index itself has a gap.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordInfluenceSeries {
    pub word: String,
    pub points: Vec<InfluencePoint>,
}

/// Influence of every word in every period, keyed by period then word.
pub fn influence_table(sentiments: &[SentenceSentiment], bucketing: Bucketing) -> BTreeMap<Period, HashMap<String, f64>> {
    let mut groups: BTreeMap<Period, Vec<&SentenceSentiment>> = BTreeMap::new();
    for s in sentiments.iter().filter(|s| !s.sentence.is_empty()) {
        groups.entry(Period::of(s.sentence.timestamp, bucketing)).or_default().push(s);
    }
    groups
        .into_par_iter()
        .map(|(period, group)| {
            let n = group.len() as f64;
            let mut acc: HashMap<String, f64> = HashMap::new();
            for s in group {
                let share = s.score / s.sentence.len() as f64;
                for (w, count) in s.sentence.counts() {
                    *acc.entry(w.to_string()).or_insert(0.0) += count as f64 * share;
                }
            }
            acc.values_mut().for_each(|v| *v /= n);
            (period, acc)
        })
        .collect()
}

/// Influence series of `word`, aligned to the index of the same sentences.
pub fn word_influence(sentiments: &[SentenceSentiment], word: &str, bucketing: Bucketing) -> Result<WordInfluenceSeries> {
    let index = aggregate(sentiments, bucketing)?;
    let table = influence_table(sentiments, bucketing);
    Ok(WordInfluenceSeries {
        word: word.to_string(),
        points: index
            .points
            .iter()
            .map(|p| InfluencePoint {
                period: p.period,
                value: p.value.map(|_| table.get(&p.period).and_then(|m| m.get(word)).copied().unwrap_or(0.0)),
            })
            .collect(),
    })
}

/// Long-format CSV `period,word,influence` for the given words.
pub fn influence_csv(series: &[WordInfluenceSeries]) -> String {
    let mut out = String::from("period,word,influence\n");
    for s in series {
        for p in &s.points {
            match p.value {
                Some(v) => out.push_str(&format!("{},{},{}\n", p.period, csv_field(&s.word), v)),
                None => out.push_str(&format!("{},{},\n", p.period, csv_field(&s.word))),
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// Max over periods of |sum_w p(t,w) - index_t| / max(1, |index_t|).
    pub max_residual: f64,
    pub worst_period: Option<Period>,
    pub periods: usize,
}

pub fn influence_decomposition_check(sentiments: &[SentenceSentiment], bucketing: Bucketing) -> Result<DecompositionCheck> {
    let index = aggregate(sentiments, bucketing)?;
    let table = influence_table(sentiments, bucketing);
    let mut worst = (0.0f64, None);
    let mut periods = 0;
    for (period, value) in index.observed() {
        periods += 1;
        let mut words: Vec<(&String, &f64)> = table.get(&period).map(|m| m.iter().collect()).unwrap_or_default();
        // fixed summation order
        words.sort_by(|a, b| a.0.cmp(b.0));
        let total: f64 = words.iter().map(|(_, v)| **v).sum();
        let r = (total - value).abs() / value.abs().max(1.0);
        if r > worst.0 || worst.1.is_none() {
            worst = (r, Some(period));
        }
    }
    Ok(DecompositionCheck {
        max_residual: worst.0,
        worst_period: worst.1,
        periods,
    })
}

// ---------------------------------------------------------------------------
// diffusion index

/// Weights for conditions +2, +1, 0, -1, -2.
pub const DEFAULT_DI_WEIGHTS: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.0];

fn condition_slot(c: Condition) -> usize {
    (2 - c.value()) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiPoint {
    pub period: Period,
    pub value: Option<f64>,
    /// Shares of conditions +2, +1, 0, -1, -2; `None` for gaps.
    pub ratios: Option<[f64; 5]>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionIndex {
    pub id: String,
    pub weights: [f64; 5],
    pub bucketing: Bucketing,
    pub points: Vec<DiPoint>,
}

/// One rated survey response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub date: NaiveDate,
    pub condition: Condition,
    pub occupation: Option<String>,
}

impl SurveyResponse {
    pub fn from_documents(docs: &[Document]) -> Vec<SurveyResponse> {
        docs.iter()
            .filter(|d| d.source == Source::Survey)
            .filter_map(|d| {
                d.condition.map(|c| SurveyResponse {
                    date: d.timestamp,
                    condition: c,
                    occupation: d.occupation.clone(),
                })
            })
            .collect()
    }
}

pub fn validate_weights(weights: &[f64; 5]) -> Result<()> {
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Config(format!("diffusion weights must lie in [0, 1], got {weights:?}")));
    }
    Ok(())
}

pub fn diffusion_index(responses: &[SurveyResponse], weights: &[f64; 5], bucketing: Bucketing) -> Result<DiffusionIndex> {
    validate_weights(weights)?;
    let mut counts: BTreeMap<Period, [usize; 5]> = BTreeMap::new();
    for r in responses {
        counts.entry(Period::of(r.date, bucketing)).or_insert([0; 5])[condition_slot(r.condition)] += 1;
    }
    let (first, last) = match (counts.keys().next(), counts.keys().next_back()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Data("no survey responses to build a diffusion index from".into())),
    };
    let points = first
        .through(last)
        .into_iter()
        .map(|p| match counts.get(&p) {
            Some(c) => {
                let n: usize = c.iter().sum();
                let ratios = c.map(|k| k as f64 / n as f64);
                let value = 100.0 * ratios.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>();
                DiPoint {
                    period: p,
                    value: Some(value),
                    ratios: Some(ratios),
                    n,
                }
            }
            None => DiPoint {
                period: p,
                value: None,
                ratios: None,
                n: 0,
            },
        })
        .collect();
    Ok(DiffusionIndex {
        id: "diffusion".into(),
        weights: *weights,
        bucketing,
        points,
    })
}

/// Diffusion index over the responses whose occupation satisfies `keep`.
pub fn ewdi_subgroup<F>(responses: &[SurveyResponse], keep: F, weights: &[f64; 5], bucketing: Bucketing) -> Result<DiffusionIndex>
where
    F: Fn(&str) -> bool,
{
    let selected: Vec<SurveyResponse> = responses
        .iter()
        .filter(|r| r.occupation.as_deref().is_some_and(&keep))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(Error::Data("occupation predicate selected no survey responses".into()));
    }
    let mut di = diffusion_index(&selected, weights, bucketing)?;
    di.id = "diffusion_subgroup".into();
    Ok(di)
}

impl DiffusionIndex {
    pub fn as_series(&self) -> IndexSeries {
        IndexSeries {
            id: self.id.clone(),
            bucketing: self.bucketing,
            points: self
                .points
                .iter()
                .map(|p| IndexPoint {
                    period: p.period,
                    value: p.value,
                    n: p.n,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,value,n,share_p2,share_p1,share_0,share_m1,share_m2\n");
        for p in &self.points {
            match (p.value, p.ratios) {
                (Some(v), Some(r)) => out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    p.period, v, p.n, r[0], r[1], r[2], r[3], r[4]
                )),
                _ => out.push_str(&format!("{},,0,,,,,\n", p.period)),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// correlation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub a: String,
    pub b: String,
    pub r: f64,
    pub n: usize,
}

/// Pearson correlation of two equally long samples.
pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data("samples differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::Data(format!("correlation needs at least 2 overlapping periods, got {}", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Data("correlation undefined for a constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson r over the periods observed in both series.
pub fn pearson(a: &IndexSeries, b: &IndexSeries) -> Result<CorrelationReport> {
    if a.bucketing != b.bucketing {
        return Err(Error::Config(format!(
            "cannot correlate {:?} series `{}` with {:?} series `{}`",
            a.bucketing, a.id, b.bucketing, b.id
        )));
    }
    let bv: BTreeMap<Period, f64> = b.observed().collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = a.observed().filter_map(|(p, v)| bv.get(&p).map(|&w| (v, w))).unzip();
    Ok(CorrelationReport {
        a: a.id.clone(),
        b: b.id.clone(),
        r: pearson_values(&xs, &ys)?,
        n: xs.len(),
    })
}

// ---------------------------------------------------------------------------
// chart

const CHART_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of several series over their common period axis. Each series
/// is standardised (zero mean, unit variance over its observed points) so
/// indices on different scales can share one axis. Gaps break the line.
pub fn svg_chart(title: &str, series: &[&IndexSeries]) -> String {
    let (w, h) = (800.0, 400.0);
    let (left, right, top, bottom) = (60.0, 180.0, 40.0, 50.0);
    let mut periods: Vec<Period> = series.iter().flat_map(|s| s.points.iter().map(|p| p.period)).collect();
    periods.sort();
    periods.dedup();
    let pos: BTreeMap<Period, usize> = periods.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let standardized: Vec<Vec<(usize, Option<f64>)>> = series
        .iter()
        .map(|s| {
            let vals: Vec<f64> = s.observed().map(|(_, v)| v).collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            s.points.iter().map(|p| (pos[&p.period], p.value.map(|v| (v - mean) / sd))).collect()
        })
        .collect();
    let ys = standardized.iter().flatten().filter_map(|(_, v)| *v);
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (ymin, ymax) = if ymin.is_finite() && ymax > ymin { (ymin, ymax) } else { (-1.0, 1.0) };
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let xpos = |i: usize| {
        if periods.len() > 1 {
            left + plot_w * i as f64 / (periods.len() - 1) as f64
        } else {
            left + plot_w / 2.0
        }
    };
    let ypos = |v: f64| top + plot_h * (ymax - v) / (ymax - ymin);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{left}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        xml_escape(title)
    ));
    out.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{:.2}\" x2=\"{left}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        top,
        top + plot_h
    ));
    out.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    let step = (periods.len() / 8).max(1);
    for (i, p) in periods.iter().enumerate().step_by(step) {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{p}</text>\n",
            xpos(i),
            top + plot_h + 16.0
        ));
    }
    for (k, (s, pts)) in series.iter().zip(&standardized).enumerate() {
        let color = CHART_COLORS[k % CHART_COLORS.len()];
        let mut runs: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
        for &(i, v) in pts {
            match v {
                Some(v) => runs.last_mut().expect("non-empty").push((i, v)),
                None => runs.push(Vec::new()),
            }
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            let coords: Vec<String> = run.iter().map(|&(i, v)| format!("{:.2},{:.2}", xpos(i), ypos(v))).collect();
            if run.len() == 1 {
                let (x, y) = (xpos(run[0].0), ypos(run[0].1));
                out.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{color}\"/>\n"));
            } else {
                out.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    coords.join(" ")
                ));
            }
        }
        let ly = top + 16.0 * k as f64 + 8.0;
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            w - right + 10.0,
            w - right + 30.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            w - right + 36.0,
            ly + 4.0,
            xml_escape(&s.id)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
