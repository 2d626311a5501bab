//! Self-training adaptation of the sentence regressor to news text:
//! confident predictions of the initial model become hard +-2 labels, and a
//! copy of the model is fine-tuned on them.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, LabeledExample, Sentence};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::filter::{FilterProvenance, Filtered};
use crate::regressor::{train, Generation, GruModel, TrainConfig, TrainOutcome};

pub const DEFAULT_T_HIGH: f64 = 0.8;
pub const DEFAULT_T_LOW: f64 = -1.0;
pub const POSITIVE_LABEL: i8 = 2;
pub const NEGATIVE_LABEL: i8 = -2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub t_high: f64,
    pub t_low: f64,
    /// Training settings for the fine-tuning run.
    pub fine_tune: TrainConfig,
    /// Downsample the larger pseudo-label class to the size of the smaller.
    pub balance: bool,
    /// Accept sentences that explicitly bypassed the filter.
    pub allow_unfiltered: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        let base = TrainConfig::default();
        AdaptConfig {
            t_high: DEFAULT_T_HIGH,
            t_low: DEFAULT_T_LOW,
            fine_tune: TrainConfig {
                epochs: 3,
                learning_rate: base.learning_rate * 0.1,
                patience: 0,
                ..base
            },
            balance: false,
            allow_unfiltered: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_low < self.t_high) || !self.t_low.is_finite() || !self.t_high.is_finite() {
            return Err(Error::Config(format!(
                "thresholds must satisfy t_low < t_high, got {} and {}",
                self.t_low, self.t_high
            )));
        }
        self.fine_tune.validate()
    }
}

/// One pseudo-labeled sentence; also the JSONL line format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoExample {
    pub doc_id: String,
    pub ordinal: usize,
    #[serde(rename = "date")]
    pub timestamp: chrono::NaiveDate,
    pub tokens: Vec<String>,
    pub initial_score: f64,
    pub label: Condition,
    pub model_id: String,
}

impl PseudoExample {
    pub fn sentence(&self) -> Sentence {
        Sentence::new(self.doc_id.clone(), self.ordinal, self.timestamp, self.tokens.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoProvenance {
    pub source_model: String,
    pub t_high: f64,
    pub t_low: f64,
    pub scored: usize,
    pub positive: usize,
    pub negative: usize,
    pub discarded: usize,
    /// Dropped by class balancing (0 unless balancing is on).
    pub balanced_away: usize,
    pub filter: Option<FilterProvenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub positives: Vec<PseudoExample>,
    pub negatives: Vec<PseudoExample>,
    pub provenance: PseudoProvenance,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training examples, positives first.
    pub fn examples(&self) -> Vec<LabeledExample> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .map(|p| LabeledExample::new(p.sentence(), p.label))
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &PseudoExample> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, self.records())
    }

    /// Rebuilds a set from its JSONL lines, re-checking that every recorded
    /// score lies strictly beyond its threshold.
    pub fn load_jsonl(path: &Path, t_high: f64, t_low: f64) -> Result<Self> {
        let records: Vec<PseudoExample> = crate::io::read_jsonl(path)?;
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for r in records {
            match r.label.value() {
                POSITIVE_LABEL if r.initial_score > t_high => positives.push(r),
                NEGATIVE_LABEL if r.initial_score < t_low => negatives.push(r),
                _ => {
                    return Err(Error::Data(format!(
                        "{}: pseudo example {}#{} (score {}, label {}) violates thresholds {t_low}/{t_high}",
                        path.display(),
                        r.doc_id,
                        r.ordinal,
                        r.initial_score,
                        r.label
                    )))
                }
            }
        }
        let source_model = positives
            .iter()
            .chain(&negatives)
            .next()
            .map(|r| r.model_id.clone())
            .unwrap_or_default();
        let provenance = PseudoProvenance {
            source_model,
            t_high,
            t_low,
            scored: positives.len() + negatives.len(),
            positive: positives.len(),
            negative: negatives.len(),
            discarded: 0,
            balanced_away: 0,
            filter: None,
        };
        Ok(PseudoLabelSet {
            positives,
            negatives,
            provenance,
        })
    }
}

/// Output of [`pseudo_label`]: the labeled set plus every score, for the
/// histogram report.
#[derive(Clone, Debug)]
pub struct PseudoLabeling {
    pub set: PseudoLabelSet,
    pub scores: Vec<f64>,
}

/// Scores the filtered sentences with `model` and keeps those strictly above
/// `t_high` (label +2) or strictly below `t_low` (label -2).
pub fn pseudo_label<T>(
    model: &GruModel,
    vocab: &Vocabulary,
    sentences: &Filtered<T>,
    cfg: &AdaptConfig,
) -> Result<PseudoLabeling>
where
    T: AsRef<Sentence> + Sync,
{
    cfg.validate()?;
    model.check_vocab(vocab)?;
    if sentences.provenance().filter_model.is_none() && !cfg.allow_unfiltered {
        return Err(Error::Data(
            "pseudo-labeling needs sentences that passed the domain filter".into(),
        ));
    }
    let model_id = model.id();
    let items: Vec<&Sentence> = sentences.items().iter().map(AsRef::as_ref).filter(|s| !s.is_empty()).collect();
    let scores: Vec<f64> = items
        .par_iter()
        .map(|s| model.predict_tokens(vocab, &s.tokens))
        .collect::<Result<_>>()?;

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (s, &score) in items.iter().zip(&scores) {
        let label = if score > cfg.t_high {
            POSITIVE_LABEL
        } else if score < cfg.t_low {
            NEGATIVE_LABEL
        } else {
            continue;
        };
        let ex = PseudoExample {
            doc_id: s.doc_id.clone(),
            ordinal: s.ordinal,
            timestamp: s.timestamp,
            tokens: s.tokens.clone(),
            initial_score: score,
            label: Condition::new(label.into())?,
            model_id: model_id.clone(),
        };
        if label > 0 {
            positives.push(ex);
        } else {
            negatives.push(ex);
        }
    }
    let (n_pos, n_neg) = (positives.len(), negatives.len());
    if n_pos == 0 && n_neg == 0 {
        return Err(Error::Data(format!(
            "no sentence scored above {} or below {}; nothing to fine-tune on",
            cfg.t_high, cfg.t_low
        )));
    }
    if n_pos == 0 || n_neg == 0 {
        log::warn!("pseudo-labels are one-sided ({n_pos} positive, {n_neg} negative)");
    }
    let mut balanced_away = 0;
    if cfg.balance && n_pos > 0 && n_neg > 0 {
        let keep = n_pos.min(n_neg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.fine_tune.seed);
        for side in [&mut positives, &mut negatives] {
            if side.len() > keep {
                balanced_away += side.len() - keep;
                let mut idx: Vec<usize> = (0..side.len()).collect();
                idx.shuffle(&mut rng);
                let mut chosen = idx[..keep].to_vec();
                chosen.sort_unstable();
                *side = chosen.into_iter().map(|i| side[i].clone()).collect();
            }
        }
    }
    let provenance = PseudoProvenance {
        source_model: model_id,
        t_high: cfg.t_high,
        t_low: cfg.t_low,
        scored: scores.len(),
        positive: n_pos,
        negative: n_neg,
        discarded: scores.len() - n_pos - n_neg,
        balanced_away,
        filter: Some(sentences.provenance().clone()),
    };
    Ok(PseudoLabeling {
        set: PseudoLabelSet {
            positives,
            negatives,
            provenance,
        },
        scores,
    })
}

/// Fine-tunes a copy of `model` on the pseudo-labeled sentences only.
pub fn fine_tune(model: &GruModel, vocab: &Vocabulary, pseudo: &PseudoLabelSet, cfg: &AdaptConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pseudo.is_empty() {
        return Err(Error::Data("pseudo-label set is empty".into()));
    }
    let examples = pseudo.examples();
    let mut out = train(model.clone(), vocab, &examples, &[], &cfg.fine_tune)?;
    let p = &mut out.model.meta.provenance;
    p.parent_model = Some(model.id());
    p.pseudo_positive = Some(pseudo.positives.len());
    p.pseudo_negative = Some(pseudo.negatives.len());
    out.model.meta.generation = Generation::FineTuned;
    Ok(out)
}

// ---------------------------------------------------------------------------
// score histogram

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Fixed-width histogram on a grid aligned to multiples of `width`; each
/// bin is `[lower, upper)`.
pub fn histogram(scores: &[f64], width: f64) -> Vec<HistogramBin> {
    assert!(width > 0.0, "bin width must be positive");
    let finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let lo = finite.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = finite.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let first = (lo / width).floor() as i64;
    let last = (hi / width).floor() as i64;
    let mut bins: Vec<HistogramBin> = (first..=last)
        .map(|k| HistogramBin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for s in finite {
        let k = ((s / width).floor() as i64 - first) as usize;
        let last = bins.len() - 1;
        bins[k.min(last)].count += 1;
    }
    bins
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("lower,upper,count\n");
    for b in bins {
        out.push_str(&format!("{:.4},{:.4},{}\n", b.lower, b.upper, b.count));
    }
    out
}

// ---------------------------------------------------------------------------
// lexicon probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub word: String,
    pub score: f64,
    pub in_vocab: bool,
}

/// Scores each word as a one-token sentence; sorted by descending score
/// (ties by word). Out-of-vocabulary words are scored through the OOV slot and
/// flagged.
pub fn probe_lexicon(model: &GruModel, vocab: &Vocabulary, words: &[String]) -> Result<Vec<ProbeEntry>> {
    model.check_vocab(vocab)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out: Vec<ProbeEntry> = words
        .iter()
        .filter(|w| seen.insert(w.as_str()))
        .map(|w| {
            let score = model.predict_tokens(vocab, std::slice::from_ref(w))?;
            Ok(ProbeEntry {
                word: w.clone(),
                score,
                in_vocab: vocab.get(w).is_some(),
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Up,
    Down,
    Same,
}

impl Movement {
    pub fn symbol(self) -> &'static str {
        match self {
            Movement::Up => "↑",
            Movement::Down => "↓",
            Movement::Same => "–",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconDiffRow {
    pub word: String,
    /// 1-based ranks within the probed list.
    pub rank_before: usize,
    pub rank_after: usize,
    pub score_before: f64,
    pub score_after: f64,
    pub movement: Movement,
}

/// Rank movement of every word between two probes of the same word list,
/// ordered by the second probe's ranking.
pub fn diff_lexicon(before: &[ProbeEntry], after: &[ProbeEntry]) -> Result<Vec<LexiconDiffRow>> {
    if before.len() != after.len() {
        return Err(Error::Data("lexicon probes cover different word lists".into()));
    }
    let rank_before: std::collections::HashMap<&str, (usize, f64)> = before
        .iter()
        .enumerate()
        .map(|(i, e)| (e.word.as_str(), (i + 1, e.score)))
        .collect();
    after
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let &(rb, sb) = rank_before
                .get(e.word.as_str())
                .ok_or_else(|| Error::Data(format!("word `{}` missing from the first probe", e.word)))?;
            let ra = i + 1;
            Ok(LexiconDiffRow {
                word: e.word.clone(),
                rank_before: rb,
                rank_after: ra,
                score_before: sb,
                score_after: e.score,
                movement: match ra.cmp(&rb) {
                    std::cmp::Ordering::Less => Movement::Up,
                    std::cmp::Ordering::Greater => Movement::Down,
                    std::cmp::Ordering::Equal => Movement::Same,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{Direction, GruConfig};
    use chrono::NaiveDate;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 5, 1).unwrap()
    }

    /// Vocabulary of single words plus a 1-unit model whose output for a
    /// one-token sentence is `3 * tanh(e)` with `e` the word's embedding.
    fn scripted(words: &[(&str, f64)]) -> (Vocabulary, GruModel) {
        let corpus: Vec<Sentence> = words
            .iter()
            .enumerate()
            .map(|(i, (w, _))| Sentence::from_text(format!("v{i}"), 0, date(), w))
            .collect();
        let vocab = Vocabulary::build(&corpus, 100).unwrap();
        let cfg = GruConfig {
            embedding_dim: 1,
            hidden: 1,
            layers: 1,
            direction: Direction::Forward,
            max_len: 8,
        };
        let mut m = GruModel::zeros(cfg, vocab.n_ids(), vocab.hash()).unwrap();
        for (w, e) in words {
            m.embeddings.row_mut(vocab.id(w))[0] = *e;
        }
        // z = sigmoid(big) ~ 1, n = tanh(x): h1 = tanh(x)
        m.layers[0].b[crate::regressor::gru::GATE_Z][0] = 40.0;
        m.layers[0].w[crate::regressor::gru::GATE_N][0] = 1.0;
        m.head_w[0] = 3.0;
        (vocab, m)
    }

    fn filtered(words: &[&str]) -> Filtered<Sentence> {
        let s = words
            .iter()
            .enumerate()
            .map(|(i, w)| Sentence::from_text(format!("n{i}"), 0, date(), w))
            .collect();
        Filtered::unfiltered(s)
    }

    fn permissive() -> AdaptConfig {
        AdaptConfig {
            allow_unfiltered: true,
            ..AdaptConfig::default()
        }
    }

    /// embedding that makes the scripted model output `score`
    fn emb_for(score: f64) -> f64 {
        (score / 3.0).atanh()
    }

    #[test]
    fn threshold_partition() {
        let (vocab, m) = scripted(&[("up", emb_for(0.9)), ("flat", emb_for(0.5)), ("down", emb_for(-1.2))]);
        let out = pseudo_label(&m, &vocab, &filtered(&["up", "flat", "down"]), &permissive()).unwrap();
        let set = out.set;
        assert_eq!(set.positives.len(), 1);
        assert_eq!(set.negatives.len(), 1);
        assert_eq!(set.positives[0].tokens, vec!["up"]);
        assert_eq!(set.positives[0].label.value(), 2);
        assert_eq!(set.negatives[0].label.value(), -2);
        assert_eq!(set.provenance.discarded, 1);
        assert!((set.positives[0].initial_score - 0.9).abs() < 1e-9);
    }

    #[test]
    fn nothing_confident_is_an_error() {
        let (vocab, m) = scripted(&[("a", emb_for(0.1)), ("b", emb_for(-0.9))]);
        assert!(matches!(
            pseudo_label(&m, &vocab, &filtered(&["a", "b"]), &permissive()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn boundary_scores_are_discarded() {
        let (vocab, mut m) = scripted(&[("edge", 0.0), ("low", 0.0), ("hi", emb_for(1.5)), ("deep", emb_for(-0.5))]);
        // hit the thresholds exactly through the head bias
        m.head_b = 0.8;
        let out = pseudo_label(&m, &vocab, &filtered(&["edge", "hi"]), &permissive()).unwrap();
        assert_eq!(out.scores[0], 0.8);
        assert_eq!(out.set.positives.len(), 1);
        assert_eq!(out.set.positives[0].tokens, vec!["hi"]);
        m.head_b = -1.0;
        let out = pseudo_label(&m, &vocab, &filtered(&["low", "deep"]), &permissive()).unwrap();
        assert_eq!(out.scores[0], -1.0);
        assert_eq!(out.set.negatives.len(), 1);
        assert_eq!(out.set.negatives[0].tokens, vec!["deep"]);
    }

    #[test]
    fn unfiltered_input_is_refused_by_default() {
        let (vocab, m) = scripted(&[("up", emb_for(0.9))]);
        let err = pseudo_label(&m, &vocab, &filtered(&["up"]), &AdaptConfig::default()).unwrap_err();
        assert!(err.to_string().contains("filter"), "{err}");
    }

    #[test]
    fn thresholds_must_be_ordered() {
        let cfg = AdaptConfig {
            t_high: -1.0,
            t_low: 0.8,
            ..permissive()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fine_tune_moves_toward_labels_and_keeps_parent() {
        let (vocab, m) = scripted(&[("up", emb_for(0.9)), ("rise", emb_for(1.0)), ("down", emb_for(-1.5))]);
        let before = m.to_bytes().unwrap();
        let set = pseudo_label(&m, &vocab, &filtered(&["up", "rise", "down"]), &permissive())
            .unwrap()
            .set;
        let cfg = AdaptConfig {
            fine_tune: TrainConfig {
                epochs: 5,
                batch_size: 2,
                learning_rate: 1e-2,
                ..AdaptConfig::default().fine_tune
            },
            ..permissive()
        };
        let out = fine_tune(&m, &vocab, &set, &cfg).unwrap();
        assert_eq!(m.to_bytes().unwrap(), before);
        for p in &set.positives {
            assert!(out.model.predict_tokens(&vocab, &p.tokens).unwrap() > p.initial_score);
        }
        for p in &set.negatives {
            assert!(out.model.predict_tokens(&vocab, &p.tokens).unwrap() < p.initial_score);
        }
        assert_eq!(out.model.meta.generation, Generation::FineTuned);
        assert_eq!(out.model.meta.provenance.pseudo_positive, Some(set.provenance.positive));
        assert_eq!(out.model.meta.provenance.pseudo_negative, Some(set.provenance.negative));
        assert_eq!(out.model.meta.provenance.parent_model, Some(m.id()));
    }

    #[test]
    fn zero_epoch_fine_tune_is_identity() {
        let (vocab, m) = scripted(&[("up", emb_for(0.9))]);
        let set = pseudo_label(&m, &vocab, &filtered(&["up"]), &permissive()).unwrap().set;
        let mut cfg = permissive();
        cfg.fine_tune.epochs = 0;
        let out = fine_tune(&m, &vocab, &set, &cfg).unwrap();
        assert_eq!(out.model.layers, m.layers);
        assert_eq!(out.model.embeddings, m.embeddings);
        assert_eq!(out.model.head_w, m.head_w);
    }

    #[test]
    fn balancing_trims_larger_side() {
        let (vocab, m) = scripted(&[("a", emb_for(1.0)), ("b", emb_for(1.1)), ("c", emb_for(1.2)), ("d", emb_for(-1.5))]);
        let cfg = AdaptConfig {
            balance: true,
            ..permissive()
        };
        let set = pseudo_label(&m, &vocab, &filtered(&["a", "b", "c", "d"]), &cfg).unwrap().set;
        assert_eq!(set.positives.len(), 1);
        assert_eq!(set.negatives.len(), 1);
        assert_eq!(set.provenance.balanced_away, 2);
    }

    #[test]
    fn jsonl_round_trip_checks_thresholds() {
        let (vocab, m) = scripted(&[("up", emb_for(0.9)), ("down", emb_for(-1.5))]);
        let set = pseudo_label(&m, &vocab, &filtered(&["up", "down"]), &permissive()).unwrap().set;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pl.jsonl");
        set.save_jsonl(&p).unwrap();
        let back = PseudoLabelSet::load_jsonl(&p, 0.8, -1.0).unwrap();
        assert_eq!(back.positives, set.positives);
        assert_eq!(back.negatives, set.negatives);
        assert!(PseudoLabelSet::load_jsonl(&p, 0.95, -1.0).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let scores = [-1.25, -0.05, 0.0, 0.05, 0.81, 2.0];
        let bins = histogram(&scores, 0.5);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), scores.len());
        assert_eq!(bins.first().unwrap().lower, -1.5);
        assert_eq!(bins.last().unwrap().lower, 2.0);
        for s in scores {
            let b = bins.iter().find(|b| b.lower <= s && s < b.upper).unwrap();
            assert!(b.count > 0);
        }
        assert!(histogram(&[], 0.1).is_empty());
    }

    #[test]
    fn probe_and_diff() {
        let (vocab, m) = scripted(&[("good", emb_for(1.0)), ("fine", emb_for(0.2)), ("bad", emb_for(-1.0))]);
        let words: Vec<String> = ["bad", "good", "fine", "zzz"].iter().map(|s| s.to_string()).collect();
        let p1 = probe_lexicon(&m, &vocab, &words).unwrap();
        let p2 = probe_lexicon(&m, &vocab, &words).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1[0].word, "good");
        assert_eq!(p1.last().unwrap().word, "bad");
        assert!(!p1.iter().find(|e| e.word == "zzz").unwrap().in_vocab);
        let same = diff_lexicon(&p1, &p2).unwrap();
        assert_eq!(same.len(), words.len());
        assert!(same.iter().all(|r| r.movement == Movement::Same));

        let mut m2 = m.clone();
        m2.embeddings.row_mut(vocab.id("bad"))[0] = emb_for(1.5);
        let d = diff_lexicon(&p1, &probe_lexicon(&m2, &vocab, &words).unwrap()).unwrap();
        let bad = d.iter().find(|r| r.word == "bad").unwrap();
        assert_eq!((bad.rank_before, bad.rank_after, bad.movement), (4, 1, Movement::Up));
        assert_eq!(d.iter().find(|r| r.word == "good").unwrap().movement, Movement::Down);
        assert_eq!(Movement::Up.symbol(), "↑");
    }
}
