//! Vocabulary, tf-idf bag-of-words vectors and the word embedding table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 40_000;
pub const DEFAULT_EMBEDDING_DIM: usize = 300;

/// Short content hash identifying a vocabulary (words, counts and document
/// frequencies). Models record it and refuse inputs built with another one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VocabHash(pub u64);

impl fmt::Display for VocabHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for VocabHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(VocabHash)
            .map_err(|_| Error::Format(format!("bad vocabulary hash `{s}`")))
    }
}

impl Serialize for VocabHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VocabHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Frequency-ranked word list with document frequencies.
///
/// Ids `0..len()` are words in descending corpus frequency (ties broken by
/// byte-wise lexicographic order); id `len()` is the shared out-of-vocabulary
/// slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    frequency: Vec<u64>,
    doc_freq: Vec<u64>,
    oov_frequency: u64,
    oov_doc_freq: u64,
    n_docs: u64,
    max_size: usize,
    hash: VocabHash,
}

impl Vocabulary {
    /// Builds from a sentence corpus. Every sentence counts as one document
    /// for the document frequencies.
    pub fn build<'a, I>(sentences: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        Self::build_from_tokens(sentences.into_iter().map(|s| s.tokens.as_slice()), max_size)
    }

    pub fn build_from_tokens<'a, I>(docs: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size < 1 {
            return Err(Error::Config("vocabulary max size must be at least 1".into()));
        }
        let docs: Vec<&[String]> = docs.into_iter().collect();
        if docs.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut freq: HashMap<&str, (u64, u64)> = HashMap::new();
        for doc in &docs {
            let mut seen = HashSet::new();
            for tok in doc.iter() {
                let entry = freq.entry(tok.as_str()).or_insert((0, 0));
                entry.0 += 1;
                if seen.insert(tok.as_str()) {
                    entry.1 += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64, u64)> = freq.into_iter().map(|(w, (f, d))| (w, f, d)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);

        let kept: HashSet<&str> = ranked.iter().map(|r| r.0).collect();
        let mut oov_frequency = 0;
        let mut oov_doc_freq = 0;
        for doc in &docs {
            let misses = doc.iter().filter(|t| !kept.contains(t.as_str())).count() as u64;
            oov_frequency += misses;
            if misses > 0 {
                oov_doc_freq += 1;
            }
        }
        Ok(Self::from_parts(
            ranked.iter().map(|r| r.0.to_string()).collect(),
            ranked.iter().map(|r| r.1).collect(),
            ranked.iter().map(|r| r.2).collect(),
            oov_frequency,
            oov_doc_freq,
            docs.len() as u64,
            max_size,
        ))
    }

    fn from_parts(
        words: Vec<String>,
        frequency: Vec<u64>,
        doc_freq: Vec<u64>,
        oov_frequency: u64,
        oov_doc_freq: u64,
        n_docs: u64,
        max_size: usize,
    ) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut h = Sha256::new();
        h.update(format!("{max_size}\n{n_docs}\n{oov_frequency}\n{oov_doc_freq}\n"));
        for ((w, f), d) in words.iter().zip(&frequency).zip(&doc_freq) {
            h.update(format!("{w}\t{f}\t{d}\n"));
        }
        let digest = h.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Vocabulary {
            words,
            index,
            frequency,
            doc_freq,
            oov_frequency,
            oov_doc_freq,
            n_docs,
            max_size,
            hash: VocabHash(u64::from_be_bytes(head)),
        }
    }

    /// Number of in-vocabulary words (excluding the OOV slot).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of ids including the OOV slot.
    pub fn n_ids(&self) -> usize {
        self.words.len() + 1
    }

    pub fn oov_id(&self) -> u32 {
        self.words.len() as u32
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn hash(&self) -> VocabHash {
        self.hash
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.get(word).unwrap_or_else(|| self.oov_id())
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.frequency.get(id as usize).copied().unwrap_or(self.oov_frequency)
    }

    /// Document frequency; the OOV id reports how many documents contained
    /// at least one out-of-vocabulary token.
    pub fn doc_freq(&self, id: u32) -> u64 {
        self.doc_freq.get(id as usize).copied().unwrap_or(self.oov_doc_freq)
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df))`.
    pub fn idf(&self, id: u32) -> f64 {
        let n = self.n_docs as f64;
        ((1.0 + n) / (1.0 + self.doc_freq(id) as f64)).ln()
    }

    /// Writes `rank, word, frequency, df` rows after a metadata comment line.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = format!(
            "# max_size={} n_docs={} oov_frequency={} oov_df={}\nrank\tword\tfrequency\tdf\n",
            self.max_size, self.n_docs, self.oov_frequency, self.oov_doc_freq
        );
        for (i, w) in self.words.iter().enumerate() {
            if w.contains(['\t', '\n', '\r']) {
                return Err(Error::Data(format!("word {w:?} cannot be stored in TSV")));
            }
            out.push_str(&format!("{}\t{}\t{}\t{}\n", i + 1, w, self.frequency[i], self.doc_freq[i]));
        }
        Ok(out)
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.to_tsv()?)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::Format("vocabulary TSV lacks metadata line".into()))?;
        let mut kv = BTreeMap::new();
        for part in meta.split_whitespace() {
            if let Some((k, v)) = part.split_once('=') {
                let v: u64 = v
                    .parse()
                    .map_err(|_| Error::Format(format!("bad vocabulary metadata `{part}`")))?;
                kv.insert(k.to_string(), v);
            }
        }
        let field = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("vocabulary metadata lacks `{k}`")))
        };
        let (max_size, n_docs) = (field("max_size")? as usize, field("n_docs")?);
        let (oov_frequency, oov_doc_freq) = (field("oov_frequency")?, field("oov_df")?);
        lines.next();
        let (mut words, mut frequency, mut doc_freq) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("vocabulary row {}: `{line}`", i + 1));
            if cols.len() != 4 || cols[0].parse::<usize>().ok() != Some(i + 1) {
                return Err(bad());
            }
            words.push(cols[1].to_string());
            frequency.push(cols[2].parse().map_err(|_| bad())?);
            doc_freq.push(cols[3].parse().map_err(|_| bad())?);
        }
        Ok(Self::from_parts(
            words,
            frequency,
            doc_freq,
            oov_frequency,
            oov_doc_freq,
            n_docs,
            max_size,
        ))
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        Self::from_tsv(&crate::io::read_text(path)?)
    }
}

// ---------------------------------------------------------------------------
// sparse tf-idf vectors

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub l2_normalize: bool,
    /// Adds one feature for the out-of-vocabulary mass of the sentence.
    pub oov_feature: bool,
}

impl TfidfConfig {
    /// Settings for one-class SVM input.
    pub fn filter() -> Self {
        TfidfConfig {
            l2_normalize: true,
            oov_feature: true,
        }
    }

    /// Settings for the ridge baseline.
    pub fn ridge() -> Self {
        TfidfConfig {
            l2_normalize: false,
            oov_feature: false,
        }
    }
}

/// Sparse non-negative vector keyed by vocabulary id, sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfVector {
    entries: Vec<(u32, f64)>,
    normalized: bool,
    vocab_hash: VocabHash,
}

impl TfidfVector {
    /// Builds a vector from raw entries. Duplicate ids are summed and zero
    /// weights dropped; negative or non-finite weights are rejected.
    pub fn from_entries(mut entries: Vec<(u32, f64)>, vocab_hash: VocabHash) -> Result<Self> {
        if let Some(&(id, w)) = entries.iter().find(|e| !(e.1.is_finite() && e.1 >= 0.0)) {
            return Err(Error::Data(format!("invalid tf-idf weight {w} at id {id}")));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => merged.push((id, w)),
            }
        }
        merged.retain(|e| e.1 > 0.0);
        Ok(TfidfVector {
            entries: merged,
            normalized: false,
            vocab_hash,
        })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn vocab_hash(&self) -> VocabHash {
        self.vocab_hash
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum()
    }

    pub fn dot(&self, other: &TfidfVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Flags a vector already known to have unit norm (e.g. read back from disk).
    pub(crate) fn mark_normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub fn l2_normalized(mut self) -> Self {
        let norm = self.squared_norm().sqrt();
        if norm > 0.0 {
            for e in &mut self.entries {
                e.1 /= norm;
            }
        }
        self.normalized = true;
        self
    }
}

/// tf-idf with raw in-sentence counts as tf and smoothed idf.
pub fn tfidf(tokens: &[String], vocab: &Vocabulary, cfg: &TfidfConfig) -> TfidfVector {
    let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
    for t in tokens {
        let id = vocab.id(t);
        if id != vocab.oov_id() || cfg.oov_feature {
            *tf.entry(id).or_insert(0) += 1;
        }
    }
    let entries = tf
        .into_iter()
        .map(|(id, n)| (id, f64::from(n) * vocab.idf(id)))
        .filter(|e| e.1 > 0.0)
        .collect();
    let v = TfidfVector {
        entries,
        normalized: false,
        vocab_hash: vocab.hash(),
    };
    if cfg.l2_normalize {
        v.l2_normalized()
    } else {
        v
    }
}

// ---------------------------------------------------------------------------
// embeddings

/// Dense `n_ids x dim` matrix with one row per vocabulary id (OOV included).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCoverage {
    pub matched: usize,
    pub vocab_words: usize,
    pub skipped_rows: usize,
    pub ratio: f64,
}

impl EmbeddingTable {
    /// Rows drawn uniformly from `[-0.5/dim, 0.5/dim]`.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let bound = 0.5 / dim as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        EmbeddingTable {
            rows,
            dim,
            data,
            trainable: true,
        }
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Format(format!(
                "embedding data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(EmbeddingTable {
            rows,
            dim,
            data,
            trainable: true,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Loads word2vec text-format vectors for the words of `vocab`.
///
/// Vocabulary words missing from the file (and the OOV row) keep the random
/// initialisation of [`EmbeddingTable::random`] for `seed`, so the same seed
/// always yields the same table.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable, EmbeddingCoverage)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Format(format!("{}: empty embedding file", path.display()))),
    };
    let head: Vec<&str> = header.split_whitespace().collect();
    let file_dim = match head.as_slice() {
        [_, d] => d
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("{}: bad header `{header}`", path.display())))?,
        _ => return Err(Error::Format(format!("{}: bad header `{header}`", path.display()))),
    };
    if file_dim != dim {
        return Err(Error::Config(format!(
            "{}: embedding dimension {file_dim} does not match configured {dim}",
            path.display()
        )));
    }

    let mut table = EmbeddingTable::random(vocab.n_ids(), dim, seed);
    let mut filled = vec![false; vocab.len()];
    let mut skipped = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => v,
            _ => {
                log::warn!("{}: line {}: malformed embedding row skipped", path.display(), i + 2);
                skipped += 1;
                continue;
            }
        };
        if let Some(id) = vocab.get(word) {
            if !filled[id as usize] {
                table.row_mut(id).copy_from_slice(&values);
                filled[id as usize] = true;
            }
        }
    }
    let matched = filled.iter().filter(|f| **f).count();
    let coverage = EmbeddingCoverage {
        matched,
        vocab_words: vocab.len(),
        skipped_rows: skipped,
        ratio: if vocab.is_empty() { 0.0 } else { matched as f64 / vocab.len() as f64 },
    };
    log::info!(
        "embeddings: {matched}/{} vocabulary words covered ({:.1}%)",
        vocab.len(),
        100.0 * coverage.ratio
    );
    Ok((table, coverage))
}
