//! One-class SVM over tf-idf vectors, used to drop news sentences that look
//! unlike the survey statements the regressor was trained on.
//!
//! The dual `min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu N), sum a = 1` is solved by
//! SMO with maximal-violating-pair working-set selection. Internally the
//! variables are rescaled by `nu N` (box `[0, 1]`, sum `nu N`), which keeps
//! the stopping tolerance independent of the training-set size.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{Container, Tensor};
use crate::corpus::{Sentence, SentenceRecord};
use crate::error::{Error, Result};
use crate::features::{tfidf, TfidfConfig, TfidfVector, VocabHash, Vocabulary};

pub const DEFAULT_NU: f64 = 0.1;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Stopping tolerance on the maximal KKT violation (rescaled variables).
/// Tight enough that scores agree to 1e-6 across training-set permutations.
pub const KKT_TOL: f64 = 1e-7;
/// Up to this many training points the full kernel matrix is precomputed.
const DENSE_KERNEL_LIMIT: usize = 3000;
const GAMMA_SAMPLE: usize = 1000;
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    fn eval(&self, a: &TfidfVector, a_sq: f64, b: &TfidfVector, b_sq: f64) -> f64 {
        let d = a.dot(b);
        match *self {
            Kernel::Linear => d,
            Kernel::Rbf { gamma } => (-gamma * (a_sq + b_sq - 2.0 * d).max(0.0)).exp(),
        }
    }
}

/// Kernel choice before training; `Rbf { gamma: None }` picks gamma from data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Rbf { gamma: Option<f64> },
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf { gamma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub nu: f64,
    pub kernel: KernelSpec,
    pub max_iter: usize,
    pub tolerance: f64,
    /// Seed for the sample used to pick the default rbf gamma.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            nu: DEFAULT_NU,
            kernel: KernelSpec::default(),
            max_iter: DEFAULT_MAX_ITER,
            tolerance: KKT_TOL,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneClassSvm {
    pub support: Vec<TfidfVector>,
    /// Dual coefficients of the support vectors, summing to one.
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub kernel: Kernel,
    pub nu: f64,
    pub n_train: usize,
    pub vocab_hash: VocabHash,
    pub features: TfidfConfig,
    support_sq: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub final_violation: f64,
    pub n_support: usize,
    pub n_bounded: usize,
}

/// Mean pairwise squared distance over a seeded sample of at most 1k points,
/// inverted. Falls back to 1 when all sampled points coincide.
pub fn default_gamma(vectors: &[TfidfVector], seed: u64) -> f64 {
    let n = vectors.len();
    let idx: Vec<usize> = if n > GAMMA_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, GAMMA_SAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let sq: Vec<f64> = idx.iter().map(|&i| vectors[i].squared_norm()).collect();
    let (mut sum, mut pairs) = (0.0, 0usize);
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            sum += (sq[a] + sq[b] - 2.0 * vectors[idx[a]].dot(&vectors[idx[b]])).max(0.0);
            pairs += 1;
        }
    }
    let mean = if pairs > 0 { sum / pairs as f64 } else { 0.0 };
    if mean > 0.0 {
        1.0 / mean
    } else {
        1.0
    }
}

/// Kernel rows, either fully precomputed or computed on demand with a
/// bounded FIFO cache.
struct KernelRows<'a> {
    x: &'a [TfidfVector],
    sq: Vec<f64>,
    kernel: Kernel,
    dense: Option<Vec<f64>>,
    cache: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [TfidfVector], kernel: Kernel) -> Self {
        let n = x.len();
        let sq: Vec<f64> = x.iter().map(TfidfVector::squared_norm).collect();
        let dense = (n <= DENSE_KERNEL_LIMIT).then(|| {
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| (0..n).map(|j| kernel.eval(&x[i], sq[i], &x[j], sq[j])).collect())
                .collect();
            rows.concat()
        });
        KernelRows {
            x,
            sq,
            kernel,
            dense,
            cache: HashMap::new(),
            order: VecDeque::new(),
            // about 256 MiB of cached rows
            capacity: (32 * 1024 * 1024 / n.max(1)).max(2),
        }
    }

    fn diag(&self, i: usize) -> f64 {
        self.kernel.eval(&self.x[i], self.sq[i], &self.x[i], self.sq[i])
    }

    fn row(&mut self, i: usize) -> &[f64] {
        let n = self.x.len();
        if let Some(d) = &self.dense {
            return &d[i * n..(i + 1) * n];
        }
        if !self.cache.contains_key(&i) {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.cache.remove(&old);
                }
            }
            let (x, sq, k) = (self.x, &self.sq, self.kernel);
            let row: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|j| k.eval(&x[i], sq[i], &x[j], sq[j]))
                .collect();
            self.cache.insert(i, row);
            self.order.push_back(i);
        }
        &self.cache[&i]
    }
}

impl OneClassSvm {
    /// Trains on L2-normalised tf-idf vectors of one vocabulary.
    pub fn train(vectors: &[TfidfVector], features: TfidfConfig, cfg: &SvmConfig) -> Result<(Self, SolverStats)> {
        let n = vectors.len();
        if n < 2 {
            return Err(Error::Data(format!("one-class SVM needs at least 2 training vectors, got {n}")));
        }
        if !(cfg.nu > 0.0 && cfg.nu < 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1), got {}", cfg.nu)));
        }
        let hash = vectors[0].vocab_hash();
        if vectors.iter().any(|v| v.vocab_hash() != hash) {
            return Err(Error::Data("training vectors come from different vocabularies".into()));
        }
        let kernel = match cfg.kernel {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Rbf { gamma: Some(g) } if g > 0.0 && g.is_finite() => Kernel::Rbf { gamma: g },
            KernelSpec::Rbf { gamma: Some(g) } => {
                return Err(Error::Config(format!("rbf gamma must be positive, got {g}")))
            }
            KernelSpec::Rbf { gamma: None } => Kernel::Rbf {
                gamma: default_gamma(vectors, cfg.seed),
            },
        };

        let total = cfg.nu * n as f64;
        let mut a = vec![0.0; n];
        let whole = total.floor() as usize;
        for ai in a.iter_mut().take(whole.min(n)) {
            *ai = 1.0;
        }
        if whole < n {
            a[whole] = total - whole as f64;
        }
        let mut k = KernelRows::new(vectors, kernel);
        let diag: Vec<f64> = (0..n).map(|i| k.diag(i)).collect();
        // gradient of 1/2 a'Ka
        let mut g = vec![0.0; n];
        for j in 0..n {
            if a[j] > 0.0 {
                let aj = a[j];
                let row = k.row(j);
                for (gi, kij) in g.iter_mut().zip(row) {
                    *gi += aj * kij;
                }
            }
        }

        let mut iterations = 0;
        let violation = loop {
            // i: steepest ascent among those that can grow
            let mut i = usize::MAX;
            let mut g_max = f64::NEG_INFINITY;
            for t in 0..n {
                if a[t] < 1.0 && -g[t] >= g_max {
                    if -g[t] > g_max || i == usize::MAX {
                        i = t;
                    }
                    g_max = -g[t];
                }
            }
            let mut g_min = f64::INFINITY;
            for t in 0..n {
                if a[t] > 0.0 {
                    g_min = g_min.min(-g[t]);
                }
            }
            let gap = g_max - g_min;
            if gap < cfg.tolerance || i == usize::MAX {
                break gap.max(0.0);
            }
            if iterations >= cfg.max_iter {
                return Err(Error::NotConverged {
                    iterations,
                    violation: gap,
                });
            }
            // j: second-order choice among those that can shrink
            let ki = k.row(i).to_vec();
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if a[t] > 0.0 {
                    let b = g_max + g[t];
                    if b > 0.0 {
                        let quad = (diag[i] + diag[t] - 2.0 * ki[t]).max(TAU);
                        let obj = -(b * b) / quad;
                        if obj < best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            }
            if j == usize::MAX {
                break gap;
            }
            let kj = k.row(j).to_vec();
            let quad = (diag[i] + diag[j] - 2.0 * ki[j]).max(TAU);
            let step = ((g[j] - g[i]) / quad).min(1.0 - a[i]).min(a[j]);
            a[i] += step;
            a[j] -= step;
            // snap to the box to keep bound bookkeeping exact
            if a[i] > 1.0 - 1e-15 {
                a[i] = 1.0;
            }
            if a[j] < 1e-15 {
                a[j] = 0.0;
            }
            for t in 0..n {
                g[t] += step * (ki[t] - kj[t]);
            }
            iterations += 1;
        };

        // offset from free variables, else midpoint of the feasible interval
        let (mut free_sum, mut n_free) = (0.0, 0usize);
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            if a[t] >= 1.0 {
                lb = lb.max(g[t]);
            } else if a[t] <= 0.0 {
                ub = ub.min(g[t]);
            } else {
                free_sum += g[t];
                n_free += 1;
            }
        }
        let rho_scaled = if n_free > 0 { free_sum / n_free as f64 } else { (ub + lb) / 2.0 };

        let mut support = Vec::new();
        let mut alpha = Vec::new();
        let mut n_bounded = 0;
        for t in 0..n {
            if a[t] > 0.0 {
                support.push(vectors[t].clone());
                alpha.push(a[t] / total);
                if a[t] >= 1.0 {
                    n_bounded += 1;
                }
            }
        }
        let stats = SolverStats {
            iterations,
            final_violation: violation,
            n_support: support.len(),
            n_bounded,
        };
        log::info!(
            "one-class SVM: {} iterations, {} support vectors ({} at bound), violation {:.2e}",
            iterations,
            stats.n_support,
            n_bounded,
            violation
        );
        let support_sq = support.iter().map(TfidfVector::squared_norm).collect();
        Ok((
            OneClassSvm {
                support,
                alpha,
                rho: rho_scaled / total,
                kernel,
                nu: cfg.nu,
                n_train: n,
                vocab_hash: hash,
                features,
                support_sq,
            },
            stats,
        ))
    }

    /// Signed decision value `sum a_i k(x_i, x) - rho`.
    pub fn decision(&self, x: &TfidfVector) -> Result<f64> {
        if x.vocab_hash() != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.to_string(),
                actual: x.vocab_hash().to_string(),
            });
        }
        let xsq = x.squared_norm();
        let s: f64 = self
            .support
            .iter()
            .zip(&self.support_sq)
            .zip(&self.alpha)
            .map(|((sv, &sq), &a)| a * self.kernel.eval(sv, sq, x, xsq))
            .sum();
        Ok(s - self.rho)
    }

    /// Vectorises `tokens` with the model's feature settings and scores them.
    pub fn score_tokens(&self, vocab: &Vocabulary, tokens: &[String]) -> Result<f64> {
        self.decision(&tfidf(tokens, vocab, &self.features))
    }

    /// Content id: leading hex digits of the SHA-256 of the serialized model.
    pub fn id(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_container()?.to_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    fn to_container(&self) -> Result<Container> {
        let header = SvmHeader {
            kernel: self.kernel,
            nu: self.nu,
            rho: self.rho,
            n_train: self.n_train,
            features: self.features,
            normalized: self.support.iter().all(TfidfVector::is_normalized),
        };
        let mut c = Container::new("ocsvm", self.vocab_hash, &header)?;
        let mut indptr = vec![0u64];
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for sv in &self.support {
            for &(id, v) in sv.entries() {
                ids.push(u64::from(id));
                values.push(v);
            }
            indptr.push(ids.len() as u64);
        }
        c.push(Tensor::f64("alpha", vec![self.alpha.len()], self.alpha.clone()));
        c.push(Tensor::u64("sv.indptr", vec![indptr.len()], indptr));
        c.push(Tensor::u64("sv.ids", vec![ids.len()], ids));
        c.push(Tensor::f64("sv.values", vec![values.len()], values));
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind("ocsvm")?;
        let h: SvmHeader = c.header()?;
        let indptr = c.u64s("sv.indptr")?;
        let ids = c.u64s("sv.ids")?;
        let n_sv = indptr.len().saturating_sub(1);
        let alpha = c.f64s("alpha", &[n_sv])?;
        let values = c.f64s("sv.values", &[ids.len()])?;
        let mut support = Vec::with_capacity(n_sv);
        for w in indptr.windows(2) {
            let (s, e) = (w[0] as usize, w[1] as usize);
            if s > e || e > ids.len() {
                return Err(Error::Format("corrupt support-vector index".into()));
            }
            let entries = ids[s..e].iter().zip(&values[s..e]).map(|(&i, &v)| (i as u32, v)).collect();
            let v = TfidfVector::from_entries(entries, c.vocab_hash)?;
            support.push(if h.normalized { v.mark_normalized() } else { v });
        }
        let support_sq = support.iter().map(TfidfVector::squared_norm).collect();
        Ok(OneClassSvm {
            support,
            alpha,
            rho: h.rho,
            kernel: h.kernel,
            nu: h.nu,
            n_train: h.n_train,
            vocab_hash: c.vocab_hash,
            features: h.features,
            support_sq,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SvmHeader {
    kernel: Kernel,
    nu: f64,
    rho: f64,
    n_train: usize,
    features: TfidfConfig,
    normalized: bool,
}

// ---------------------------------------------------------------------------
// corpus filtering

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub doc_id: String,
    pub ordinal: usize,
    pub score: f64,
    pub inlier: bool,
}

impl FilterVerdict {
    pub fn new(sentence: &Sentence, score: f64) -> Self {
        FilterVerdict {
            doc_id: sentence.doc_id.clone(),
            ordinal: sentence.ordinal,
            score,
            inlier: score >= 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub inliers: usize,
    pub outliers: usize,
    /// `None` for an empty input (0/0).
    pub outlier_rate: Option<f64>,
}

/// Where a set of kept sentences came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterProvenance {
    /// Id of the filter model, or `None` when filtering was explicitly skipped.
    pub filter_model: Option<String>,
    pub total: usize,
    pub kept: usize,
}

/// Sentences that went through the filter. Only [`filter_corpus`],
/// [`Filtered::unfiltered`] and the file loader construct it, so holding one
/// proves the filtering step was not silently skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Filtered<T> {
    items: Vec<T>,
    provenance: FilterProvenance,
}

impl<T> Filtered<T> {
    /// Passes everything through, recording that no filter was applied.
    pub fn unfiltered(items: Vec<T>) -> Self {
        let n = items.len();
        Filtered {
            items,
            provenance: FilterProvenance {
                filter_model: None,
                total: n,
                kept: n,
            },
        }
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }

    pub fn provenance(&self) -> &FilterProvenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl Filtered<SentenceRecord> {
    /// JSONL with the provenance as first line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string(&ProvenanceLine {
            filtered: self.provenance.clone(),
        })?;
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
            out.push('\n');
        }
        crate::io::write_text(path, &out)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty filtered-sentence file", path.display())))?;
        let head: ProvenanceLine = serde_json::from_str(first).map_err(|_| {
            Error::Data(format!(
                "{}: missing filter provenance line; run the filter stage first",
                path.display()
            ))
        })?;
        let items = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Record {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<SentenceRecord>>>()?;
        if items.len() != head.filtered.kept {
            return Err(Error::Data(format!(
                "{}: provenance says {} sentences, file has {}",
                path.display(),
                head.filtered.kept,
                items.len()
            )));
        }
        Ok(Filtered {
            items,
            provenance: head.filtered,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceLine {
    filtered: FilterProvenance,
}

#[derive(Clone, Debug)]
pub struct FilterOutcome<T> {
    pub inliers: Filtered<T>,
    pub outliers: Vec<T>,
    /// One verdict per input, in input order.
    pub verdicts: Vec<FilterVerdict>,
    pub stats: FilterStats,
}

/// Scores every sentence and partitions the input, keeping its order.
/// Empty sentences cannot be vectorised meaningfully and count as outliers.
pub fn filter_corpus<T>(model: &OneClassSvm, vocab: &Vocabulary, items: Vec<T>) -> Result<FilterOutcome<T>>
where
    T: AsRef<Sentence> + Send + Sync,
{
    if vocab.hash() != model.vocab_hash {
        return Err(Error::VocabMismatch {
            expected: model.vocab_hash.to_string(),
            actual: vocab.hash().to_string(),
        });
    }
    let verdicts: Vec<FilterVerdict> = items
        .par_iter()
        .map(|it| {
            let s = it.as_ref();
            let score = if s.is_empty() {
                f64::NEG_INFINITY
            } else {
                model.score_tokens(vocab, &s.tokens)?
            };
            Ok(FilterVerdict::new(s, score))
        })
        .collect::<Result<_>>()?;
    let total = items.len();
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for (it, v) in items.into_iter().zip(&verdicts) {
        if v.inlier {
            inliers.push(it);
        } else {
            outliers.push(it);
        }
    }
    let stats = FilterStats {
        total,
        inliers: inliers.len(),
        outliers: outliers.len(),
        outlier_rate: (total > 0).then(|| outliers.len() as f64 / total as f64),
    };
    let provenance = FilterProvenance {
        filter_model: Some(model.id()?),
        total,
        kept: inliers.len(),
    };
    Ok(FilterOutcome {
        inliers: Filtered {
            items: inliers,
            provenance,
        },
        outliers,
        verdicts,
        stats,
    })
}

/// Outlier rate the corpus would have if the decision threshold were moved
/// to each of the given values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub outlier_rate: f64,
}

pub fn threshold_report(verdicts: &[FilterVerdict], thresholds: &[f64]) -> Vec<ThresholdRow> {
    thresholds
        .iter()
        .map(|&t| ThresholdRow {
            threshold: t,
            outlier_rate: if verdicts.is_empty() {
                0.0
            } else {
                verdicts.iter().filter(|v| v.score < t).count() as f64 / verdicts.len() as f64
            },
        })
        .collect()
}
