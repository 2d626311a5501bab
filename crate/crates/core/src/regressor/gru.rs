//! Stacked GRU regressor: embeddings, recurrent layers, scalar head.
//!
//! Cell equations (per layer, `x` the layer input, `h` the previous state):
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! n  = tanh(Wn x + Un (r * h) + bn)
//! h' = (1 - z) * h + z * n
//! ```
//!
//! The prediction is `head_w . h_T + head_b` on the top layer's final state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{Container, Tensor};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, VocabHash, Vocabulary};

pub const GATE_Z: usize = 0;
pub const GATE_R: usize = 1;
pub const GATE_N: usize = 2;
const GATE_NAMES: [&str; 3] = ["z", "r", "n"];

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 128;

const INIT_SCHEME: &str = "orthogonal recurrent, uniform(+-1/sqrt(fan_in)) input and head, zero bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Tokens are read left to right.
    Forward,
    /// Tokens are read right to left.
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub direction: Direction,
    /// Sequences are truncated to their first `max_len` tokens.
    pub max_len: usize,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            embedding_dim: crate::features::DEFAULT_EMBEDDING_DIM,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            direction: Direction::Forward,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden == 0 || self.layers == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("GRU dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Which model of the adaptation procedure a parameter set is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generation {
    /// Trained on labeled survey statements.
    #[serde(rename = "M")]
    Initial,
    /// Fine-tuned on pseudo-labeled news sentences.
    #[serde(rename = "M'")]
    FineTuned,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub parent_model: Option<String>,
    pub train_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub pseudo_positive: Option<usize>,
    pub pseudo_negative: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub vocab_hash: VocabHash,
    pub config: GruConfig,
    pub generation: Generation,
    pub init_seed: u64,
    pub init_scheme: String,
    pub trainable_embeddings: bool,
    pub provenance: Provenance,
}

/// Parameters of one GRU layer. Matrices are row-major `hidden x cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub input_dim: usize,
    pub hidden: usize,
    /// Input weights for the z, r and n gates.
    pub w: [Vec<f64>; 3],
    /// Recurrent weights for the z, r and n gates.
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

impl GruLayer {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let m = |c: usize| vec![0.0; hidden * c];
        GruLayer {
            input_dim,
            hidden,
            w: [m(input_dim), m(input_dim), m(input_dim)],
            u: [m(hidden), m(hidden), m(hidden)],
            b: [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]],
        }
    }

    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = GruLayer::zeros(input_dim, hidden);
        let bound = 1.0 / (input_dim as f64).sqrt();
        for g in 0..3 {
            for v in layer.w[g].iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
            layer.u[g] = orthogonal(hidden, rng);
        }
        layer
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(9);
        out.extend(self.w.iter().map(Vec::as_slice));
        out.extend(self.u.iter().map(Vec::as_slice));
        out.extend(self.b.iter().map(Vec::as_slice));
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(9);
        out.extend(self.w.iter_mut().map(Vec::as_mut_slice));
        out.extend(self.u.iter_mut().map(Vec::as_mut_slice));
        out.extend(self.b.iter_mut().map(Vec::as_mut_slice));
        out
    }

    fn names(idx: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(9);
        for kind in ["w", "u", "b"] {
            for g in GATE_NAMES {
                out.push(format!("layer{idx}.{kind}_{g}"));
            }
        }
        out
    }
}

/// Random orthogonal `n x n` matrix: Gram-Schmidt on Gaussian rows.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-10 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruModel {
    pub embeddings: EmbeddingTable,
    pub layers: Vec<GruLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub meta: ModelMetadata,
}

// ---------------------------------------------------------------------------
// small dense kernels

#[inline]
fn matvec_add(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[inline]
fn matvec_t_add(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, &vi) in m.chunks_exact(cols).zip(v) {
        if vi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

#[inline]
fn outer_add(g: &mut [f64], cols: usize, a: &[f64], b: &[f64]) {
    for (row, &ai) in g.chunks_exact_mut(cols).zip(a) {
        if ai != 0.0 {
            for (o, bj) in row.iter_mut().zip(b) {
                *o += ai * bj;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// gradients

/// Gradient buffers shaped like the model. Embedding gradients are sparse
/// (only rows touched by the batch).
#[derive(Clone, Debug)]
pub struct GruGrads {
    pub embeddings: BTreeMap<u32, Vec<f64>>,
    pub layers: Vec<GruLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl GruGrads {
    pub fn zeros_like(model: &GruModel) -> Self {
        GruGrads {
            embeddings: BTreeMap::new(),
            layers: model.layers.iter().map(|l| GruLayer::zeros(l.input_dim, l.hidden)).collect(),
            head_w: vec![0.0; model.head_w.len()],
            head_b: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.embeddings.clear();
        for l in &mut self.layers {
            for s in l.slices_mut() {
                s.fill(0.0);
            }
        }
        self.head_w.fill(0.0);
        self.head_b = 0.0;
    }

    pub fn squared_norm(&self) -> f64 {
        let dense: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.slices())
            .chain([self.head_w.as_slice()])
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum();
        let emb: f64 = self.embeddings.values().flatten().map(|x| x * x).sum();
        dense + emb + self.head_b * self.head_b
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for s in l.slices_mut() {
                s.iter_mut().for_each(|x| *x *= factor);
            }
        }
        self.head_w.iter_mut().for_each(|x| *x *= factor);
        self.head_b *= factor;
        for row in self.embeddings.values_mut() {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
}

// ---------------------------------------------------------------------------

impl GruModel {
    /// Freshly initialised model over `embeddings` (one row per vocabulary id).
    pub fn new(config: GruConfig, embeddings: EmbeddingTable, vocab_hash: VocabHash, seed: u64) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embedding_dim {
            return Err(Error::Config(format!(
                "embedding table has dimension {}, model expects {}",
                embeddings.dim(),
                config.embedding_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.embedding_dim;
        for _ in 0..config.layers {
            layers.push(GruLayer::init(input, config.hidden, &mut rng));
            input = config.hidden;
        }
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let head_w = (0..config.hidden).map(|_| rng.random_range(-bound..=bound)).collect();
        let trainable = embeddings.trainable;
        Ok(GruModel {
            embeddings,
            layers,
            head_w,
            head_b: 0.0,
            meta: ModelMetadata {
                vocab_hash,
                config,
                generation: Generation::Initial,
                init_seed: seed,
                init_scheme: INIT_SCHEME.to_string(),
                trainable_embeddings: trainable,
                provenance: Provenance::default(),
            },
        })
    }

    /// Model with every parameter (embeddings included) set to zero.
    pub fn zeros(config: GruConfig, vocab_rows: usize, vocab_hash: VocabHash) -> Result<Self> {
        config.validate()?;
        let emb = EmbeddingTable::from_data(vocab_rows, config.embedding_dim, vec![0.0; vocab_rows * config.embedding_dim])?;
        let mut m = GruModel::new(config, emb, vocab_hash, 0)?;
        for l in &mut m.layers {
            for s in l.slices_mut() {
                s.fill(0.0);
            }
        }
        m.head_w.fill(0.0);
        Ok(m)
    }

    pub fn config(&self) -> &GruConfig {
        &self.meta.config
    }

    pub fn n_params(&self) -> usize {
        self.embeddings.data().len()
            + self.layers.iter().flat_map(|l| l.slices()).map(|s| s.len()).sum::<usize>()
            + self.head_w.len()
            + 1
    }

    /// Token ids in reading order, truncated to `max_len`.
    pub fn sequence(&self, vocab: &Vocabulary, tokens: &[String]) -> Vec<u32> {
        let n = tokens.len().min(self.meta.config.max_len);
        let mut ids = vocab.encode(&tokens[..n]);
        if self.meta.config.direction == Direction::Reverse {
            ids.reverse();
        }
        ids
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.hash() != self.meta.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.meta.vocab_hash.to_string(),
                actual: vocab.hash().to_string(),
            });
        }
        if vocab.n_ids() != self.embeddings.rows() {
            return Err(Error::Format(format!(
                "embedding table has {} rows for a vocabulary of {} ids",
                self.embeddings.rows(),
                vocab.n_ids()
            )));
        }
        Ok(())
    }

    /// Sentiment of one sentence.
    pub fn predict(&self, vocab: &Vocabulary, sentence: &Sentence) -> Result<f64> {
        self.check_vocab(vocab)?;
        self.predict_tokens(vocab, &sentence.tokens)
    }

    /// Like [`predict`](Self::predict) but assumes the vocabulary was checked.
    pub fn predict_tokens(&self, vocab: &Vocabulary, tokens: &[String]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Data("cannot score an empty sentence".into()));
        }
        let y = self.predict_ids(&self.sequence(vocab, tokens));
        if !y.is_finite() {
            return Err(Error::Data("non-finite prediction".into()));
        }
        Ok(y)
    }

    /// Forward pass over a non-empty id sequence (already in reading order).
    pub fn predict_ids(&self, ids: &[u32]) -> f64 {
        let mut input: Vec<Vec<f64>> = ids.iter().map(|&id| self.embeddings.row(id).to_vec()).collect();
        for layer in &self.layers {
            let mut h = vec![0.0; layer.hidden];
            let mut outputs = Vec::with_capacity(input.len());
            for x in &input {
                h = step(layer, x, &h).h;
                outputs.push(h.clone());
            }
            input = outputs;
        }
        let top = input.last().expect("non-empty sequence");
        self.head_w.iter().zip(top).map(|(w, h)| w * h).sum::<f64>() + self.head_b
    }

    /// Adds `scale * d(loss)/d(theta)` to `grads` for the squared error
    /// `(y - target)^2` and returns the prediction `y`.
    pub fn accumulate_gradient(&self, ids: &[u32], target: f64, scale: f64, grads: &mut GruGrads) -> f64 {
        assert!(!ids.is_empty(), "empty sequence");
        let t_len = ids.len();
        // forward with caches
        let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut h = vec![0.0; layer.hidden];
            let mut steps = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let x: &[f64] = if li == 0 {
                    self.embeddings.row(ids[t])
                } else {
                    &caches[li - 1][t].h
                };
                let c = step(layer, x, &h);
                h = c.h.clone();
                steps.push(c);
            }
            caches.push(steps);
        }
        let top = &caches.last().expect("at least one layer")[t_len - 1].h;
        let y = self.head_w.iter().zip(top).map(|(w, h)| w * h).sum::<f64>() + self.head_b;
        let dy = 2.0 * (y - target) * scale;

        for (g, h) in grads.head_w.iter_mut().zip(top) {
            *g += dy * h;
        }
        grads.head_b += dy;

        // external gradient arriving at each step's output, top layer first
        let mut ext: Vec<Vec<f64>> = vec![vec![0.0; self.meta.config.hidden]; t_len];
        for (e, w) in ext[t_len - 1].iter_mut().zip(&self.head_w) {
            *e = dy * w;
        }
        let want_input_grad = |li: usize| li > 0 || self.embeddings.trainable;

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = &mut grads.layers[li];
            let hidden = layer.hidden;
            let in_dim = layer.input_dim;
            let mut dh_next = vec![0.0; hidden];
            let mut dx_all: Vec<Vec<f64>> = Vec::new();
            if want_input_grad(li) {
                dx_all = vec![vec![0.0; in_dim]; t_len];
            }
            let mut dan = vec![0.0; hidden];
            let mut daz = vec![0.0; hidden];
            let mut dar = vec![0.0; hidden];
            let mut d_rh = vec![0.0; hidden];
            for t in (0..t_len).rev() {
                let c = &caches[li][t];
                let x: &[f64] = if li == 0 {
                    self.embeddings.row(ids[t])
                } else {
                    &caches[li - 1][t].h
                };
                let mut dh_prev = vec![0.0; hidden];
                for k in 0..hidden {
                    let dh = ext[t][k] + dh_next[k];
                    let dn = dh * c.z[k];
                    let dz = dh * (c.n[k] - c.h_prev[k]);
                    dh_prev[k] = dh * (1.0 - c.z[k]);
                    dan[k] = dn * (1.0 - c.n[k] * c.n[k]);
                    daz[k] = dz * c.z[k] * (1.0 - c.z[k]);
                }
                d_rh.fill(0.0);
                matvec_t_add(&layer.u[GATE_N], hidden, &dan, &mut d_rh);
                for k in 0..hidden {
                    let dr = d_rh[k] * c.h_prev[k];
                    dh_prev[k] += d_rh[k] * c.r[k];
                    dar[k] = dr * c.r[k] * (1.0 - c.r[k]);
                }

                outer_add(&mut g.w[GATE_N], in_dim, &dan, x);
                outer_add(&mut g.u[GATE_N], hidden, &dan, &c.rh);
                outer_add(&mut g.w[GATE_Z], in_dim, &daz, x);
                outer_add(&mut g.u[GATE_Z], hidden, &daz, &c.h_prev);
                outer_add(&mut g.w[GATE_R], in_dim, &dar, x);
                outer_add(&mut g.u[GATE_R], hidden, &dar, &c.h_prev);
                for k in 0..hidden {
                    g.b[GATE_N][k] += dan[k];
                    g.b[GATE_Z][k] += daz[k];
                    g.b[GATE_R][k] += dar[k];
                }

                matvec_t_add(&layer.u[GATE_Z], hidden, &daz, &mut dh_prev);
                matvec_t_add(&layer.u[GATE_R], hidden, &dar, &mut dh_prev);
                if !dx_all.is_empty() {
                    let dx = &mut dx_all[t];
                    matvec_t_add(&layer.w[GATE_Z], in_dim, &daz, dx);
                    matvec_t_add(&layer.w[GATE_R], in_dim, &dar, dx);
                    matvec_t_add(&layer.w[GATE_N], in_dim, &dan, dx);
                }
                dh_next = dh_prev;
            }
            if li > 0 {
                ext = dx_all;
            } else if !dx_all.is_empty() {
                for (t, dx) in dx_all.into_iter().enumerate() {
                    let row = grads
                        .embeddings
                        .entry(ids[t])
                        .or_insert_with(|| vec![0.0; in_dim]);
                    for (r, d) in row.iter_mut().zip(dx) {
                        *r += d;
                    }
                }
            }
        }
        y
    }

    // -- flat parameter access (gradient checking, serialization) ----------

    pub(crate) fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embeddings".to_string(), self.embeddings.data())];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(GruLayer::names(i).into_iter().zip(l.slices()));
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), std::slice::from_ref(&self.head_b)));
        out
    }

    pub(crate) fn named_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![("embeddings".to_string(), self.embeddings.data_mut())];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(GruLayer::names(i).into_iter().zip(l.slices_mut()));
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), std::slice::from_mut(&mut self.head_b)));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_slices().iter().all(|(_, s)| s.iter().all(|x| x.is_finite()))
    }

    // -- persistence -------------------------------------------------------

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new("gru", self.meta.vocab_hash, &self.meta)?;
        c.push(Tensor::f64(
            "embeddings",
            vec![self.embeddings.rows(), self.embeddings.dim()],
            self.embeddings.data().to_vec(),
        ));
        for (i, l) in self.layers.iter().enumerate() {
            let names = GruLayer::names(i);
            let shapes = [
                vec![l.hidden, l.input_dim],
                vec![l.hidden, l.input_dim],
                vec![l.hidden, l.input_dim],
                vec![l.hidden, l.hidden],
                vec![l.hidden, l.hidden],
                vec![l.hidden, l.hidden],
                vec![l.hidden],
                vec![l.hidden],
                vec![l.hidden],
            ];
            for ((name, shape), data) in names.into_iter().zip(shapes).zip(l.slices()) {
                c.push(Tensor::f64(name, shape, data.to_vec()));
            }
        }
        c.push(Tensor::f64("head.w", vec![self.head_w.len()], self.head_w.clone()));
        c.push(Tensor::f64("head.b", vec![1], vec![self.head_b]));
        Ok(c)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("gru")?;
        let meta: ModelMetadata = c.header()?;
        if meta.vocab_hash != c.vocab_hash {
            return Err(Error::Format("header vocabulary hash disagrees with container".into()));
        }
        meta.config.validate()?;
        let cfg = &meta.config;
        let emb_shape = c.shape("embeddings")?.to_vec();
        if emb_shape.len() != 2 || emb_shape[1] != cfg.embedding_dim {
            return Err(Error::Format(format!("bad embedding shape {emb_shape:?}")));
        }
        let mut embeddings =
            EmbeddingTable::from_data(emb_shape[0], emb_shape[1], c.f64s("embeddings", &emb_shape)?)?;
        embeddings.trainable = meta.trainable_embeddings;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut input = cfg.embedding_dim;
        for i in 0..cfg.layers {
            let mut l = GruLayer::zeros(input, cfg.hidden);
            let names = GruLayer::names(i);
            for (name, slot) in names.iter().zip(l.slices_mut()) {
                let shape: Vec<usize> = if slot.len() == cfg.hidden {
                    vec![cfg.hidden]
                } else {
                    vec![cfg.hidden, slot.len() / cfg.hidden]
                };
                slot.copy_from_slice(&c.f64s(name, &shape)?);
            }
            layers.push(l);
            input = cfg.hidden;
        }
        let head_w = c.f64s("head.w", &[cfg.hidden])?;
        let head_b = c.f64s("head.b", &[1])?[0];
        let model = GruModel {
            embeddings,
            layers,
            head_w,
            head_b,
            meta,
        };
        if !model.all_finite() {
            return Err(Error::Format("model contains non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Loads and checks the model against the vocabulary it will be used with.
    pub fn load_for(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let c = Container::load(path)?;
        c.check_vocab(vocab.hash())?;
        let m = Self::from_container(&c)?;
        m.check_vocab(vocab)?;
        Ok(m)
    }

    /// Content id: leading hex digits of the SHA-256 of the serialized model.
    pub fn id(&self) -> String {
        let bytes = self.to_bytes().expect("model header serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }
}

fn step(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> StepCache {
    let hidden = layer.hidden;
    let in_dim = layer.input_dim;
    let mut az = layer.b[GATE_Z].clone();
    let mut ar = layer.b[GATE_R].clone();
    let mut an = layer.b[GATE_N].clone();
    matvec_add(&layer.w[GATE_Z], in_dim, x, &mut az);
    matvec_add(&layer.u[GATE_Z], hidden, h_prev, &mut az);
    matvec_add(&layer.w[GATE_R], in_dim, x, &mut ar);
    matvec_add(&layer.u[GATE_R], hidden, h_prev, &mut ar);
    let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
    let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    matvec_add(&layer.w[GATE_N], in_dim, x, &mut an);
    matvec_add(&layer.u[GATE_N], hidden, &rh, &mut an);
    let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
    let h = (0..hidden)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * n[k])
        .collect();
    StepCache {
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rh,
        h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(hidden: usize, layers: usize) -> GruConfig {
        GruConfig {
            embedding_dim: 1,
            hidden,
            layers,
            direction: Direction::Forward,
            max_len: 16,
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let m = GruModel::zeros(tiny_config(3, 2), 4, VocabHash(0)).unwrap();
        assert_eq!(m.predict_ids(&[0, 1, 2, 3]), 0.0);
    }

    /// 1-unit, 1-layer cell with hand-set weights on a two-token input.
    #[test]
    fn hand_evaluated_cell() {
        let mut m = GruModel::zeros(tiny_config(1, 1), 2, VocabHash(0)).unwrap();
        m.embeddings.data_mut().copy_from_slice(&[1.0, -2.0]);
        let l = &mut m.layers[0];
        l.w = [vec![0.5], vec![-1.0], vec![2.0]];
        l.u = [vec![0.3], vec![0.7], vec![-0.4]];
        l.b = [vec![0.1], vec![0.2], vec![-0.1]];
        m.head_w = vec![1.5];
        m.head_b = 0.25;

        // independent scalar evaluation of the cell equations
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let cell = |x: f64, h: f64| {
            let z = sig(0.5 * x + 0.3 * h + 0.1);
            let r = sig(-1.0 * x + 0.7 * h + 0.2);
            let n = (2.0 * x - 0.4 * (r * h) - 0.1).tanh();
            (1.0 - z) * h + z * n
        };
        let h1 = cell(1.0, 0.0);
        let h2 = cell(-2.0, h1);
        let expected = 1.5 * h2 + 0.25;
        // same expression evaluated in Python
        assert!((h1 - 0.6174007450894997).abs() < 1e-14, "h1 = {h1}");
        assert!((expected - 0.37919198383961916).abs() < 1e-14);
        assert!((m.predict_ids(&[0, 1]) - expected).abs() < 1e-15);
    }

    #[test]
    fn reverse_direction_reads_backwards() {
        let corpus = [Sentence::from_text("d", 0, chrono::NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), "a b c")];
        let vocab = Vocabulary::build(&corpus, 10).unwrap();
        let mut cfg = tiny_config(2, 1);
        cfg.direction = Direction::Reverse;
        let emb = EmbeddingTable::random(vocab.n_ids(), 1, 1);
        let m = GruModel::new(cfg, emb, vocab.hash(), 1).unwrap();
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(m.sequence(&vocab, &toks), vec![vocab.id("c"), vocab.id("b"), vocab.id("a")]);
    }

    #[test]
    fn prediction_is_deterministic_and_errors_on_empty() {
        let corpus = [Sentence::from_text("d", 0, chrono::NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), "up down flat")];
        let vocab = Vocabulary::build(&corpus, 10).unwrap();
        let mut cfg = tiny_config(4, 2);
        cfg.embedding_dim = 3;
        let m = GruModel::new(cfg, EmbeddingTable::random(vocab.n_ids(), 3, 2), vocab.hash(), 3).unwrap();
        let s = &corpus[0];
        let a = m.predict(&vocab, s).unwrap();
        let b = m.predict(&vocab, s).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let empty = Sentence::new("d", 1, s.timestamp, vec![]);
        assert!(matches!(m.predict(&vocab, &empty), Err(Error::Data(_))));
    }

    #[test]
    fn orthogonal_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let q = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn container_round_trip_and_hash_check() {
        let corpus = [Sentence::from_text("d", 0, chrono::NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), "x y")];
        let vocab = Vocabulary::build(&corpus, 10).unwrap();
        let mut cfg = tiny_config(3, 2);
        cfg.embedding_dim = 2;
        let m = GruModel::new(cfg, EmbeddingTable::random(vocab.n_ids(), 2, 9), vocab.hash(), 4).unwrap();
        let back = GruModel::from_container(&Container::from_bytes(&m.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.id(), m.id());

        let other = Vocabulary::build(&[Sentence::from_text("d", 0, corpus[0].timestamp, "x z")], 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        assert!(GruModel::load_for(&p, &vocab).is_ok());
        assert!(matches!(GruModel::load_for(&p, &other), Err(Error::VocabMismatch { .. })));
    }
}
