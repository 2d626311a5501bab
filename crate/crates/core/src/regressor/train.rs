//! Minibatch training of [`GruModel`] with Adam, gradient checking and MSE
//! evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gru::{GruGrads, GruModel};
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::features::Vocabulary;

/// Examples per gradient shard. Shards are summed in a fixed order, so the
/// result does not depend on the number of worker threads.
const SHARD: usize = 8;
/// Batches are drawn from pools of this many batches sorted by length.
const POOL_BATCHES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.adam_eps > 0.0
            && self.clip_norm > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !positive || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Entry 0 describes the model before any update.
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: GruModel,
    pub log: TrainLog,
}

/// Encoded training example: ids in reading order and the regression target.
#[derive(Clone, Debug)]
pub(crate) struct Encoded {
    ids: Vec<u32>,
    target: f64,
}

fn encode(model: &GruModel, vocab: &Vocabulary, examples: &[LabeledExample]) -> Vec<Encoded> {
    let mut skipped = 0;
    let out: Vec<Encoded> = examples
        .iter()
        .filter_map(|ex| {
            if ex.sentence.is_empty() {
                skipped += 1;
                None
            } else {
                Some(Encoded {
                    ids: model.sequence(vocab, &ex.sentence.tokens),
                    target: ex.target(),
                })
            }
        })
        .collect();
    if skipped > 0 {
        log::warn!("skipped {skipped} empty examples");
    }
    out
}

fn mse_of(model: &GruModel, data: &[Encoded]) -> f64 {
    let sum: f64 = data
        .par_iter()
        .map(|e| (model.predict_ids(&e.ids) - e.target).powi(2))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    sum / data.len() as f64
}

/// Length-bucketed batches: shuffle, sort pools of batches by length, then
/// shuffle the batch order.
fn make_batches(data: &[Encoded], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch * POOL_BATCHES) {
        pool.sort_by_key(|&i| data[i].ids.len());
        batches.extend(pool.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

impl GruGrads {
    fn add_assign(&mut self, other: &GruGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.slices_mut().into_iter().zip(b.slices()) {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
        }
        self.head_w.iter_mut().zip(&other.head_w).for_each(|(p, q)| *p += q);
        self.head_b += other.head_b;
        for (id, row) in &other.embeddings {
            let dst = self.embeddings.entry(*id).or_insert_with(|| vec![0.0; row.len()]);
            dst.iter_mut().zip(row).for_each(|(p, q)| *p += q);
        }
    }
}

/// Batch gradient of the mean squared error; returns the batch loss.
fn batch_gradient(model: &GruModel, data: &[Encoded], batch: &[usize], grads: &mut GruGrads) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let shards: Vec<(GruGrads, f64)> = batch
        .par_chunks(SHARD)
        .map(|shard| {
            let mut g = GruGrads::zeros_like(model);
            let mut loss = 0.0;
            for &i in shard {
                let e = &data[i];
                let y = model.accumulate_gradient(&e.ids, e.target, scale, &mut g);
                loss += (y - e.target).powi(2);
            }
            (g, loss)
        })
        .collect();
    grads.clear();
    let mut loss = 0.0;
    for (g, l) in &shards {
        grads.add_assign(g);
        loss += l;
    }
    loss * scale
}

/// Adam state. Embedding rows are updated lazily: only rows with a gradient
/// in the current batch move, using the global step for bias correction.
struct Adam {
    cfg: TrainConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    emb_m: Vec<f64>,
    emb_v: Vec<f64>,
}

impl Adam {
    fn new(model: &GruModel, cfg: &TrainConfig) -> Self {
        let dense: Vec<usize> = dense_slices(model).iter().map(|s| s.len()).collect();
        let emb = if model.embeddings.trainable { model.embeddings.data().len() } else { 0 };
        Adam {
            cfg: cfg.clone(),
            step: 0,
            m: dense.iter().map(|&n| vec![0.0; n]).collect(),
            v: dense.iter().map(|&n| vec![0.0; n]).collect(),
            emb_m: vec![0.0; emb],
            emb_v: vec![0.0; emb],
        }
    }

    fn update(&mut self, model: &mut GruModel, grads: &GruGrads) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.cfg.learning_rate;
        let eps = self.cfg.adam_eps;
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let grad_slices = dense_grad_slices(grads);
        for (((params, g), m), v) in dense_slices_mut(model)
            .into_iter()
            .zip(grad_slices)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..params.len() {
                apply(&mut params[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        if model.embeddings.trainable {
            let dim = model.embeddings.dim();
            for (&id, g) in &grads.embeddings {
                let base = id as usize * dim;
                let row = model.embeddings.row_mut(id);
                for k in 0..dim {
                    apply(&mut row[k], g[k], &mut self.emb_m[base + k], &mut self.emb_v[base + k]);
                }
            }
        }
    }
}

fn dense_slices(model: &GruModel) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = model.layers.iter().flat_map(|l| l.slices()).collect();
    out.push(&model.head_w);
    out.push(std::slice::from_ref(&model.head_b));
    out
}

fn dense_slices_mut(model: &mut GruModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = model.layers.iter_mut().flat_map(|l| l.slices_mut()).collect();
    out.push(&mut model.head_w);
    out.push(std::slice::from_mut(&mut model.head_b));
    out
}

fn dense_grad_slices(g: &GruGrads) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = g.layers.iter().flat_map(|l| l.slices()).collect();
    out.push(&g.head_w);
    out.push(std::slice::from_ref(&g.head_b));
    out
}

/// Trains `model` on `train`, tracking validation MSE on `validation` (may be
/// empty, in which case train MSE selects the checkpoint).
///
/// Returns the checkpoint with the lowest selection MSE, including the initial
/// parameters (epoch 0).
pub fn train(
    mut model: GruModel,
    vocab: &Vocabulary,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.check_vocab(vocab)?;
    let data = encode(&model, vocab, train);
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let val = encode(&model, vocab, validation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model, cfg);
    let mut grads = GruGrads::zeros_like(&model);

    let evaluate = |m: &GruModel| -> EpochLog {
        EpochLog {
            epoch: 0,
            train_mse: mse_of(m, &data),
            validation_mse: (!val.is_empty()).then(|| mse_of(m, &val)),
        }
    };
    let select = |e: &EpochLog| e.validation_mse.unwrap_or(e.train_mse);

    let mut log = TrainLog {
        epochs: vec![evaluate(&model)],
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut best_score = select(&log.epochs[0]);
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        for (bi, batch) in make_batches(&data, cfg.batch_size, &mut rng).iter().enumerate() {
            let loss = batch_gradient(&model, &data, batch, &mut grads);
            let sq = grads.squared_norm();
            if !loss.is_finite() || !sq.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    detail: format!("loss {loss}, gradient norm^2 {sq}"),
                });
            }
            let norm = sq.sqrt();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.update(&mut model, &grads);
        }
        let mut entry = evaluate(&model);
        entry.epoch = epoch;
        if !entry.train_mse.is_finite() || !model.all_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                detail: "non-finite parameters after epoch".into(),
            });
        }
        log::info!(
            "epoch {epoch}: train mse {:.5}{}",
            entry.train_mse,
            entry.validation_mse.map(|v| format!(", validation mse {v:.5}")).unwrap_or_default()
        );
        let score = select(&entry);
        log.epochs.push(entry);
        if score < best_score {
            best_score = score;
            best = model.clone();
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    best.meta.provenance.train_examples = data.len();
    best.meta.provenance.epochs_run = log.epochs.len() - 1;
    best.meta.provenance.best_epoch = Some(log.best_epoch);
    Ok(TrainOutcome { model: best, log })
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub n_examples: usize,
    /// Mean prediction per gold label value.
    pub per_label_mean: BTreeMap<i8, f64>,
}

impl EvalReport {
    /// Report over `(prediction, label)` pairs.
    pub fn from_pairs(pairs: &[(f64, i8)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        let mse = pairs.iter().map(|&(p, l)| (p - l as f64).powi(2)).sum::<f64>() / pairs.len() as f64;
        let mut sums: BTreeMap<i8, (f64, usize)> = BTreeMap::new();
        for &(p, l) in pairs {
            let e = sums.entry(l).or_insert((0.0, 0));
            e.0 += p;
            e.1 += 1;
        }
        Ok(EvalReport {
            mse,
            n_examples: pairs.len(),
            per_label_mean: sums.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect(),
        })
    }
}

/// Predictions of `model` for each example, in order.
pub fn predict_all(model: &GruModel, vocab: &Vocabulary, examples: &[LabeledExample]) -> Result<Vec<f64>> {
    model.check_vocab(vocab)?;
    examples
        .par_iter()
        .map(|ex| model.predict_tokens(vocab, &ex.sentence.tokens))
        .collect()
}

pub fn evaluate(model: &GruModel, vocab: &Vocabulary, examples: &[LabeledExample]) -> Result<EvalReport> {
    let preds = predict_all(model, vocab, examples)?;
    let pairs: Vec<(f64, i8)> = preds.into_iter().zip(examples).map(|(p, e)| (p, e.label.value())).collect();
    EvalReport::from_pairs(&pairs)
}

// ---------------------------------------------------------------------------
// gradient checking

/// Which parameters [`gradient_check`] perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSelection {
    All,
    /// Only the output head (weights and bias).
    HeadOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub n_checked: usize,
}

/// Relative errors below this denominator are measured against it instead,
/// so parameters with (near-)zero gradient do not blow up the ratio.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares BPTT gradients of the squared error on one sequence against
/// central finite differences `(L(t+eps) - L(t-eps)) / 2 eps`.
pub fn gradient_check(model: &GruModel, ids: &[u32], target: f64, epsilon: f64, which: ParamSelection) -> GradCheckReport {
    let mut analytic = GruGrads::zeros_like(model);
    let mut probe = model.clone();
    probe.embeddings.trainable = true;
    probe.accumulate_gradient(ids, target, 1.0, &mut analytic);

    // flatten the analytic gradient in the same order as named_slices
    let mut flat: Vec<(String, Vec<f64>)> = Vec::new();
    let dim = model.embeddings.dim();
    let mut emb = vec![0.0; model.embeddings.data().len()];
    for (&id, row) in &analytic.embeddings {
        emb[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(row);
    }
    flat.push(("embeddings".into(), emb));
    for (name, s) in model.named_slices().into_iter().skip(1).zip(
        analytic
            .layers
            .iter()
            .flat_map(|l| l.slices())
            .chain([analytic.head_w.as_slice(), std::slice::from_ref(&analytic.head_b)]),
    ) {
        flat.push((name.0, s.to_vec()));
    }

    let loss = |m: &GruModel| (m.predict_ids(ids) - target).powi(2);
    let mut worst = (0.0f64, String::new());
    let mut n_checked = 0;
    for (si, (name, grad)) in flat.iter().enumerate() {
        if which == ParamSelection::HeadOnly && !name.starts_with("head.") {
            continue;
        }
        for (pi, &a) in grad.iter().enumerate() {
            let orig = probe.named_slices()[si].1[pi];
            probe.named_slices_mut()[si].1[pi] = orig + epsilon;
            let up = loss(&probe);
            probe.named_slices_mut()[si].1[pi] = orig - epsilon;
            let down = loss(&probe);
            probe.named_slices_mut()[si].1[pi] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            n_checked += 1;
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel, format!("{name}[{pi}]"));
            }
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        n_checked,
    }
}
