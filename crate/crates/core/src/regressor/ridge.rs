//! Ridge regression on sparse tf-idf rows.
//!
//! Minimises `sum_i (y_i - w.x_i - b)^2 + lambda |w|^2` with an unpenalised
//! intercept. Duplicating every training row is therefore the same as a single
//! copy fitted with `lambda / 2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::corpus::{LabeledExample, Sentence};
use crate::error::{Error, Result};
use crate::features::{tfidf, TfidfConfig, VocabHash, Vocabulary};

use super::train::EvalReport;

/// Required relative residual of the normal equations after the solve.
pub const NORMAL_EQUATION_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub vocab_hash: VocabHash,
}

#[derive(Serialize, Deserialize)]
struct RidgeHeader {
    lambda: f64,
    intercept: f64,
    dim: usize,
}

/// Solution of the centred ridge problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub relative_residual: f64,
}

struct Centered<'a> {
    rows: &'a [Vec<(u32, f64)>],
    means: Vec<f64>,
}

impl Centered<'_> {
    /// Xc v
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let shift: f64 = self.means.iter().zip(v).map(|(m, x)| m * x).sum();
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, x)| x * v[j as usize]).sum::<f64>() - shift)
            .collect()
    }

    /// Xc^T u
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.means.len()];
        for (r, &ui) in self.rows.iter().zip(u) {
            for &(j, x) in r {
                out[j as usize] += x * ui;
            }
        }
        let total: f64 = u.iter().sum();
        for (o, m) in out.iter_mut().zip(&self.means) {
            *o -= m * total;
        }
        out
    }

    /// (Xc^T Xc + lambda I) v
    fn normal(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        let mut out = self.apply_t(&self.apply(v));
        for (o, x) in out.iter_mut().zip(v) {
            *o += lambda * x;
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits ridge weights over `dim` features by conjugate gradients on the
/// centred normal equations.
pub fn fit_rows(rows: &[Vec<(u32, f64)>], targets: &[f64], dim: usize, lambda: f64) -> Result<RidgeSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge lambda must be positive, got {lambda}")));
    }
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::Data("ridge needs a non-empty training set with one target per row".into()));
    }
    let n = rows.len() as f64;
    let mut means = vec![0.0; dim];
    for r in rows {
        for &(j, x) in r {
            if j as usize >= dim {
                return Err(Error::Data(format!("feature id {j} outside dimension {dim}")));
            }
            means[j as usize] += x / n;
        }
    }
    let y_mean = targets.iter().sum::<f64>() / n;
    let yc: Vec<f64> = targets.iter().map(|y| y - y_mean).collect();
    let op = Centered { rows, means };
    let rhs = op.apply_t(&yc);
    let rhs_norm = dot(&rhs, &rhs).sqrt();

    let mut w = vec![0.0; dim];
    let mut iterations = 0;
    if rhs_norm > 0.0 {
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let max_iter = 2 * dim + 100;
        while iterations < max_iter && rr.sqrt() > 1e-14 * rhs_norm {
            let ap = op.normal(&p, lambda);
            let alpha = rr / dot(&p, &ap);
            for i in 0..dim {
                w[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..dim {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
            iterations += 1;
        }
    }
    // residual from scratch, not the recurrence
    let aw = op.normal(&w, lambda);
    let res: f64 = aw.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let relative_residual = if rhs_norm > 0.0 { res / rhs_norm } else { res };
    if !(relative_residual < NORMAL_EQUATION_TOL) {
        return Err(Error::NotConverged {
            iterations,
            violation: relative_residual,
        });
    }
    let intercept = y_mean - dot(&op.means, &w);
    Ok(RidgeSolution {
        weights: w,
        intercept,
        iterations,
        relative_residual,
    })
}

impl RidgeModel {
    /// Fits on tf-idf vectors (no L2 normalisation, OOV dropped) of the examples.
    pub fn fit(vocab: &Vocabulary, examples: &[LabeledExample], lambda: f64) -> Result<Self> {
        let cfg = TfidfConfig::ridge();
        let rows: Vec<Vec<(u32, f64)>> = examples
            .iter()
            .map(|e| tfidf(&e.sentence.tokens, vocab, &cfg).entries().to_vec())
            .collect();
        let targets: Vec<f64> = examples.iter().map(LabeledExample::target).collect();
        let sol = fit_rows(&rows, &targets, vocab.n_ids(), lambda)?;
        log::info!(
            "ridge solved in {} iterations, relative residual {:.2e}",
            sol.iterations,
            sol.relative_residual
        );
        Ok(RidgeModel {
            weights: sol.weights,
            intercept: sol.intercept,
            lambda,
            vocab_hash: vocab.hash(),
        })
    }

    pub fn predict(&self, vocab: &Vocabulary, sentence: &Sentence) -> Result<f64> {
        if vocab.hash() != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.to_string(),
                actual: vocab.hash().to_string(),
            });
        }
        let v = tfidf(&sentence.tokens, vocab, &TfidfConfig::ridge());
        Ok(self.intercept + v.entries().iter().map(|&(j, x)| self.weights[j as usize] * x).sum::<f64>())
    }

    pub fn evaluate(&self, vocab: &Vocabulary, examples: &[LabeledExample]) -> Result<EvalReport> {
        let pairs = examples
            .iter()
            .map(|e| Ok((self.predict(vocab, &e.sentence)?, e.label.value())))
            .collect::<Result<Vec<_>>>()?;
        EvalReport::from_pairs(&pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = RidgeHeader {
            lambda: self.lambda,
            intercept: self.intercept,
            dim: self.weights.len(),
        };
        let mut c = Container::new("ridge", self.vocab_hash, &header)?;
        c.push(Tensor::f64("weights", vec![self.weights.len()], self.weights.clone()));
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind("ridge")?;
        let h: RidgeHeader = c.header()?;
        Ok(RidgeModel {
            weights: c.f64s("weights", &[h.dim])?,
            intercept: h.intercept,
            lambda: h.lambda,
            vocab_hash: c.vocab_hash,
        })
    }
}
