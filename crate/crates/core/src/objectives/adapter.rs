//! Ligand-conditioned cross-attention over candidate cavities.
//!
//! Attention logits are `e_lᵀ K e_c / T` with a learnable key map `K`
//! initialized to the identity, so an untrained adapter computes plain
//! dot-product attention. The ligand side gets an affine projection, also
//! initialized to the identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pair_term, softmax, LossParams, PairLabel};
use crate::encoder::{axpy, dot, Dense, Matrix, ModelParams, ParamSet, PreparedCloud, TensorView};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    /// Ligand-side projection, `D × D`.
    pub projection: Dense,
    /// Cavity-side key map, `D × D`.
    pub key: Matrix,
    /// Softmax temperature, fixed during training.
    pub temperature: f64,
}

impl AdapterParams {
    pub fn identity(dim: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "adapter temperature must be > 0, got {temperature}"
            )));
        }
        let mut projection = Dense::zeros(dim, dim);
        projection.weight = Matrix::identity(dim);
        Ok(AdapterParams {
            projection,
            key: Matrix::identity(dim),
            temperature,
        })
    }

    pub fn zeros_like(&self) -> Self {
        AdapterParams {
            projection: Dense::zeros(self.projection.weight.rows, self.projection.weight.cols),
            key: Matrix::zeros(self.key.rows, self.key.cols),
            temperature: self.temperature,
        }
    }

    pub fn dim(&self) -> usize {
        self.key.rows
    }
}

impl ParamSet for AdapterParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView {
                name: "projection.weight".into(),
                shape: self.projection.weight.shape().to_vec(),
                values: &self.projection.weight.data,
            },
            TensorView {
                name: "projection.bias".into(),
                shape: vec![self.projection.bias.len()],
                values: &self.projection.bias,
            },
            TensorView {
                name: "key".into(),
                shape: self.key.shape().to_vec(),
                values: &self.key.data,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.projection.weight.data,
            &mut self.projection.bias,
            &mut self.key.data,
        ]
    }
}

fn check_dims(ligand: &[f64], cavities: &[Vec<f64>], ap: &AdapterParams) -> Result<()> {
    if cavities.is_empty() {
        return Err(Error::EmptyInput("attention over zero cavities"));
    }
    let d = ap.dim();
    if ligand.len() != d || cavities.iter().any(|c| c.len() != d) {
        return Err(Error::ShapeMismatch(format!(
            "adapter expects {d}-dimensional embeddings"
        )));
    }
    Ok(())
}

fn attention_logits(ligand: &[f64], cavities: &[Vec<f64>], ap: &AdapterParams) -> Vec<f64> {
    cavities
        .iter()
        .map(|c| dot(ligand, &ap.key.mul_vec(c)) / ap.temperature)
        .collect()
}

/// Attention weights over `cavities` and the weighted (not re-normalized)
/// cavity embedding.
pub fn attention(ligand: &[f64], cavities: &[Vec<f64>], ap: &AdapterParams) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(ligand, cavities, ap)?;
    let weights = softmax(&attention_logits(ligand, cavities, ap));
    let mut agg = vec![0.0; ap.dim()];
    for (w, c) in weights.iter().zip(cavities) {
        axpy(*w, c, &mut agg);
    }
    Ok((weights, agg))
}

pub fn project_ligand(ligand: &[f64], ap: &AdapterParams) -> Vec<f64> {
    ap.projection.forward(ligand)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    OneHot,
    Soft,
}

/// Target distribution over an example's candidate cavities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTarget {
    pub probs: Vec<f64>,
    pub kind: SupervisionKind,
}

impl SupervisionTarget {
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::ShapeMismatch(format!("one-hot index {index} out of {len}")));
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(SupervisionTarget {
            probs,
            kind: SupervisionKind::OneHot,
        })
    }

    pub fn soft(probs: Vec<f64>) -> Result<Self> {
        let t = SupervisionTarget {
            probs,
            kind: SupervisionKind::Soft,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if self.probs.is_empty() || self.probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("supervision is not a distribution (sum {sum})")));
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `Σ_{s_i > 0} s_i · ln(s_i / a_i)`.
pub fn kl_loss(target: &SupervisionTarget, weights: &[f64]) -> Result<f64> {
    if target.probs.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} entries, attention has {}",
            target.probs.len(),
            weights.len()
        )));
    }
    Ok(target
        .probs
        .iter()
        .zip(weights)
        .filter(|(s, _)| **s > 0.0)
        .map(|(s, a)| s * (s / a).ln())
        .sum())
}

/// Softmax of the frozen model's raw scores `t·dot + b` over cavities.
pub fn soft_labels_from_frozen_model(
    ligand: &[f64],
    cavities: &[Vec<f64>],
    lp: &LossParams,
) -> Result<SupervisionTarget> {
    if cavities.is_empty() {
        return Err(Error::EmptyInput("soft labels over zero cavities"));
    }
    let logits: Vec<f64> = cavities.iter().map(|c| lp.logit(dot(ligand, c))).collect();
    Ok(SupervisionTarget {
        probs: softmax(&logits),
        kind: SupervisionKind::Soft,
    })
}

/// One-hot target on the highest-IoU cavity. Ties go to the larger
/// `size_score`, then to the earlier rank.
pub fn complex_supervision(ious: &[f64], size_scores: &[f64]) -> Result<SupervisionTarget> {
    if ious.is_empty() || ious.len() != size_scores.len() {
        return Err(Error::ShapeMismatch(
            "complex supervision needs one size per IoU".into(),
        ));
    }
    let mut best = 0;
    for i in 1..ious.len() {
        let better = ious[i] > ious[best] || (ious[i] == ious[best] && size_scores[i] > size_scores[best]);
        if better {
            best = i;
        }
    }
    SupervisionTarget::one_hot(ious.len(), best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrigin {
    Complex,
    Activity,
}

/// Phase-2 example before encoding.
#[derive(Debug, Clone)]
pub struct AggExample {
    pub ligand: PreparedCloud,
    pub cavities: Vec<PreparedCloud>,
    pub supervision: SupervisionTarget,
    pub origin: SampleOrigin,
}

/// Phase-2 example with frozen-encoder embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AggEmbedded {
    pub ligand: Vec<f64>,
    pub cavities: Vec<Vec<f64>>,
    pub supervision: SupervisionTarget,
    pub origin: SampleOrigin,
}

impl AggExample {
    pub fn validate(&self) -> Result<()> {
        validate_example(self.cavities.len(), &self.supervision, self.origin)
    }

    pub fn embed(&self, params: &ModelParams) -> Result<AggEmbedded> {
        self.validate()?;
        let cavity = params.cavity_encoder();
        Ok(AggEmbedded {
            ligand: params.ligand_encoder.forward(&self.ligand)?.embedding.0,
            cavities: self
                .cavities
                .iter()
                .map(|c| Ok(cavity.forward(c)?.embedding.0))
                .collect::<Result<_>>()?,
            supervision: self.supervision.clone(),
            origin: self.origin,
        })
    }
}

fn validate_example(n_cavities: usize, supervision: &SupervisionTarget, origin: SampleOrigin) -> Result<()> {
    if n_cavities == 0 {
        return Err(Error::EmptyInput("aggregation example without cavities"));
    }
    if supervision.probs.len() != n_cavities {
        return Err(Error::ShapeMismatch(format!(
            "{} cavities but {} target entries",
            n_cavities,
            supervision.probs.len()
        )));
    }
    if origin == SampleOrigin::Complex && supervision.kind != SupervisionKind::OneHot {
        return Err(Error::Data("complex-origin examples need one-hot targets".into()));
    }
    supervision.validate()
}

/// Aggregation loss over frozen embeddings and its gradient with respect to
/// the adapter. Encoder and loss parameters receive no gradient in this phase.
pub fn agg_loss_embedded(
    batch: &[AggEmbedded],
    ap: &AdapterParams,
    lp: &LossParams,
    lambda: f64,
) -> Result<(f64, AdapterParams)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidBatch(format!(
            "aggregation needs at least 2 examples, got {n}"
        )));
    }
    for ex in batch {
        validate_example(ex.cavities.len(), &ex.supervision, ex.origin)?;
        check_dims(&ex.ligand, &ex.cavities, ap)?;
    }
    let d = ap.dim();

    let attn: Vec<(Vec<f64>, Vec<f64>)> = batch
        .iter()
        .map(|ex| attention(&ex.ligand, &ex.cavities, ap))
        .collect::<Result<_>>()?;
    let proj: Vec<Vec<f64>> = batch.iter().map(|ex| project_ligand(&ex.ligand, ap)).collect();

    let grid = 1.0 / (n * n) as f64;
    let mut g_agg = vec![vec![0.0; d]; n];
    let mut g_proj = vec![vec![0.0; d]; n];
    let mut cl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let t = pair_term(dot(&attn[i].1, &proj[j]), PairLabel::from_match(i == j), lp);
            if !t.value.is_finite() {
                return Err(Error::NonFinite {
                    term: "aggregation grid",
                });
            }
            cl += t.value;
            axpy(t.d_dot * grid, &proj[j], &mut g_agg[i]);
            axpy(t.d_dot * grid, &attn[i].1, &mut g_proj[j]);
        }
    }
    cl *= grid;

    let mut kl = 0.0;
    for (ex, (w, _)) in batch.iter().zip(&attn) {
        kl += kl_loss(&ex.supervision, w)?;
    }
    kl /= n as f64;
    if !kl.is_finite() {
        return Err(Error::NonFinite { term: "attention KL" });
    }

    let mut grads = ap.zeros_like();
    for (j, ex) in batch.iter().enumerate() {
        for (r, &x) in ex.ligand.iter().enumerate() {
            axpy(x, &g_proj[j], grads.projection.weight.row_mut(r));
        }
        axpy(1.0, &g_proj[j], &mut grads.projection.bias);
    }

    let kl_scale = lambda / n as f64;
    for (i, ex) in batch.iter().enumerate() {
        let w = &attn[i].0;
        // ∂L/∂a_s from the grid term and from the KL term
        let g_w: Vec<f64> = ex
            .cavities
            .iter()
            .zip(&ex.supervision.probs)
            .zip(w)
            .map(|((c, s), a)| {
                let kl_part = if *s > 0.0 { -kl_scale * s / a } else { 0.0 };
                dot(c, &g_agg[i]) + kl_part
            })
            .collect();
        let mean: f64 = g_w.iter().zip(w).map(|(g, a)| g * a).sum();
        for (s, c) in ex.cavities.iter().enumerate() {
            let g_logit = w[s] * (g_w[s] - mean) / ap.temperature;
            if g_logit == 0.0 {
                continue;
            }
            for (r, &lr) in ex.ligand.iter().enumerate() {
                axpy(g_logit * lr, c, grads.key.row_mut(r));
            }
        }
    }

    Ok((cl + lambda * kl, grads))
}

/// Aggregation loss of a batch encoded with the model's (frozen) encoders.
pub fn agg_loss(batch: &[AggExample], params: &ModelParams, lambda: f64) -> Result<f64> {
    let embedded: Vec<AggEmbedded> = batch.par_iter().map(|ex| ex.embed(params)).collect::<Result<_>>()?;
    Ok(agg_loss_embedded(&embedded, &params.adapter, &params.loss_params, lambda)?.0)
}
