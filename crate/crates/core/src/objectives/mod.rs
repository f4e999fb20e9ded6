//! Training objectives.
//!
//! Phase 1 aligns ligand, holo pocket and detected cavity embeddings with
//! pairwise-sigmoid losses ([`align`]). Phase 2 freezes the encoders and fits
//! a ligand-conditioned attention over candidate cavities ([`adapter`]).

pub mod adapter;
pub mod align;
pub mod train;

pub use adapter::{
    agg_loss, agg_loss_embedded, attention, complex_supervision, kl_loss, project_ligand,
    soft_labels_from_frozen_model, AdapterParams, AggEmbedded, AggExample, SampleOrigin, SupervisionKind,
    SupervisionTarget,
};
pub use align::{align_loss, align_loss_and_grad, align_loss_embedded, AlignBatch, AlignComplex, AlignEmbeddings};
pub use train::{train_adapter, train_align, AdapterTrace, AlignComplexData, AlignTrace, EpochRecord, ObjectiveConfig};

use serde::{Deserialize, Serialize};

use crate::encoder::{ParamSet, TensorView};

/// Learnable logit scale and bias shared by every pairwise-sigmoid term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// `t = exp(t_log)` keeps the temperature positive.
    pub t_log: f64,
    pub b: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            t_log: 10f64.ln(),
            b: -10.0,
        }
    }
}

impl LossParams {
    pub fn t(&self) -> f64 {
        self.t_log.exp()
    }

    /// Raw score `t·dot + b`.
    pub fn logit(&self, dot: f64) -> f64 {
        self.t() * dot + self.b
    }
}

impl ParamSet for LossParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView {
                name: "t_log".into(),
                shape: vec![1],
                values: std::slice::from_ref(&self.t_log),
            },
            TensorView {
                name: "b".into(),
                shape: vec![1],
                values: std::slice::from_ref(&self.b),
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![std::slice::from_mut(&mut self.t_log), std::slice::from_mut(&mut self.b)]
    }
}

/// Pair label: `+1` for matching pairs, `-1` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => -1.0,
        }
    }

    pub fn from_match(matches: bool) -> Self {
        if matches {
            PairLabel::Positive
        } else {
            PairLabel::Negative
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus(−z·(t·dot + b))`.
pub fn pair_loss(dot: f64, z: PairLabel, lp: &LossParams) -> f64 {
    softplus(-z.sign() * lp.logit(dot))
}

/// Pair loss with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PairTerm {
    pub value: f64,
    pub d_dot: f64,
    pub d_t_log: f64,
    pub d_b: f64,
}

pub(crate) fn pair_term(dot: f64, z: PairLabel, lp: &LossParams) -> PairTerm {
    let t = lp.t();
    let zs = z.sign();
    let u = -zs * (t * dot + lp.b);
    let s = sigmoid(u);
    PairTerm {
        value: softplus(u),
        d_dot: -zs * t * s,
        d_t_log: -zs * dot * s * t,
        d_b: -zs * s,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
