//! Tri-modal alignment loss.
//!
//! Three in-batch pairwise-sigmoid grids, (holo pocket, ligand),
//! (positive cavity, ligand) and (positive cavity, holo pocket), with `z = +1`
//! on the diagonal and `z = −1` elsewhere. Complexes without a positive
//! cavity only take part in the first grid. Each hard-negative cavity adds
//! `(cavity, own ligand)` and `(cavity, own holo pocket)` terms with
//! `z = −1`. The loss is the mean over all terms.

use rayon::prelude::*;

use super::{pair_term, LossParams, PairLabel};
use crate::encoder::{axpy, dot, EncodeTrace, EncoderParams, ModelParams, PreparedCloud};
use crate::error::{Error, Result};

/// Encoder inputs for one complex of a batch.
#[derive(Debug, Clone)]
pub struct AlignComplex<'a> {
    pub ligand: &'a PreparedCloud,
    pub holo: &'a PreparedCloud,
    pub positive: Option<&'a PreparedCloud>,
    pub negatives: Vec<&'a PreparedCloud>,
}

#[derive(Debug, Clone)]
pub struct AlignBatch<'a> {
    pub complexes: Vec<AlignComplex<'a>>,
}

/// Embeddings of one batch, ordered like the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignEmbeddings {
    pub ligand: Vec<Vec<f64>>,
    pub holo: Vec<Vec<f64>>,
    pub positive: Vec<Option<Vec<f64>>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
}

impl AlignEmbeddings {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        AlignEmbeddings {
            ligand: self.ligand.iter().map(z).collect(),
            holo: self.holo.iter().map(z).collect(),
            positive: self.positive.iter().map(|p| p.as_ref().map(z)).collect(),
            negatives: self.negatives.iter().map(|ns| ns.iter().map(z).collect()).collect(),
        }
    }
}

struct Accumulator {
    loss: f64,
    count: usize,
    t_log: f64,
    b: f64,
}

impl Accumulator {
    fn add(
        &mut self,
        a: &[f64],
        b: &[f64],
        z: PairLabel,
        lp: &LossParams,
        grads: Option<(&mut [f64], &mut [f64])>,
        term: &'static str,
    ) -> Result<()> {
        let t = pair_term(dot(a, b), z, lp);
        if !t.value.is_finite() {
            return Err(Error::NonFinite { term });
        }
        self.loss += t.value;
        self.count += 1;
        self.t_log += t.d_t_log;
        self.b += t.d_b;
        if let Some((ga, gb)) = grads {
            axpy(t.d_dot, b, ga);
            axpy(t.d_dot, a, gb);
        }
        Ok(())
    }
}

fn check_batch_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidBatch(format!(
            "alignment needs at least 2 complexes, got {n}"
        )));
    }
    Ok(())
}

/// Loss over precomputed embeddings.
pub fn align_loss_embedded(embs: &AlignEmbeddings, lp: &LossParams) -> Result<f64> {
    Ok(align_embedded_with_grad(embs, lp, false)?.0)
}

/// Returns the loss, gradients with respect to each embedding (when asked)
/// and gradients with respect to the loss parameters.
fn align_embedded_with_grad(
    embs: &AlignEmbeddings,
    lp: &LossParams,
    want_grads: bool,
) -> Result<(f64, Option<AlignEmbeddings>, LossParams)> {
    let n = embs.ligand.len();
    check_batch_size(n)?;
    let mut acc = Accumulator {
        loss: 0.0,
        count: 0,
        t_log: 0.0,
        b: 0.0,
    };
    let mut g = want_grads.then(|| embs.zeros_like());

    // we need two disjoint mutable rows from different fields, so split borrows per grid
    for i in 0..n {
        for j in 0..n {
            let z = PairLabel::from_match(i == j);
            let grads = g.as_mut().map(|g| {
                let AlignEmbeddings { holo, ligand, .. } = g;
                (holo[i].as_mut_slice(), ligand[j].as_mut_slice())
            });
            acc.add(&embs.holo[i], &embs.ligand[j], z, lp, grads, "holo-ligand grid")?;
        }
    }

    let with_pos: Vec<usize> = (0..n).filter(|&i| embs.positive[i].is_some()).collect();
    for &i in &with_pos {
        let ci = embs.positive[i].as_ref().expect("filtered");
        for &j in &with_pos {
            let z = PairLabel::from_match(i == j);
            let grads = g.as_mut().map(|g| {
                let AlignEmbeddings { positive, ligand, .. } = g;
                (
                    positive[i].as_mut().expect("filtered").as_mut_slice(),
                    ligand[j].as_mut_slice(),
                )
            });
            acc.add(ci, &embs.ligand[j], z, lp, grads, "cavity-ligand grid")?;
            let grads = g.as_mut().map(|g| {
                let AlignEmbeddings { positive, holo, .. } = g;
                (
                    positive[i].as_mut().expect("filtered").as_mut_slice(),
                    holo[j].as_mut_slice(),
                )
            });
            acc.add(ci, &embs.holo[j], z, lp, grads, "cavity-holo grid")?;
        }
    }

    for i in 0..n {
        for (k, neg) in embs.negatives[i].iter().enumerate() {
            let grads = g.as_mut().map(|g| {
                let AlignEmbeddings { negatives, ligand, .. } = g;
                (negatives[i][k].as_mut_slice(), ligand[i].as_mut_slice())
            });
            acc.add(
                neg,
                &embs.ligand[i],
                PairLabel::Negative,
                lp,
                grads,
                "hard-negative ligand",
            )?;
            let grads = g.as_mut().map(|g| {
                let AlignEmbeddings { negatives, holo, .. } = g;
                (negatives[i][k].as_mut_slice(), holo[i].as_mut_slice())
            });
            acc.add(neg, &embs.holo[i], PairLabel::Negative, lp, grads, "hard-negative holo")?;
        }
    }

    let scale = 1.0 / acc.count as f64;
    if let Some(g) = g.as_mut() {
        let all = g
            .ligand
            .iter_mut()
            .chain(g.holo.iter_mut())
            .chain(g.positive.iter_mut().flatten())
            .chain(g.negatives.iter_mut().flatten());
        for v in all {
            v.iter_mut().for_each(|x| *x *= scale);
        }
    }
    let loss = acc.loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { term: "alignment mean" });
    }
    Ok((
        loss,
        g,
        LossParams {
            t_log: acc.t_log * scale,
            b: acc.b * scale,
        },
    ))
}

struct ComplexTraces {
    ligand: EncodeTrace,
    holo: EncodeTrace,
    positive: Option<EncodeTrace>,
    negatives: Vec<EncodeTrace>,
}

fn trace_batch(batch: &AlignBatch<'_>, params: &ModelParams) -> Result<Vec<ComplexTraces>> {
    let pocket = params.holo_encoder();
    let cavity = params.cavity_encoder();
    batch
        .complexes
        .par_iter()
        .map(|c| {
            Ok(ComplexTraces {
                ligand: params.ligand_encoder.forward(c.ligand)?,
                holo: pocket.forward(c.holo)?,
                positive: c.positive.map(|p| cavity.forward(p)).transpose()?,
                negatives: c.negatives.iter().map(|n| cavity.forward(n)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn embeddings_of(traces: &[ComplexTraces]) -> AlignEmbeddings {
    AlignEmbeddings {
        ligand: traces.iter().map(|t| t.ligand.embedding.0.clone()).collect(),
        holo: traces.iter().map(|t| t.holo.embedding.0.clone()).collect(),
        positive: traces
            .iter()
            .map(|t| t.positive.as_ref().map(|p| p.embedding.0.clone()))
            .collect(),
        negatives: traces
            .iter()
            .map(|t| t.negatives.iter().map(|n| n.embedding.0.clone()).collect())
            .collect(),
    }
}

/// Alignment loss of a batch.
pub fn align_loss(batch: &AlignBatch<'_>, params: &ModelParams) -> Result<f64> {
    check_batch_size(batch.complexes.len())?;
    let traces = trace_batch(batch, params)?;
    align_loss_embedded(&embeddings_of(&traces), &params.loss_params)
}

/// Alignment loss and its exact gradient. Adapter gradients are zero.
pub fn align_loss_and_grad(batch: &AlignBatch<'_>, params: &ModelParams) -> Result<(f64, ModelParams)> {
    check_batch_size(batch.complexes.len())?;
    let traces = trace_batch(batch, params)?;
    let embs = embeddings_of(&traces);
    let (loss, g_emb, g_lp) = align_embedded_with_grad(&embs, &params.loss_params, true)?;
    let g_emb = g_emb.expect("requested");

    let pocket = params.holo_encoder();
    let per_complex: Vec<(EncoderParams, EncoderParams)> = batch
        .complexes
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let tr = &traces[i];
            let mut gp = pocket.zeros_like();
            let mut gl = params.ligand_encoder.zeros_like();
            params
                .ligand_encoder
                .backward(c.ligand, &tr.ligand, &g_emb.ligand[i], &mut gl);
            pocket.backward(c.holo, &tr.holo, &g_emb.holo[i], &mut gp);
            if let (Some(cloud), Some(t), Some(g)) = (c.positive, tr.positive.as_ref(), g_emb.positive[i].as_ref()) {
                pocket.backward(cloud, t, g, &mut gp);
            }
            for (k, cloud) in c.negatives.iter().enumerate() {
                pocket.backward(cloud, &tr.negatives[k], &g_emb.negatives[i][k], &mut gp);
            }
            (gp, gl)
        })
        .collect();

    let mut grads = params.zeros_like();
    for (gp, gl) in &per_complex {
        add_into(&mut grads.pocket_encoder, gp);
        add_into(&mut grads.ligand_encoder, gl);
    }
    grads.loss_params = g_lp;
    Ok((loss, grads))
}

fn add_into(dst: &mut EncoderParams, src: &EncoderParams) {
    use crate::encoder::ParamSet;
    let src_t = src.tensors();
    for (d, s) in dst.tensors_mut().into_iter().zip(src_t) {
        axpy(1.0, s.values, d);
    }
}
