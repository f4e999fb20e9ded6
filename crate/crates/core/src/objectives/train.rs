//! Training loops for both phases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::{argmax, attention, AdapterParams, AggEmbedded};
use super::agg_loss_embedded;
use super::align::{align_loss, align_loss_and_grad, AlignBatch, AlignComplex};
use crate::encoder::{adam_step, AdamConfig, AdamState, ModelParams, PreparedCloud};
use crate::error::{Error, Result};
use crate::pocketlabel::{sample_training_cavities, LabelConfig, LabeledCavity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// KL weight in the aggregation loss.
    pub lambda: f64,
    pub batch_size: usize,
    /// Fraction of complex-origin examples in the phase-2 stream.
    pub complex_mix_ratio: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub adapter_learning_rate: f64,
    /// Share of examples held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 1.0,
            batch_size: 48,
            complex_mix_ratio: 0.5,
            max_epochs: 200,
            patience: 10,
            seed: 1,
            learning_rate: 1e-3,
            adapter_learning_rate: 1e-3,
            validation_fraction: 0.2,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.complex_mix_ratio) {
            return Err(Error::Config(format!(
                "complex_mix_ratio must lie in [0, 1], got {}",
                self.complex_mix_ratio
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.adapter_learning_rate >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One phase-1 training complex with its encoder inputs.
#[derive(Debug, Clone)]
pub struct AlignComplexData {
    pub id: String,
    pub ligand: PreparedCloud,
    pub holo: PreparedCloud,
    pub labeled: Vec<LabeledCavity>,
    /// Encoder input for each labeled cavity, same order.
    pub cavity_clouds: Vec<PreparedCloud>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignTrace {
    /// Training-set loss before the first update, with a fixed cavity draw.
    pub initial_train_loss: f64,
    /// Training-set loss of the returned parameters, same draw.
    pub final_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrace {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Share of training complex-origin examples whose attention argmax hits
    /// the one-hot target, after training.
    pub complex_argmax_accuracy: Option<f64>,
}

/// Splits `0..n` into shuffled train and validation index sets.
fn split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if fraction > 0.0 && n >= 4 {
        ((fraction * n as f64).round() as usize).clamp(2, n - 2)
    } else {
        0
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Consecutive chunks of `batch_size`, folding a trailing singleton into
/// the previous chunk.
fn batches(idx: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.len() >= 2 && out.last().is_some_and(|c| c.len() == 1) {
        let last = out.pop().expect("len >= 2");
        out.last_mut().expect("len >= 1").extend(last);
    }
    out
}

fn align_batch<'a>(
    data: &'a [AlignComplexData],
    idx: &[usize],
    label_cfg: &LabelConfig,
    rng: &mut ChaCha8Rng,
) -> AlignBatch<'a> {
    AlignBatch {
        complexes: idx
            .iter()
            .map(|&i| {
                let c = &data[i];
                let draw = sample_training_cavities(&c.labeled, label_cfg, rng);
                AlignComplex {
                    ligand: &c.ligand,
                    holo: &c.holo,
                    positive: draw.positive.map(|p| &c.cavity_clouds[p]),
                    negatives: draw.negatives.iter().map(|&k| &c.cavity_clouds[k]).collect(),
                }
            })
            .collect(),
    }
}

/// Size-weighted mean loss over fixed batches with a fixed cavity draw.
fn align_eval(
    data: &[AlignComplexData],
    idx: &[usize],
    params: &ModelParams,
    cfg: &ObjectiveConfig,
    label_cfg: &LabelConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(label_cfg.rng_seed ^ 0x005e_ed0f_e7a1);
    let mut total = 0.0;
    let mut count = 0;
    for b in batches(idx, cfg.batch_size) {
        let batch = align_batch(data, &b, label_cfg, &mut rng);
        total += align_loss(&batch, params)? * b.len() as f64;
        count += b.len();
    }
    Ok(total / count as f64)
}

/// Phase 1: trains both encoders and the loss parameters with Adam and
/// early stopping on a held-out split. Returns the best parameters seen.
pub fn train_align(
    data: &[AlignComplexData],
    init: &ModelParams,
    cfg: &ObjectiveConfig,
    label_cfg: &LabelConfig,
) -> Result<(ModelParams, AlignTrace)> {
    cfg.validate()?;
    label_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("alignment training without complexes"));
    }
    if data.len() < 2 {
        return Err(Error::InvalidBatch(
            "alignment training needs at least 2 complexes".into(),
        ));
    }
    for c in data {
        if c.labeled.len() != c.cavity_clouds.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: cavity inputs do not match labels",
                c.id
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cavity_rng = ChaCha8Rng::seed_from_u64(label_cfg.rng_seed);
    let (mut train, val) = split(data.len(), cfg.validation_fraction, &mut rng);
    let criterion_idx = if val.is_empty() { train.clone() } else { val.clone() };

    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::default();
    let mut params = init.clone();
    let initial_train_loss = align_eval(data, &train, &params, cfg, label_cfg)?;
    let mut best = align_eval(data, &criterion_idx, &params, cfg, label_cfg)?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for b in batches(&train, cfg.batch_size) {
            let batch = align_batch(data, &b, label_cfg, &mut cavity_rng);
            let (loss, grads) = align_loss_and_grad(&batch, &params)?;
            adam_step(&mut params, &grads, &mut state, &adam)?;
            total += loss * b.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let validation_loss = if val.is_empty() {
            None
        } else {
            Some(align_eval(data, &val, &params, cfg, label_cfg)?)
        };
        let criterion = match validation_loss {
            Some(v) => v,
            None => align_eval(data, &train, &params, cfg, label_cfg)?,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if criterion < best {
            best = criterion;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let mut train_sorted = train.clone();
    train_sorted.sort_unstable();
    let final_train_loss = align_eval(data, &train_sorted, &best_params, cfg, label_cfg)?;
    let initial_train_loss = if train_sorted == train {
        initial_train_loss
    } else {
        align_eval(data, &train_sorted, init, cfg, label_cfg)?
    };
    let mut val_sorted = val;
    val_sorted.sort_unstable();
    Ok((
        best_params,
        AlignTrace {
            initial_train_loss,
            final_train_loss,
            epochs,
            best_epoch,
            train_ids: train_sorted.iter().map(|&i| data[i].id.clone()).collect(),
            validation_ids: val_sorted.iter().map(|&i| data[i].id.clone()).collect(),
        },
    ))
}

fn agg_eval(examples: &[&AggEmbedded], params: &ModelParams, cfg: &ObjectiveConfig) -> Result<f64> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut total = 0.0;
    for b in batches(&idx, cfg.batch_size) {
        let batch: Vec<AggEmbedded> = b.iter().map(|&i| examples[i].clone()).collect();
        total += agg_loss_embedded(&batch, &params.adapter, &params.loss_params, cfg.lambda)?.0 * b.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// How many complex and activity examples one epoch draws so that the
/// complex share matches `ratio` as closely as the pool sizes allow.
fn stream_counts(n_complex: usize, n_activity: usize, ratio: f64) -> (usize, usize) {
    if n_complex == 0 || ratio == 0.0 {
        return (0, n_activity);
    }
    if n_activity == 0 || ratio == 1.0 {
        return (n_complex, 0);
    }
    let activity_for_all_complex = (n_complex as f64 * (1.0 - ratio) / ratio).round() as usize;
    if activity_for_all_complex <= n_activity {
        (n_complex, activity_for_all_complex)
    } else {
        let complex = (n_activity as f64 * ratio / (1.0 - ratio)).round() as usize;
        (complex.min(n_complex), n_activity)
    }
}

/// Phase 2: fits only the adapter on frozen-encoder embeddings. The
/// returned parameters share every non-adapter value with `init`.
pub fn train_adapter(
    complex: &[AggEmbedded],
    activity: &[AggEmbedded],
    init: &ModelParams,
    cfg: &ObjectiveConfig,
) -> Result<(ModelParams, AdapterTrace)> {
    cfg.validate()?;
    if complex.is_empty() && activity.is_empty() {
        return Err(Error::EmptyInput("adapter training without examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xada9));
    let (c_train, c_val) = split(complex.len(), cfg.validation_fraction, &mut rng);
    let (a_train, a_val) = split(activity.len(), cfg.validation_fraction, &mut rng);
    let (n_c, n_a) = stream_counts(c_train.len(), a_train.len(), cfg.complex_mix_ratio);
    if n_c + n_a < 2 {
        return Err(Error::InvalidBatch(
            "adapter training stream has fewer than 2 examples".into(),
        ));
    }

    let train_all: Vec<&AggEmbedded> = c_train
        .iter()
        .map(|&i| &complex[i])
        .chain(a_train.iter().map(|&i| &activity[i]))
        .collect();
    let val_all: Vec<&AggEmbedded> = c_val
        .iter()
        .map(|&i| &complex[i])
        .chain(a_val.iter().map(|&i| &activity[i]))
        .collect();
    let use_val = val_all.len() >= 2;

    let adam = AdamConfig::with_lr(cfg.adapter_learning_rate);
    let mut state = AdamState::default();
    let mut params = init.clone();
    let initial_train_loss = agg_eval(&train_all, &params, cfg)?;
    let mut best = if use_val {
        agg_eval(&val_all, &params, cfg)?
    } else {
        initial_train_loss
    };
    let mut best_adapter: AdapterParams = params.adapter.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();
    let mut c_pool = c_train.clone();
    let mut a_pool = a_train.clone();

    for epoch in 1..=cfg.max_epochs {
        c_pool.shuffle(&mut rng);
        a_pool.shuffle(&mut rng);
        let mut stream: Vec<&AggEmbedded> = c_pool[..n_c]
            .iter()
            .map(|&i| &complex[i])
            .chain(a_pool[..n_a].iter().map(|&i| &activity[i]))
            .collect();
        stream.shuffle(&mut rng);
        let order: Vec<usize> = (0..stream.len()).collect();
        let mut total = 0.0;
        for b in batches(&order, cfg.batch_size) {
            let batch: Vec<AggEmbedded> = b.iter().map(|&i| stream[i].clone()).collect();
            let (loss, grads) = agg_loss_embedded(&batch, &params.adapter, &params.loss_params, cfg.lambda)?;
            adam_step(&mut params.adapter, &grads, &mut state, &adam)?;
            total += loss * b.len() as f64;
        }
        let train_loss = total / stream.len() as f64;
        let validation_loss = if use_val {
            Some(agg_eval(&val_all, &params, cfg)?)
        } else {
            None
        };
        let criterion = match validation_loss {
            Some(v) => v,
            None => agg_eval(&train_all, &params, cfg)?,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if criterion < best {
            best = criterion;
            best_adapter = params.adapter.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let mut out = init.clone();
    out.adapter = best_adapter;
    let final_train_loss = agg_eval(&train_all, &out, cfg)?;
    let complex_argmax_accuracy = if c_train.is_empty() {
        None
    } else {
        let mut hits = 0;
        for &i in &c_train {
            let ex = &complex[i];
            let (w, _) = attention(&ex.ligand, &ex.cavities, &out.adapter)?;
            if argmax(&w) == ex.supervision.argmax() {
                hits += 1;
            }
        }
        Some(hits as f64 / c_train.len() as f64)
    };
    Ok((
        out,
        AdapterTrace {
            initial_train_loss,
            final_train_loss,
            epochs,
            best_epoch,
            complex_argmax_accuracy,
        },
    ))
}
