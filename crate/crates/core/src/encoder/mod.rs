//! Invariant point-cloud encoders.
//!
//! Each atom is featurized by a learned element embedding and a Gaussian
//! radial basis expansion of its distance to a reference center. Atom
//! features pass through a `tanh` layer, are mean-pooled, projected and
//! L2-normalized. Distances to a single center make the embedding invariant
//! to rigid motions; mean pooling makes it invariant to atom order.
//!
//! Gradients are derived by hand (see [`EncoderParams::backward`]) and
//! checked against central finite differences in the test suites.

mod adam;
mod checkpoint;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_SCHEMA_VERSION};
pub use tensor::{axpy, dot, l2_norm, Dense, Matrix};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::moldata::{Atom, Element};
use crate::objectives::{AdapterParams, LossParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub element_dim: usize,
    pub rbf_count: usize,
    pub rbf_max: f64,
    pub rbf_width: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            element_dim: 8,
            rbf_count: 16,
            rbf_max: 12.0,
            rbf_width: 1.0,
            hidden_dim: 64,
            embed_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.element_dim == 0 || self.rbf_count < 2 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "encoder dimensions must be positive (rbf_count >= 2)".into(),
            ));
        }
        if !(self.rbf_max > 0.0 && self.rbf_width > 0.0) {
            return Err(Error::Config("rbf_max and rbf_width must be > 0".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.element_dim + self.rbf_count
    }
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `|elements| × element_dim`
    pub element_table: Matrix,
    /// Fixed radial basis centers, Å.
    pub rbf_centers: Vec<f64>,
    pub rbf_width: f64,
    /// `(element_dim + rbf_count) × hidden_dim`
    pub layer1: Dense,
    /// `hidden_dim × embed_dim`
    pub layer2: Dense,
}

/// Per-atom encoder inputs that do not depend on trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud {
    pub elements: Vec<usize>,
    /// Row-major `n_atoms × rbf_count`.
    pub rbf: Vec<f64>,
}

impl PreparedCloud {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Forward-pass intermediates needed by [`EncoderParams::backward`].
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    hidden: Vec<f64>,
    pooled: Vec<f64>,
    norm: f64,
    pub embedding: Embedding,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.rbf_count;
        let rbf_centers = (0..k).map(|i| cfg.rbf_max * i as f64 / (k - 1) as f64).collect();
        EncoderParams {
            element_table: Matrix::random_normal(Element::COUNT, cfg.element_dim, 1.0, &mut rng),
            rbf_centers,
            rbf_width: cfg.rbf_width,
            layer1: Dense::glorot(cfg.input_dim(), cfg.hidden_dim, &mut rng),
            layer2: Dense::glorot(cfg.hidden_dim, cfg.embed_dim, &mut rng),
        }
    }

    /// Same shapes, every trainable value zero. Used as a gradient record.
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            element_table: Matrix::zeros(self.element_table.rows, self.element_table.cols),
            rbf_centers: self.rbf_centers.clone(),
            rbf_width: self.rbf_width,
            layer1: Dense::zeros(self.layer1.weight.rows, self.layer1.weight.cols),
            layer2: Dense::zeros(self.layer2.weight.rows, self.layer2.weight.cols),
        }
    }

    pub fn element_dim(&self) -> usize {
        self.element_table.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.weight.cols
    }

    pub fn embed_dim(&self) -> usize {
        self.layer2.weight.cols
    }

    pub fn prepare(&self, atoms: &[Atom], reference_center: Vec3) -> Result<PreparedCloud> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput("encoder input without atoms"));
        }
        let k = self.rbf_centers.len();
        let inv = 1.0 / (2.0 * self.rbf_width * self.rbf_width);
        let mut rbf = Vec::with_capacity(atoms.len() * k);
        for atom in atoms {
            let d = geom::dist(atom.position, reference_center);
            rbf.extend(self.rbf_centers.iter().map(|mu| (-(d - mu) * (d - mu) * inv).exp()));
        }
        Ok(PreparedCloud {
            elements: atoms.iter().map(|a| a.element.index()).collect(),
            rbf,
        })
    }

    pub fn forward(&self, cloud: &PreparedCloud) -> Result<EncodeTrace> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("encoder input without atoms"));
        }
        let de = self.element_dim();
        let h = self.hidden_dim();
        let k = self.rbf_centers.len();
        let w1 = &self.layer1.weight;

        let elem_proj: Vec<Vec<f64>> = (0..Element::COUNT)
            .map(|e| {
                let mut v = self.layer1.bias.clone();
                for (c, &coef) in self.element_table.row(e).iter().enumerate() {
                    axpy(coef, w1.row(c), &mut v);
                }
                v
            })
            .collect();

        let n = cloud.len();
        let mut hidden = vec![0.0; n * h];
        let mut pooled = vec![0.0; h];
        for i in 0..n {
            let row = &mut hidden[i * h..(i + 1) * h];
            row.copy_from_slice(&elem_proj[cloud.elements[i]]);
            for (c, &r) in cloud.rbf[i * k..(i + 1) * k].iter().enumerate() {
                axpy(r, w1.row(de + c), row);
            }
            for v in row.iter_mut() {
                *v = v.tanh();
            }
            axpy(1.0, row, &mut pooled);
        }
        let inv_n = 1.0 / n as f64;
        pooled.iter_mut().for_each(|v| *v *= inv_n);

        let y = self.layer2.forward(&pooled);
        let norm = l2_norm(&y);
        if !(norm.is_finite() && norm > 1e-300) {
            return Err(Error::NonFinite { term: "embedding norm" });
        }
        let embedding = Embedding(y.iter().map(|v| v / norm).collect());
        Ok(EncodeTrace {
            hidden,
            pooled,
            norm,
            embedding,
        })
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂e` for the embedding `e`
    /// produced by `trace`.
    pub fn backward(
        &self,
        cloud: &PreparedCloud,
        trace: &EncodeTrace,
        grad_embedding: &[f64],
        grads: &mut EncoderParams,
    ) {
        let de = self.element_dim();
        let h = self.hidden_dim();
        let k = self.rbf_centers.len();
        let e = trace.embedding.as_slice();

        // through y / ‖y‖
        let proj = dot(e, grad_embedding);
        let g_y: Vec<f64> = grad_embedding
            .iter()
            .zip(e)
            .map(|(g, ei)| (g - ei * proj) / trace.norm)
            .collect();

        for (j, &m) in trace.pooled.iter().enumerate() {
            axpy(m, &g_y, grads.layer2.weight.row_mut(j));
        }
        axpy(1.0, &g_y, &mut grads.layer2.bias);
        let g_pooled = self.layer2.weight.mul_vec(&g_y);

        let n = cloud.len();
        let inv_n = 1.0 / n as f64;
        let mut per_element = vec![vec![0.0; h]; Element::COUNT];
        let mut g_pre = vec![0.0; h];
        for i in 0..n {
            let hid = &trace.hidden[i * h..(i + 1) * h];
            for j in 0..h {
                g_pre[j] = g_pooled[j] * inv_n * (1.0 - hid[j] * hid[j]);
            }
            for (c, &r) in cloud.rbf[i * k..(i + 1) * k].iter().enumerate() {
                axpy(r, &g_pre, grads.layer1.weight.row_mut(de + c));
            }
            axpy(1.0, &g_pre, &mut grads.layer1.bias);
            axpy(1.0, &g_pre, &mut per_element[cloud.elements[i]]);
        }

        for (el, g_el) in per_element.iter().enumerate() {
            if g_el.iter().all(|v| *v == 0.0) {
                continue;
            }
            for c in 0..de {
                let coef = self.element_table.row(el)[c];
                axpy(coef, g_el, grads.layer1.weight.row_mut(c));
                grads.element_table.row_mut(el)[c] += dot(self.layer1.weight.row(c), g_el);
            }
        }
    }
}

/// Encodes atoms relative to `reference_center`: the pocket or cavity center
/// for pocket-side inputs, the ligand centroid for ligands.
pub fn encode(params: &EncoderParams, atoms: &[Atom], reference_center: Vec3) -> Result<Embedding> {
    let cloud = params.prepare(atoms, reference_center)?;
    Ok(params.forward(&cloud)?.embedding)
}

/// Ligands are always encoded about their own centroid.
pub fn encode_ligand(params: &EncoderParams, atoms: &[Atom]) -> Result<Embedding> {
    let center = crate::moldata::centroid(atoms)?;
    encode(params, atoms, center)
}

/// Read-only view of one named parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// A fixed, ordered collection of trainable tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView {
                name: "element_table".into(),
                shape: self.element_table.shape().to_vec(),
                values: &self.element_table.data,
            },
            TensorView {
                name: "layer1.weight".into(),
                shape: self.layer1.weight.shape().to_vec(),
                values: &self.layer1.weight.data,
            },
            TensorView {
                name: "layer1.bias".into(),
                shape: vec![self.layer1.bias.len()],
                values: &self.layer1.bias,
            },
            TensorView {
                name: "layer2.weight".into(),
                shape: self.layer2.weight.shape().to_vec(),
                values: &self.layer2.weight.data,
            },
            TensorView {
                name: "layer2.bias".into(),
                shape: vec![self.layer2.bias.len()],
                values: &self.layer2.bias,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.element_table.data,
            &mut self.layer1.weight.data,
            &mut self.layer1.bias,
            &mut self.layer2.weight.data,
            &mut self.layer2.bias,
        ]
    }
}

/// Every trainable quantity of the model.
///
/// There is exactly one pocket encoder: it encodes holo pockets and detected
/// cavities alike, so the two roles can never drift apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub pocket_encoder: EncoderParams,
    pub ligand_encoder: EncoderParams,
    pub loss_params: LossParams,
    pub adapter: AdapterParams,
}

impl ModelParams {
    pub fn init(cfg: &EncoderConfig, adapter_temperature: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(ModelParams {
            pocket_encoder: EncoderParams::init(cfg, seed.wrapping_mul(2).wrapping_add(1)),
            ligand_encoder: EncoderParams::init(cfg, seed.wrapping_mul(2).wrapping_add(2)),
            loss_params: LossParams::default(),
            adapter: AdapterParams::identity(cfg.embed_dim, adapter_temperature)?,
        })
    }

    /// Encoder for holo pockets.
    pub fn holo_encoder(&self) -> &EncoderParams {
        &self.pocket_encoder
    }

    /// Encoder for detected cavities; the same storage as [`Self::holo_encoder`].
    pub fn cavity_encoder(&self) -> &EncoderParams {
        &self.pocket_encoder
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            pocket_encoder: self.pocket_encoder.zeros_like(),
            ligand_encoder: self.ligand_encoder.zeros_like(),
            loss_params: LossParams { t_log: 0.0, b: 0.0 },
            adapter: self.adapter.zeros_like(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.pocket_encoder.embed_dim()
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (prefix, set) in [
            ("pocket_encoder", &self.pocket_encoder as &dyn ParamSet),
            ("ligand_encoder", &self.ligand_encoder),
            ("loss_params", &self.loss_params),
            ("adapter", &self.adapter),
        ] {
            for mut t in set.tensors() {
                t.name = format!("{prefix}.{}", t.name);
                out.push(t);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.pocket_encoder.tensors_mut();
        out.extend(self.ligand_encoder.tensors_mut());
        out.extend(self.loss_params.tensors_mut());
        out.extend(self.adapter.tensors_mut());
        out
    }
}

/// A scalar function of the model parameters with an exact gradient.
pub trait Objective {
    /// Loss value and its gradient, shaped like the parameters.
    fn value_and_gradient(&self, params: &ModelParams) -> Result<(f64, ModelParams)>;
}

/// Exact gradient of `objective` at `params`, rejecting non-finite losses.
pub fn gradients(objective: &impl Objective, params: &ModelParams) -> Result<ModelParams> {
    let (value, grads) = objective.value_and_gradient(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { term: "objective" });
    }
    Ok(grads)
}
