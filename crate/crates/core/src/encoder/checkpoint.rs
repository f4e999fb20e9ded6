//! JSON checkpoints: `{schema_version, tensors: [{name, shape, values}]}`
//! with row-major values. Loading validates every shape.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dense, EncoderParams, Matrix, ModelParams, ParamSet};
use crate::error::{Error, Result};
use crate::moldata::Element;
use crate::objectives::{AdapterParams, LossParams};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

pub const COMPONENTS: [&str; 4] = ["pocket_encoder", "ligand_encoder", "loss_params", "adapter"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub tensors: Vec<TensorRecord>,
}

fn record(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> TensorRecord {
    TensorRecord {
        name: name.into(),
        shape,
        values: values.to_vec(),
    }
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let mut tensors: Vec<TensorRecord> = params
            .tensors()
            .into_iter()
            .map(|t| record(t.name, t.shape, t.values))
            .collect();
        for (prefix, enc) in [
            ("pocket_encoder", &params.pocket_encoder),
            ("ligand_encoder", &params.ligand_encoder),
        ] {
            tensors.push(record(
                format!("{prefix}.rbf_centers"),
                vec![enc.rbf_centers.len()],
                &enc.rbf_centers,
            ));
            tensors.push(record(format!("{prefix}.rbf_width"), vec![1], &[enc.rbf_width]));
        }
        tensors.push(record("adapter.temperature", vec![1], &[params.adapter.temperature]));
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            tensors,
        }
    }

    fn get(&self, name: &str) -> Result<&TensorRecord> {
        let rec = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks tensor {name}")))?;
        if rec.shape.iter().product::<usize>() != rec.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: shape {:?} holds {} values",
                rec.shape,
                rec.values.len()
            )));
        }
        if !rec.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("{name}: non-finite values")));
        }
        Ok(rec)
    }

    fn matrix(&self, name: &str, rows: Option<usize>, cols: Option<usize>) -> Result<Matrix> {
        let rec = self.get(name)?;
        let ok =
            rec.shape.len() == 2 && rows.is_none_or(|r| r == rec.shape[0]) && cols.is_none_or(|c| c == rec.shape[1]);
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected [{}, {}], found {:?}",
                rows.map_or("?".into(), |r| r.to_string()),
                cols.map_or("?".into(), |c| c.to_string()),
                rec.shape
            )));
        }
        Ok(Matrix {
            rows: rec.shape[0],
            cols: rec.shape[1],
            data: rec.values.clone(),
        })
    }

    fn vector(&self, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
        let rec = self.get(name)?;
        if rec.shape.len() != 1 || len.is_some_and(|l| l != rec.shape[0]) {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected [{len:?}], found {:?}",
                rec.shape
            )));
        }
        Ok(rec.values.clone())
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.vector(name, Some(1))?[0])
    }

    fn encoder(&self, prefix: &str, embed_dim: Option<usize>) -> Result<EncoderParams> {
        let element_table = self.matrix(&format!("{prefix}.element_table"), Some(Element::COUNT), None)?;
        let rbf_centers = self.vector(&format!("{prefix}.rbf_centers"), None)?;
        let rbf_width = self.scalar(&format!("{prefix}.rbf_width"))?;
        let input = element_table.cols + rbf_centers.len();
        let w1 = self.matrix(&format!("{prefix}.layer1.weight"), Some(input), None)?;
        let b1 = self.vector(&format!("{prefix}.layer1.bias"), Some(w1.cols))?;
        let w2 = self.matrix(&format!("{prefix}.layer2.weight"), Some(w1.cols), embed_dim)?;
        let b2 = self.vector(&format!("{prefix}.layer2.bias"), Some(w2.cols))?;
        Ok(EncoderParams {
            element_table,
            rbf_centers,
            rbf_width,
            layer1: Dense { weight: w1, bias: b1 },
            layer2: Dense { weight: w2, bias: b2 },
        })
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint schema {}",
                self.schema_version
            )));
        }
        let pocket_encoder = self.encoder("pocket_encoder", None)?;
        let d = pocket_encoder.embed_dim();
        let ligand_encoder = self.encoder("ligand_encoder", Some(d))?;
        let loss_params = LossParams {
            t_log: self.scalar("loss_params.t_log")?,
            b: self.scalar("loss_params.b")?,
        };
        let adapter = AdapterParams {
            projection: Dense {
                weight: self.matrix("adapter.projection.weight", Some(d), Some(d))?,
                bias: self.vector("adapter.projection.bias", Some(d))?,
            },
            key: self.matrix("adapter.key", Some(d), Some(d))?,
            temperature: self.scalar("adapter.temperature")?,
        };
        if adapter.temperature <= 0.0 {
            return Err(Error::Data("adapter temperature must be > 0".into()));
        }
        Ok(ModelParams {
            pocket_encoder,
            ligand_encoder,
            loss_params,
            adapter,
        })
    }

    /// SHA-256 over the canonical JSON of one component's tensors.
    pub fn component_hash(&self, component: &str) -> String {
        let prefix = format!("{component}.");
        let subset: Vec<&TensorRecord> = self.tensors.iter().filter(|t| t.name.starts_with(&prefix)).collect();
        let bytes = serde_json::to_vec(&subset).expect("tensor records serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn component_hashes(&self) -> BTreeMap<String, String> {
        COMPONENTS
            .iter()
            .map(|c| (c.to_string(), self.component_hash(c)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl ModelParams {
    pub fn component_hashes(&self) -> BTreeMap<String, String> {
        Checkpoint::from_params(self).component_hashes()
    }
}
