//! Self-describing JSON checkpoints. Tensors are stored as `f64`, which holds
//! both training precisions exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Params, Tensor};
use super::train::{Selection, TrainConfig};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::grammar::WindowLayout;
use crate::scalar::Scalar;
use crate::soft_targets::SmoothingConfig;

pub const CHECKPOINT_FORMAT: &str = "pacetok-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionInfo {
    pub selection: Selection,
    pub step: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Scalar type the parameters were trained in.
    pub precision: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub layout: WindowLayout,
    pub smoothing: SmoothingConfig,
    pub manifest_hash: String,
    pub selection: Option<SelectionInfo>,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        params: &Params<T>,
        model: &ModelConfig,
        train: &TrainConfig,
        layout: &WindowLayout,
        smoothing: &SmoothingConfig,
        manifest_hash: &str,
        selection: Option<SelectionInfo>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            precision: T::NAME.into(),
            model: model.clone(),
            train: train.clone(),
            layout: *layout,
            smoothing: *smoothing,
            manifest_hash: manifest_hash.into(),
            selection,
            tensors: params
                .tensors
                .iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    decay: t.decay,
                    data: t.data.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn params<T: Scalar>(&self) -> Result<Params<T>> {
        let params = Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    decay: t.decay,
                    data: t.data.iter().map(|&v| T::lit(v)).collect(),
                })
                .collect(),
        };
        params.check_shapes(&self.model)?;
        Ok(params)
    }

    pub fn ensure_manifest(&self, hash: &str) -> Result<()> {
        if self.manifest_hash != hash {
            return Err(Error::ManifestMismatch { expected: hash.into(), found: self.manifest_hash.clone() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.model.validate()?;
        if c.layout.capacity() != c.model.window_capacity {
            return Err(Error::Data(format!(
                "checkpoint window capacity {} disagrees with its layout ({})",
                c.model.window_capacity,
                c.layout.capacity()
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
