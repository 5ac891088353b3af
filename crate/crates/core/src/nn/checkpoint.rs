use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::datasets::NormalizationStats;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Serialized model state. Floats are written in shortest round-trip form,
/// so save → load reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_specs: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub parameters: BTreeMap<String, Vec<Vec<f64>>>,
    /// Input normalization the model was trained under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationStats>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, epoch: usize, best_val_loss: Option<f64>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_specs: model.spec().clone(),
            seed,
            epoch,
            best_val_loss: best_val_loss.filter(|v| v.is_finite()),
            parameters: model
                .parameters()
                .map(|p| (p.name.clone(), p.value.to_nested()))
                .collect(),
            normalization: None,
        }
    }

    pub fn with_normalization(mut self, stats: NormalizationStats) -> Self {
        self.normalization = Some(stats);
        self
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let mut model = Model::new(self.layer_specs.clone(), &mut RngState::new(self.seed))?;
        let values = self
            .parameters
            .iter()
            .map(|(name, rows)| Ok((name.clone(), Matrix::from_rows(rows)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        model.load_values(&values)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
