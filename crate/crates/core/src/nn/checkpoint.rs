use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, MlpParams};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "ies-mlp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LayerRecord<S> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major weights.
    pub weights: Vec<S>,
    pub biases: Vec<S>,
}

/// JSON-serializable snapshot of a network. Floats are written in
/// shortest round-trip form so parsing yields the same bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub format: String,
    pub layers: Vec<LayerRecord<S>>,
}

impl<S: Scalar> From<&MlpParams<S>> for Checkpoint<S> {
    fn from(p: &MlpParams<S>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layers: p
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.output(),
                    cols: l.input(),
                    weights: l.w.iter().copied().collect(),
                    biases: l.b.to_vec(),
                })
                .collect(),
        }
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn into_params(self) -> Result<MlpParams<S>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CoreError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        let layers = self
            .layers
            .into_iter()
            .map(|r| {
                let w = Array2::from_shape_vec((r.rows, r.cols), r.weights)
                    .map_err(|e| CoreError::Checkpoint(e.to_string()))?;
                Ok(Dense {
                    w,
                    b: Array1::from(r.biases),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }
}
