use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numcore::{SeededRng, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub epochs_run: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub seed: u64,
}

/// Serialized model: configuration, named weight arrays and how they were
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub tensors: BTreeMap<String, StoredTensor>,
}

/// Which arrays [`transfer_init`] copied from the source and which it drew
/// fresh, in layout order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub fresh: Vec<String>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, provenance: Provenance) -> Self {
        let tensors = params
            .named()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            config: params.config().clone(),
            provenance,
            tensors,
        }
    }

    /// The stored arrays as tensors, checking every shape against its data.
    pub fn named_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.tensors
            .iter()
            .map(|(name, st)| {
                let t = Tensor::new(st.shape.clone(), st.data.clone()).map_err(|_| {
                    Error::MalformedCheckpoint(format!(
                        "array {name}: shape {:?} does not hold {} values",
                        st.shape,
                        st.data.len()
                    ))
                })?;
                Ok((name.clone(), t))
            })
            .collect()
    }

    /// Rebuilds the exact parameters; every array of the layout must be present.
    pub fn to_params(&self) -> Result<ModelParams> {
        ModelParams::from_named(&self.config, &self.named_tensors()?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint fields always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedCheckpoint("missing integer format_version".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        ckpt.config.validate()?;
        ckpt.named_tensors()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

/// Initializes `target_cfg` parameters, copying every source array whose name
/// and shape match and drawing the rest as [`crate::model::init_params`] would.
pub fn transfer_init(
    source: &Checkpoint,
    target_cfg: &ModelConfig,
    rng: &SeededRng,
) -> Result<(ModelParams, TransferReport)> {
    let named = source.named_tensors()?;
    let (params, copied, fresh) = ModelParams::from_named_partial(target_cfg, &named, rng)?;
    Ok((params, TransferReport { copied, fresh }))
}
