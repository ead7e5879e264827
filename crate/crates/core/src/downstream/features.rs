use serde::{Deserialize, Serialize};

use crate::dataio::FleetDataset;
use crate::error::{Error, Result};
use crate::model::{cls_embeddings, ModelParams};

/// `[CLS]` embedding followed by the snippet's normalized metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFeature {
    pub values: Vec<f64>,
    pub snippet_id: String,
    pub vehicle_id: String,
    pub label: u8,
}

/// Frozen-encoder features for every snippet of `ds`, in dataset order.
pub fn extract_features(params: &ModelParams, ds: &FleetDataset) -> Result<Vec<FusedFeature>> {
    let cfg = params.config();
    if ds.meta_dim() != cfg.meta_dim {
        return Err(Error::shape("extract_features", &[cfg.meta_dim], &[ds.meta_dim()]));
    }
    if !ds.is_empty() && ds.num_channels() != cfg.channels {
        return Err(Error::shape("extract_features", &[cfg.channels], &[ds.num_channels()]));
    }
    let inputs: Vec<_> = ds.snippets().iter().map(|s| &s.channels).collect();
    let cls = cls_embeddings(params, &inputs)?;
    Ok(ds
        .snippets()
        .iter()
        .zip(cls)
        .map(|(s, mut values)| {
            values.extend_from_slice(&s.meta);
            FusedFeature {
                values,
                snippet_id: s.snippet_id.clone(),
                vehicle_id: s.vehicle_id.clone(),
                label: s.label,
            }
        })
        .collect())
}

/// Flattened channel matrices plus metadata; the no-encoder baseline.
pub fn raw_features(ds: &FleetDataset) -> Vec<FusedFeature> {
    ds.snippets()
        .iter()
        .map(|s| {
            let mut values = s.channels.data().to_vec();
            values.extend_from_slice(&s.meta);
            FusedFeature {
                values,
                snippet_id: s.snippet_id.clone(),
                vehicle_id: s.vehicle_id.clone(),
                label: s.label,
            }
        })
        .collect()
}
