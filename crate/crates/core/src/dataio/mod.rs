//! Snippet data model, CSV ingestion, z-score normalization, vehicle-level
//! splitting and the synthetic fleet generator.

mod csvio;
mod norm;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use csvio::{load_csv, write_csv};
pub use norm::{apply_norm, fit_norm, NormStats, STD_FLOOR};
pub use split::{vehicle_split, SplitSpec};
pub use synth::{synth_fleet, SynthConfig};

/// One charging session: `M×D` channel matrix plus static metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSnippet {
    pub snippet_id: String,
    pub vehicle_id: String,
    /// Rows are timestamps, columns are channels.
    pub channels: Tensor,
    pub meta: Vec<f64>,
    /// 0 normal, 1 fault; inherited from the vehicle.
    pub label: u8,
}

/// An ordered collection of snippets sharing length, channels and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetDataset {
    snippets: Vec<ChargeSnippet>,
    channel_names: Vec<String>,
    meta_names: Vec<String>,
}

impl FleetDataset {
    pub fn new(
        snippets: Vec<ChargeSnippet>,
        channel_names: Vec<String>,
        meta_names: Vec<String>,
    ) -> Result<Self> {
        if channel_names.is_empty() {
            return Err(Error::Data("dataset needs at least one channel".into()));
        }
        let d = channel_names.len();
        let k = meta_names.len();
        let m = snippets.first().map(|s| s.channels.shape()[0]);
        let mut ids = HashSet::new();
        let mut labels: BTreeMap<&str, u8> = BTreeMap::new();
        for s in &snippets {
            if s.channels.rank() != 2 || s.channels.cols() != d {
                return Err(Error::shape(
                    "FleetDataset::new",
                    &[m.unwrap_or(0), d],
                    s.channels.shape(),
                ));
            }
            if Some(s.channels.rows()) != m {
                return Err(Error::Data(format!(
                    "snippet {} has {} rows, expected {}",
                    s.snippet_id,
                    s.channels.rows(),
                    m.unwrap_or(0)
                )));
            }
            if s.meta.len() != k {
                return Err(Error::shape("FleetDataset::new", &[k], &[s.meta.len()]));
            }
            if s.label > 1 {
                return Err(Error::Data(format!(
                    "snippet {} has label {}",
                    s.snippet_id, s.label
                )));
            }
            s.channels.ensure_finite(&s.snippet_id)?;
            if s.meta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("metadata of {}", s.snippet_id)));
            }
            if !ids.insert(s.snippet_id.as_str()) {
                return Err(Error::Data(format!("duplicate snippet id {}", s.snippet_id)));
            }
            match labels.insert(&s.vehicle_id, s.label) {
                Some(prev) if prev != s.label => {
                    return Err(Error::Data(format!(
                        "vehicle {} has snippets labeled both 0 and 1",
                        s.vehicle_id
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            snippets,
            channel_names,
            meta_names,
        })
    }

    pub fn snippets(&self) -> &[ChargeSnippet] {
        &self.snippets
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn meta_names(&self) -> &[String] {
        &self.meta_names
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Sequence length M, or 0 for an empty dataset.
    pub fn seq_len(&self) -> usize {
        self.snippets.first().map_or(0, |s| s.channels.rows())
    }

    pub fn num_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn meta_dim(&self) -> usize {
        self.meta_names.len()
    }

    /// Distinct vehicles with their labels, in order of first appearance.
    pub fn vehicles(&self) -> Vec<(String, u8)> {
        let mut seen = HashSet::new();
        self.snippets
            .iter()
            .filter(|s| seen.insert(s.vehicle_id.as_str()))
            .map(|s| (s.vehicle_id.clone(), s.label))
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.snippets.iter().map(|s| s.label).collect()
    }

    /// Snippets satisfying `keep`, order preserved.
    pub fn filter(&self, keep: impl Fn(&ChargeSnippet) -> bool) -> FleetDataset {
        FleetDataset {
            snippets: self.snippets.iter().filter(|s| keep(s)).cloned().collect(),
            channel_names: self.channel_names.clone(),
            meta_names: self.meta_names.clone(),
        }
    }

    /// Appends `other`, which must share the channel and metadata layout.
    pub fn concat(mut self, other: FleetDataset) -> Result<FleetDataset> {
        if other.channel_names != self.channel_names || other.meta_names != self.meta_names {
            return Err(Error::Data("cannot concatenate datasets with different layouts".into()));
        }
        self.snippets.extend(other.snippets);
        FleetDataset::new(self.snippets, self.channel_names, self.meta_names)
    }

    pub fn into_snippets(self) -> Vec<ChargeSnippet> {
        self.snippets
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn snippet(id: &str, vehicle: &str, rows: Vec<Vec<f64>>, meta: Vec<f64>, label: u8) -> ChargeSnippet {
        ChargeSnippet {
            snippet_id: id.into(),
            vehicle_id: vehicle.into(),
            channels: Tensor::from_rows(&rows).unwrap(),
            meta,
            label,
        }
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_duplicate_ids_and_mixed_vehicle_labels() {
        let a = snippet("s1", "v1", vec![vec![1.0], vec![2.0]], vec![], 0);
        let b = snippet("s1", "v2", vec![vec![1.0], vec![2.0]], vec![], 0);
        assert!(FleetDataset::new(vec![a.clone(), b], names(&["v"]), vec![]).is_err());
        let c = snippet("s2", "v1", vec![vec![1.0], vec![2.0]], vec![], 1);
        assert!(FleetDataset::new(vec![a.clone(), c], names(&["v"]), vec![]).is_err());
        let d = snippet("s3", "v1", vec![vec![1.0], vec![2.0], vec![3.0]], vec![], 0);
        assert!(FleetDataset::new(vec![a, d], names(&["v"]), vec![]).is_err());
    }

    #[test]
    fn vehicles_in_first_appearance_order() {
        let ds = FleetDataset::new(
            vec![
                snippet("a", "v2", vec![vec![0.0]], vec![1.0], 1),
                snippet("b", "v1", vec![vec![0.0]], vec![1.0], 0),
                snippet("c", "v2", vec![vec![0.0]], vec![1.0], 1),
            ],
            names(&["x"]),
            names(&["m"]),
        )
        .unwrap();
        assert_eq!(ds.vehicles(), vec![("v2".into(), 1), ("v1".into(), 0)]);
        assert_eq!(ds.seq_len(), 1);
        assert_eq!(ds.filter(|s| s.label == 1).len(), 2);
    }
}
