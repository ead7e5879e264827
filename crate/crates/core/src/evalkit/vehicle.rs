use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
}

/// Groups `(vehicle, score)` pairs by vehicle, in order of first appearance.
pub fn group_by_vehicle<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Vec<(String, Vec<f64>)> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (v, s) in pairs {
        let i = *slot.entry(v).or_insert_with(|| {
            groups.push((v.to_string(), Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(s);
    }
    groups
}

/// One score per vehicle from its snippet scores.
pub fn vehicle_scores(groups: &[(String, Vec<f64>)], agg: Aggregator) -> Result<Vec<(String, f64)>> {
    groups
        .iter()
        .map(|(v, scores)| {
            if scores.is_empty() {
                return Err(Error::Data(format!("vehicle {v} has no snippet scores")));
            }
            let s = match agg {
                Aggregator::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
                Aggregator::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Ok((v.clone(), s))
        })
        .collect()
}
