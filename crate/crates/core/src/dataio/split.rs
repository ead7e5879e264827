use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FleetDataset;
use crate::error::{Error, Result};
use crate::numcore::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_vehicle_ids: BTreeSet<String>,
    pub val_vehicle_ids: BTreeSet<String>,
    pub seed: u64,
    pub ratio: f64,
}

/// How many of each class go to validation: proportional to class size,
/// with at least one of each class whenever both exist and there is room.
fn val_quota(n_val: usize, pos: usize, neg: usize) -> usize {
    if pos == 0 {
        return 0;
    }
    if neg == 0 {
        return n_val;
    }
    let total = (pos + neg) as f64;
    let want = (n_val as f64 * pos as f64 / total).round() as usize;
    // Keep one of each class in training too when the class has two or more.
    let keep = |n: usize| if n >= 2 { n - 1 } else { n };
    let lo = usize::from(n_val >= 2).max(n_val.saturating_sub(keep(neg)));
    let hi = keep(pos).min(n_val.saturating_sub(usize::from(n_val >= 2)));
    want.clamp(lo.min(hi), hi)
}

/// Vehicle-level split: `round(ratio·V)` vehicles train, the rest validate,
/// shuffled within each label class so both classes reach validation.
pub fn vehicle_split(
    ds: &FleetDataset,
    ratio: f64,
    seed: u64,
) -> Result<(FleetDataset, FleetDataset, SplitSpec)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let vehicles = ds.vehicles();
    let v = vehicles.len();
    let n_train = (ratio * v as f64).round() as usize;
    if n_train == 0 || n_train >= v {
        return Err(Error::Data(format!(
            "{v} vehicles at ratio {ratio} leave a side of the split empty"
        )));
    }
    let n_val = v - n_train;
    let rng = SeededRng::new(seed).derive_str("vehicle_split");
    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (id, label) in vehicles {
        by_class[usize::from(label)].push(id);
    }
    let val_pos = val_quota(n_val, by_class[1].len(), by_class[0].len());
    let quota = [n_val - val_pos, val_pos];
    let mut train_ids = BTreeSet::new();
    let mut val_ids = BTreeSet::new();
    for (class, ids) in by_class.iter_mut().enumerate() {
        ids.shuffle(&mut rng.derive(class as u64));
        let cut = ids.len() - quota[class];
        train_ids.extend(ids[..cut].iter().cloned());
        val_ids.extend(ids[cut..].iter().cloned());
    }
    let train = ds.filter(|s| train_ids.contains(&s.vehicle_id));
    let val = ds.filter(|s| val_ids.contains(&s.vehicle_id));
    Ok((
        train,
        val,
        SplitSpec {
            train_vehicle_ids: train_ids,
            val_vehicle_ids: val_ids,
            seed,
            ratio,
        },
    ))
}
