use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// How indistinguishable the groups are to a leave-one-out 1-nearest-neighbor
/// classifier: `clamp((1 - a) / (1 - chance), 0, 1)` with `a` the 1-NN
/// accuracy and `chance` the majority-group fraction. 0 means perfectly
/// separable, 1 means no better than chance.
pub fn mixing_score<G: Ord + Sync>(points: &[Vec<f64>], groups: &[G]) -> Result<f64> {
    if points.len() != groups.len() {
        return Err(Error::shape("mixing_score", &[points.len()], &[groups.len()]));
    }
    let mut sizes: BTreeMap<&G, usize> = BTreeMap::new();
    for g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::Data("mixing score needs at least two groups".into()));
    }
    if sizes.values().any(|&n| n < 2) {
        return Err(Error::Data("every group needs at least two points".into()));
    }
    let width = points[0].len();
    if points.iter().any(|p| p.len() != width) {
        return Err(Error::Data("points differ in dimension".into()));
    }
    let n = points.len();
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    let d = sq_dist(&points[i], p);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
            }
            usize::from(groups[best.1] == groups[i])
        })
        .sum();
    let acc = hits as f64 / n as f64;
    let chance = *sizes.values().max().expect("two groups") as f64 / n as f64;
    Ok(((1.0 - acc) / (1.0 - chance)).clamp(0.0, 1.0))
}
