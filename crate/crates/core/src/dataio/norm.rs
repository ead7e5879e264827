use serde::{Deserialize, Serialize};

use super::{ChargeSnippet, FleetDataset};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Smallest standard deviation used for scaling; keeps constant channels finite.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel and per-metadata z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub meta_mean: Vec<f64>,
    pub meta_std: Vec<f64>,
}

/// Mean and population standard deviation. The first value serves as a shift,
/// so a constant column gets exactly its value as mean and zero spread.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut it = values.clone();
    let Some(shift) = it.next() else {
        return (0.0, 0.0);
    };
    let (mut n, mut sum) = (1.0, 0.0);
    for v in it {
        n += 1.0;
        sum += v - shift;
    }
    let mean = shift + sum / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Statistics pooled over every timestamp of every snippet in `train`.
pub fn fit_norm(train: &FleetDataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty dataset".into()));
    }
    let d = train.num_channels();
    let k = train.meta_dim();
    let snippets = train.snippets();
    let (mut mean, mut std) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for c in 0..d {
        let col = snippets
            .iter()
            .flat_map(move |s| s.channels.data().iter().skip(c).step_by(d).copied());
        let (m, s) = moments(col);
        mean.push(m);
        std.push(s.max(STD_FLOOR));
    }
    let (mut meta_mean, mut meta_std) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for j in 0..k {
        let (m, s) = moments(snippets.iter().map(move |s| s.meta[j]));
        meta_mean.push(m);
        meta_std.push(s.max(STD_FLOOR));
    }
    Ok(NormStats {
        mean,
        std,
        meta_mean,
        meta_std,
    })
}

/// `(x - mean) / std` per channel and per metadata attribute.
pub fn apply_norm(ds: &FleetDataset, stats: &NormStats) -> Result<FleetDataset> {
    let (d, k) = (ds.num_channels(), ds.meta_dim());
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(Error::shape("apply_norm", &[d], &[stats.mean.len()]));
    }
    if stats.meta_mean.len() != k || stats.meta_std.len() != k {
        return Err(Error::shape("apply_norm", &[k], &[stats.meta_mean.len()]));
    }
    let snippets = ds
        .snippets()
        .iter()
        .map(|s| {
            let mut data = s.channels.data().to_vec();
            for row in data.chunks_exact_mut(d) {
                for ((v, m), sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                    *v = (*v - m) / sd;
                }
            }
            let meta = s
                .meta
                .iter()
                .zip(&stats.meta_mean)
                .zip(&stats.meta_std)
                .map(|((v, m), sd)| (v - m) / sd)
                .collect();
            Ok(ChargeSnippet {
                channels: Tensor::new(s.channels.shape().to_vec(), data)?,
                meta,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FleetDataset::new(snippets, ds.channel_names().to_vec(), ds.meta_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::super::tests::snippet;
    use super::*;

    fn ds(rows: &[&[Vec<f64>]]) -> FleetDataset {
        let snippets = rows
            .iter()
            .enumerate()
            .map(|(i, r)| snippet(&format!("s{i}"), "v", r.to_vec(), vec![i as f64 * 10.0], 0))
            .collect();
        let d = rows[0][0].len();
        FleetDataset::new(snippets, (0..d).map(|c| format!("c{c}")).collect(), vec!["m".into()]).unwrap()
    }

    #[test]
    fn pooled_mean_and_population_std() {
        let data = ds(&[&[vec![1.0, 5.0], vec![2.0, 5.0]], &[vec![3.0, 5.0], vec![2.0, 5.0]]]);
        let st = fit_norm(&data.filter(|s| s.snippet_id == "s0")).unwrap();
        assert_eq!(st.mean, vec![1.5, 5.0]);
        let three = ds(&[&[vec![1.0], vec![2.0], vec![3.0]]]);
        let st = fit_norm(&three).unwrap();
        assert_eq!(st.mean[0], 2.0);
        assert!((st.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_channel_is_floored_and_maps_to_zero() {
        let data = ds(&[&[vec![0.1, 1.0], vec![0.1, 2.0]], &[vec![0.1, 4.0], vec![0.1, 0.0]]]);
        let st = fit_norm(&data).unwrap();
        assert_eq!(st.std[0], STD_FLOOR);
        let z = apply_norm(&data, &st).unwrap();
        assert!(z.snippets().iter().all(|s| s.channels.get(0, 0) == 0.0 && s.channels.get(1, 0) == 0.0));
    }

    #[test]
    fn normalized_training_data_is_standard() {
        let data = ds(&[
            &[vec![1.0, -3.0], vec![4.5, 0.25]],
            &[vec![2.0, 7.0], vec![-1.0, 3.0]],
            &[vec![0.3, 1.0], vec![9.0, 2.0]],
        ]);
        let st = fit_norm(&data).unwrap();
        let z = apply_norm(&data, &st).unwrap();
        let again = fit_norm(&z).unwrap();
        for c in 0..2 {
            assert!(again.mean[c].abs() < 1e-9);
            assert!((again.std[c] - 1.0).abs() < 1e-9);
        }
        assert!(again.meta_mean[0].abs() < 1e-9);
    }

    #[test]
    fn unit_stats_are_identity_and_mismatch_errors() {
        let data = ds(&[&[vec![1.0, 2.0], vec![3.0, 4.0]]]);
        let unit = NormStats {
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
            meta_mean: vec![0.0],
            meta_std: vec![1.0],
        };
        assert_eq!(apply_norm(&data, &unit).unwrap(), data);
        let bad = NormStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
            ..unit
        };
        assert!(matches!(apply_norm(&data, &bad), Err(Error::Shape { .. })));
        assert!(fit_norm(&data.filter(|_| false)).is_err());
    }
}
