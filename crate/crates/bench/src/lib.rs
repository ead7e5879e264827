//! Inputs shared by the criterion benches.

use battery_msm::dataio::{apply_norm, fit_norm, synth_fleet, FleetDataset, SynthConfig};
use battery_msm::numcore::{SeededRng, Tensor};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

/// Scores with some signal plus labels at a 15% positive rate.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = SeededRng::new(seed);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.15)).collect();
    let scores = labels.iter().map(|&l| rng.normal() + f64::from(l)).collect();
    (scores, labels)
}

/// A small normalized synthetic fleet.
pub fn small_fleet(vehicles: usize, seq_len: usize) -> FleetDataset {
    let cfg = SynthConfig {
        vehicles,
        seq_len,
        ..SynthConfig::default()
    };
    let ds = synth_fleet(&cfg, 0).expect("valid generator config");
    apply_norm(&ds, &fit_norm(&ds).expect("non-empty")).expect("matching stats")
}
