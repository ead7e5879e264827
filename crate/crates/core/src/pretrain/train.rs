use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance};
use super::mask::{corrupt, masked_sse, sample_mask, MaskMatrix};
use crate::dataio::FleetDataset;
use crate::error::{Error, Result};
use crate::model::{forward, Grads, ModelParams};
use crate::numcore::{ParameterSet, SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate must be in (0,1), got {}", self.mask_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must be in [0,1)".into());
        }
        if !(self.epsilon > 0.0 && self.clip_norm > 0.0) {
            return bad("epsilon and clip_norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there is no validation data.
    pub val_loss: Option<f64>,
}

/// Fixed validation masks, one per snippet, keyed by snippet id and seed so
/// every epoch scores the same cells.
pub fn validation_masks(val: &FleetDataset, rate: f64, seed: u64) -> Result<Vec<MaskMatrix>> {
    let root = SeededRng::new(seed).derive_str("validation_masks");
    val.snippets()
        .iter()
        .map(|s| {
            let c = &s.channels;
            sample_mask(c.rows(), c.cols(), rate, &mut root.derive_str(&s.snippet_id))
        })
        .collect()
}

/// Masked reconstruction error of the whole set: (sum of squared errors,
/// masked-cell count), evaluated without dropout.
fn evaluate(params: &ModelParams, ds: &FleetDataset, masks: &[MaskMatrix]) -> Result<(f64, usize)> {
    let parts = ds
        .snippets()
        .par_iter()
        .zip(masks)
        .map(|(s, mask)| {
            let x = corrupt(&s.channels, mask)?;
            let f = forward(params, &x, false, &mut SeededRng::new(0))?;
            Ok((masked_sse(f.reconstruction_data(), s.channels.data(), mask.cells()), mask.count()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().fold((0.0, 0), |(a, n), &(e, c)| (a + e, n + c)))
}

/// Masked-reconstruction loss on `ds` with the seed-derived validation masks.
pub fn masked_loss(params: &ModelParams, ds: &FleetDataset, rate: f64, seed: u64) -> Result<f64> {
    let masks = validation_masks(ds, rate, seed)?;
    let (sse, n) = evaluate(params, ds, &masks)?;
    Ok(sse / n as f64)
}

/// Squared error, masked count and unscaled gradients for one snippet.
fn sample_grads(
    params: &ModelParams,
    channels: &Tensor,
    rate: f64,
    rng: &mut SeededRng,
) -> Result<(f64, usize, Grads)> {
    let mask = sample_mask(channels.rows(), channels.cols(), rate, rng)?;
    let x = corrupt(channels, &mask)?;
    let f = forward(params, &x, true, rng)?;
    let recon = f.reconstruction_data();
    let d: Vec<f64> = recon
        .iter()
        .zip(channels.data())
        .zip(mask.cells())
        .map(|((a, b), &m)| if m { 2.0 * (a - b) } else { 0.0 })
        .collect();
    let sse = masked_sse(recon, channels.data(), mask.cells());
    Ok((sse, mask.count(), f.backward(params, &d)))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.parameters().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &Grads, cfg: &PretrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .parameters_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Masked signal pretraining. Each epoch shuffles the training snippets,
/// draws a fresh mask per snippet, and takes one clipped adaptive-moment step
/// per batch on (masked squared error / masked count). Validation uses fixed
/// masks and no dropout.
///
/// Per-snippet gradients run in parallel but are summed in batch order, so
/// the result depends only on the inputs and `pcfg.seed`.
pub fn run_pretrain(
    train: &FleetDataset,
    val: &FleetDataset,
    mut params: ModelParams,
    pcfg: &PretrainConfig,
) -> Result<(Checkpoint, Vec<EpochLoss>)> {
    pcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training snippets".into()));
    }
    let cfg = params.config().clone();
    for ds in [train, val] {
        if !ds.is_empty() && ds.num_channels() != cfg.channels {
            return Err(Error::shape("run_pretrain", &[cfg.channels], &[ds.num_channels()]));
        }
    }
    let val_masks = validation_masks(val, pcfg.mask_rate, pcfg.seed)?;
    let root = SeededRng::new(pcfg.seed).derive_str("pretrain");
    let mut adam = Adam::new(&params);
    let mut history = Vec::with_capacity(pcfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=pcfg.epochs {
        let erng = root.derive(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut erng.derive_str("order"));
        let (mut epoch_sse, mut epoch_count) = (0.0, 0usize);
        for (b, batch) in order.chunks(pcfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = erng.derive(i as u64);
                    sample_grads(&params, &train.snippets()[i].channels, pcfg.mask_rate, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut parts = parts.into_iter();
            let (mut sse, mut count, mut grads) = parts.next().expect("batches are non-empty");
            for (e, c, g) in parts {
                sse += e;
                count += c;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.axpy(1.0, gi);
                }
            }
            let loss = sse / count as f64;
            let scale = 1.0 / count as f64;
            let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt() * scale;
            if !(loss.is_finite() && norm.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "pretraining loss at epoch {epoch}, batch {} (loss {loss}, gradient norm {norm})",
                    b + 1
                )));
            }
            let clip = if norm > pcfg.clip_norm { pcfg.clip_norm / norm } else { 1.0 };
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale * clip);
            }
            adam.step(&mut params, &grads, pcfg);
            epoch_sse += sse;
            epoch_count += count;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            let (sse, n) = evaluate(&params, val, &val_masks)?;
            let l = sse / n as f64;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
            }
            Some(l)
        };
        history.push(EpochLoss {
            epoch,
            train_loss: epoch_sse / epoch_count as f64,
            val_loss,
        });
    }

    let last = history.last().expect("at least one epoch");
    let provenance = Provenance {
        epochs_run: pcfg.epochs,
        final_train_loss: Some(last.train_loss),
        final_val_loss: last.val_loss,
        seed: pcfg.seed,
    };
    Ok((Checkpoint::from_params(&params, provenance), history))
}
