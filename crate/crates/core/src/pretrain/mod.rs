//! Point-level masked signal pretraining: mask sampling, zero corruption, the
//! masked reconstruction loss, the training loop and checkpoints.

mod checkpoint;
mod mask;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, transfer_init, Checkpoint, Provenance, StoredTensor,
    TransferReport, CHECKPOINT_VERSION,
};
pub use mask::{corrupt, msm_loss, sample_mask, MaskMatrix};
pub use train::{masked_loss, run_pretrain, validation_masks, EpochLoss, PretrainConfig};
