//! Self-supervised pretraining of a Transformer encoder on multivariate battery
//! charging time series, followed by frozen-encoder fault classification.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`numcore`]: dense tensors, encoder building blocks and gradient checking
//! - [`dataio`]: snippet data model, CSV ingestion, normalization, vehicle
//!   splits and a synthetic fleet generator
//! - [`model`]: the encoder (embedding, attention stack, reconstruction head)
//!   with hand-written backward passes
//! - [`pretrain`]: point-level masking, the masked reconstruction loss, the
//!   training loop and checkpoints
//! - [`downstream`]: `[CLS]` feature extraction, metadata fusion and a
//!   gradient-boosted tree classifier
//! - [`evalkit`]: AUROC, ROC sweeps, expected direct cost, t-SNE and the
//!   mixing score

pub mod dataio;
pub mod downstream;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numcore;
pub mod pretrain;

pub use dataio::{ChargeSnippet, FleetDataset, NormStats, SplitSpec, SynthConfig};
pub use downstream::{FusedFeature, GbdtConfig, GbdtModel};
pub use error::{Error, Result};
pub use evalkit::{CostParams, EvaluationReport, RocPoint};
pub use model::{ModelConfig, ModelParams};
pub use numcore::{Parameter, SeededRng, Tensor};
pub use pretrain::{Checkpoint, MaskMatrix, PretrainConfig};
