//! The encoder: per-timestamp feature projection with learned positions and a
//! prepended `[CLS]` slot, a post-norm Transformer stack, and a linear head
//! that maps hidden states back to channel space.

mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{
    cls_embedding, cls_embeddings, embed, encode, forward, reconstruct, Forward, Grads,
};
pub use params::{init_params, ModelParams};
