use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input channels per timestamp (D).
    pub channels: usize,
    /// Hidden width (H).
    pub hidden: usize,
    /// Encoder layers (L).
    pub layers: usize,
    /// Attention heads (A).
    pub heads: usize,
    /// Feed-forward inner width.
    pub ff_dim: usize,
    /// Longest sequence the positional table covers, `[CLS]` included.
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    /// Static metadata attributes (K); used only by the downstream stage.
    pub meta_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            hidden: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            max_seq_len: 129,
            dropout_rate: 0.1,
            meta_dim: 2,
        }
    }
}

impl ModelConfig {
    /// BERT-base sized encoder (12 layers, width 768, 12 heads).
    pub fn full_scale(channels: usize, meta_dim: usize) -> Self {
        Self {
            channels,
            hidden: 768,
            layers: 12,
            heads: 12,
            ff_dim: 3072,
            max_seq_len: 512,
            dropout_rate: 0.1,
            meta_dim,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels == 0 || self.hidden == 0 || self.heads == 0 {
            return bad("channels, hidden and heads must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.ff_dim < self.hidden {
            return bad(format!("ff_dim {} < hidden {}", self.ff_dim, self.hidden));
        }
        if self.max_seq_len < 2 {
            return bad(format!("max_seq_len {} < 2", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Closed-form count of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (d, h, f) = (self.channels, self.hidden, self.ff_dim);
        let embedding = d * h + h + self.max_seq_len * h + h + 2 * h;
        let attention = 4 * h * h + 3 * h;
        let feed_forward = h * f + f + f * h + h;
        let norms = 4 * h;
        let head = h * d + d;
        embedding + self.layers * (attention + feed_forward + norms) + head
    }
}
