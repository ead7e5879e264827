//! Frozen-encoder feature extraction, metadata fusion and a gradient-boosted
//! tree classifier.

mod features;
mod gbdt;

pub use features::{extract_features, raw_features, FusedFeature};
pub use gbdt::{predict_proba, train_gbdt, GbdtConfig, GbdtModel, Node, Tree, GBDT_FORMAT_VERSION};
