//! Multi-label classification from partially labeled data by blending
//! category representations.
//!
//! The pipeline maps a feature map to one representation per category
//! ([`csrl`]), scores each with a shared gated classifier, and complements
//! unknown labels by blending representations across images ([`ilrb`]) and
//! with per-category K-means prototypes ([`plrb`]). Training uses partial
//! binary cross-entropy plus a cosine contrastive term ([`losses`]) and is
//! evaluated with mAP and the overall/per-class precision-recall family
//! ([`metrics`]).

pub mod csrl;
pub mod data;
mod error;
pub mod ilrb;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod plrb;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
