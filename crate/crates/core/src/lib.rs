//! Synthetic multimodal geospatial tiles, grounded rule-based captioning, and
//! joint masked-autoencoding / latent-prediction / contrastive pretraining.

pub mod caption;
pub mod eval;
pub mod kv;
pub mod masking;
pub mod model;
pub mod objectives;
pub mod selfcheck;
pub mod synth;
pub mod trainer;
