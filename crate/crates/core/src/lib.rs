//! Multichannel convolutional network for cross-language dialog state
//! tracking.
//!
//! English and Chinese renderings of each utterance are fed to one CNN as
//! separate input channels, each with its own embedding table and filter
//! bank; pooled features from all channels are concatenated before a sigmoid
//! output layer with one unit per ontology value. One model is trained per
//! (topic, slot) pair.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numkit;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
