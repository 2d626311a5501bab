//! Business sentiment indexing from text: a GRU sentence regressor trained on
//! rated survey statements, a one-class SVM domain filter, self-training
//! adaptation to news text, and monthly index aggregation with per-word
//! attribution.

pub mod adapt;
pub mod container;
pub mod corpus;
pub mod error;
pub mod features;
pub mod filter;
pub mod index;
pub mod io;
pub mod pipeline;
pub mod regressor;
pub mod synth;

pub use error::{Error, Result};
