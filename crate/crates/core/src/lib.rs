//! Attention-based neural answer ranking.
//!
//! A question and each of its candidate answers pass through separate
//! attention encoders; a joint head scores the pair. Training is pointwise
//! (binary relevance) with plain mini-batch SGD over hand-derived gradients.

mod binio;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod model;
pub mod numerics;
pub mod profile;
pub mod text;
pub mod training;

pub use error::{Error, Result};
