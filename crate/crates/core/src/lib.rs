//! Character-level transformer and convtransformer translation models.
//!
//! The crate carries everything from a small reverse-mode tensor library
//! up to training, decoding, BLEU scoring and attention-alignment analysis.

pub mod align;
pub mod data;
pub mod decode;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
