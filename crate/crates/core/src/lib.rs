//! Multimodal named-entity recognition through image-text alignment.
//!
//! Images enter the model as text: precomputed detector tags, captions and
//! OCR output are linearized into a visual context that is appended to the
//! sentence. A shared attention encoder and a linear-chain CRF are trained on
//! both the text-only (T) view and the cross-modal (I+T) view, and a
//! cross-view alignment loss pulls the T view's label marginals toward the
//! I+T view's.

pub mod alignment;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
