//! Recipe progress tracking from video frames and object-status prompts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod llm;
pub mod recipe;
pub mod seed;
pub mod status;
pub mod tracker;

pub use error::{BackendError, Error, Result};
