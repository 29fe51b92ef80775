//! Block-sparse video semantic segmentation with temporal token reuse.
//!
//! Frames are partitioned into patch tokens; tokens whose raw-RGB cosine
//! similarity to the previous frame exceeds a threshold skip the backbone
//! entirely and reuse their cached per-stage features. Active tokens are
//! recomputed with a one-pixel halo sourced from current neighbors, cached
//! neighbors, or zeros at the frame boundary, keeping the sparse pass exactly
//! equivalent to the dense pass when nothing is reused.

pub mod backbone;
pub mod blockskip;
pub mod cache;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod patching;
pub mod tensor;

pub use error::{Result, TtrError};
