//! Zero-shot nuclei detection with grounding models.
//!
//! [`prompt_forge`] grounds the bare target noun, captions square crops of the coarse boxes,
//! counts shape and colour words and composes `"[shape] [color] [noun]"` prompts.
//! [`selftrain`] turns grounding results into pseudo-labels, fits a student on them and
//! promotes the student to teacher until the labels stop changing. [`evalkit`] scores
//! detections with COCO-style metrics.
//!
//! Every model sits behind the capability traits in [`backends`]. Builtin deterministic
//! implementations make the whole pipeline runnable on synthetic data ([`data`]); the
//! [`backends::remote`] client speaks the HTTP protocol of an external model server.

pub mod backends;
pub mod cli;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod prompt_forge;
mod fsutil;
pub mod seed;
pub mod raster;
pub mod selftrain;

pub use error::{Error, Result};
