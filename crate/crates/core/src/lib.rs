//! Long-tailed class-incremental streams with patch-grafting augmentation.
//!
//! The crate is organised along the data flow of a run:
//!
//! - [`streamgen`] builds single- and dual-level imbalanced stream plans and
//!   draws concrete items for each task.
//! - [`embedstore`] holds embeddings, their binary store format, cosine
//!   similarity and the embedding providers.
//! - [`patcher`] scores and selects patches, grafts tail patches into head
//!   images and runs the per-task balancing loop.
//! - [`smoother`] blends prior-task count extrema into the current task's
//!   balancing targets with an adaptive coefficient.
//! - [`evaluator`] is a nearest-class-mean continual learner with average
//!   accuracy and forgetting.
//! - [`run`] wires everything into reproducible runs driven by one config.

pub mod embedstore;
pub mod error;
pub mod evaluator;
pub mod manifest;
pub mod patcher;
pub mod run;
pub mod seed;
pub mod smoother;
pub mod streamgen;
pub mod tensor;

pub use error::{Error, Result};
