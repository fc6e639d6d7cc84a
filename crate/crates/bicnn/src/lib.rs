//! Text classification of radiology reports with a two-channel convolutional
//! network (one channel reads the report in order, the other in reverse),
//! built on a small purpose-built reverse-mode autodiff core.
//!
//! The crate also ships the surrounding experiment machinery: preprocessing,
//! a seeded Adam trainer with cross-validation, an n-gram linear baseline,
//! and a deterministic synthetic-report generator. See the `examples/`
//! directory for runnable walkthroughs of each capability.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
