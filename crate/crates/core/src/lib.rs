//! Template-free single-object tracking with a pixel-level space-time
//! memory read.
//!
//! The pipeline: memory frames and their foreground-background label maps
//! are embedded by [`features`], every query pixel attends over every memory
//! pixel in [`reader`], an anchor-free [`head`] scores and regresses boxes on
//! the resulting grid, and [`memory`] decides which past frames form the
//! memory at each step. [`data`] produces crops and synthetic sequences,
//! [`train`] fits the model and [`eval`] runs and scores the tracker.

pub mod bbox;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod head;
pub mod memory;
pub mod model;
pub mod params;
pub mod reader;
pub mod tensor;
pub mod train;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::{Graph, Scalar, Tensor, Var};
