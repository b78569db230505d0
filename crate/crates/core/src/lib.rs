//! Monocular vision-based navigation.
//!
//! Sparse optical flow between consecutive frames yields a focus of expansion,
//! per-feature time to contact and an obstacle plane. Those feed a visual
//! potential field (goal attraction, obstacle repulsion, road-boundary Morse
//! field) whose gradient gives a heading reference tracked by a sliding-mode
//! controller on a kinematic bicycle model. A built-in ground-plane renderer
//! closes the loop without an external simulator.

// Parameter checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Small dense eliminations read more clearly with explicit row/column indices.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod egomotion;
pub mod error;
pub mod features;
pub mod flow;
pub mod imgproc;
pub mod obstacle;
pub mod pipeline;
pub mod potential;
pub mod replay;
pub mod scene;
pub mod svg;
pub mod trace;
pub mod vehicle;

pub use error::{Error, Result};
