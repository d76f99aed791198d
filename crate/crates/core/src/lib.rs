//! Desk-scale federated learning configuration simulator.
//!
//! The crate trains a small pixel-wise model on seeded synthetic "MRI-like"
//! cases spread over heterogeneous clients, federates it with one of five
//! server strategies, and evaluates the result with segmentation, lesion
//! detection and resampling statistics.

pub mod aggregate;
pub mod error;
pub mod expcli;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod orchestrate;
pub mod paramcore;
pub mod seeding;
pub mod stats;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
