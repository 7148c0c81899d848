//! Coarse-to-fine label refinement.
//!
//! Passages arrive with a coarse label from a fixed taxonomy. A small
//! projection head over frozen embeddings is trained so that each passage
//! moves toward the fine labels under its coarse label, first from weak
//! seeds found by exact name matching and then from its own most confident
//! predictions.

pub mod bootstrap;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod similarity;
pub mod synthetic;
pub mod taxonomy;
pub mod text;

pub use error::{Error, Result};
