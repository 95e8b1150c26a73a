//! Majority-or-minority loss mixing for imbalanced sequence labeling.
//!
//! The crate covers corpus handling, a synthetic corpus generator, a small
//! context-window tagger, the per-token and MoM losses, metrics, significance
//! testing, the span-extraction reformulation and an experiment harness.

pub mod corpus;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod mrc;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
