//! Post-hoc evaluation of open-vocabulary detectors on multi-label
//! social-activity benchmarks.
//!
//! The pipeline scores each predicted box from its per-token logits
//! ([`scoring`]), groups overlapping predictions around ground-truth anchors
//! ([`grouping`]), classifies grouped boxes with Dynamic Box Aggregation
//! ([`dba`]) and folds in the remaining boxes to produce AP and F1
//! ([`metrics`]). [`pipeline`] wires these together over a whole dataset;
//! [`synth`] generates seeded scenarios and carries an independent oracle.

pub mod dba;
pub mod error;
pub mod geometry;
pub mod grouping;
pub mod ingest;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod promptgen;
pub mod report;
pub mod scoring;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
