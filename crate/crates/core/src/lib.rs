//! Ordinal-bias toolkit for temporal action segmentation datasets.
//!
//! Loads frame-level annotations and features, measures how predictable the
//! action order is, manipulates videos to break that order, scores
//! predictions, and ships small baselines that exhibit the bias on
//! synthetic data.

pub mod baseline;
pub mod error;
pub mod ingest;
pub mod manipulate;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod types;

pub use error::{Error, NpyError, Result};
pub use types::{
    flatten, segments_of, Dataset, FeatureMatrix, FloatDtype, LabelId, LabelVocab, Orientation, SeedSpec, Segment,
    Split, VideoAnnotation, MASK_VALUE,
};
