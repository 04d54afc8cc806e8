//! Census-oriented evaluation and data-pipeline tooling for point-based
//! animal detection in large UAV image campaigns.
//!
//! Detectors for wildlife censuses are judged by count fidelity rather than
//! pixel-precise localization, and their output is screened by human
//! operators tile by tile. This crate implements the full tool chain around
//! that workflow, without any network inference:
//!
//! * [`matching`] — the census matching protocol: detections pair with ground
//!   truth inside a circular pixel range via maximum-cardinality,
//!   minimum-distance bipartite matching, plus an exhaustive oracle for
//!   validating it;
//! * [`metrics`] — precision-recall curves, distance-threshold sweeps,
//!   tile-based screening effort and per-image detection statistics;
//! * [`dataset`] — CSV/JSON ingestion, dataset statistics and the image-wise
//!   70/10/20 split with animal-count priority and a shared test set;
//! * [`grid`] — label grids with a border class around animal cells, patch
//!   layouts, probability-grid stitching and detection extraction;
//! * [`schedule`] — per-epoch training plans (curriculum, hard negatives,
//!   augmentation, learning-rate ladder), inverse-frequency class weights and
//!   the weighted cross-entropy kernel;
//! * [`simulate`] — synthetic campaigns with planted ground truth and a
//!   ledger for closed-loop verification.
//!
//! The `census-eval` binary exposes every workflow as a subcommand; the
//! crate's `examples/` directory shows one runnable program per capability.
//!
//! ```
//! use census_eval::matching::match_census;
//! use census_eval::model::{DistanceRange, GroundTruthPoint, ScoredDetection};
//!
//! let ground_truth = vec![GroundTruthPoint {
//!     image_id: "img".into(),
//!     x: 100.0,
//!     y: 100.0,
//!     instance_id: "a".into(),
//! }];
//! let detections = vec![
//!     ScoredDetection { image_id: "img".into(), x: 120.0, y: 100.0, score: 0.9 },
//!     ScoredDetection { image_id: "img".into(), x: 220.0, y: 100.0, score: 0.8 },
//! ];
//! let report = match_census(
//!     &ground_truth,
//!     &detections,
//!     DistanceRange::new(50.0).unwrap(),
//! ).unwrap();
//! assert_eq!(report.true_positives(), 1);
//! assert_eq!(report.false_positives(), 1);
//! ```

pub mod dataset;
pub mod error;
pub mod grid;
pub mod manifest;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod schedule;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    euclidean_distance, ClassLabel, DistanceRange, GroundTruthPoint, ImageMeta, ScoredDetection,
};
