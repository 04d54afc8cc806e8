//! Shared domain types and coordinate conventions.
//!
//! Coordinates use the raster convention: origin at the top-left corner of an
//! image, `x` is the column and `y` the row, both 0-based and measured in
//! pixels. All distances are Euclidean pixel distances. Types here are plain
//! immutable value objects; file parsing and validation live in [`crate::dataset`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metadata for one acquired image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    /// Width in pixels (x extent), > 0.
    pub width: u32,
    /// Height in pixels (y extent), > 0.
    pub height: u32,
    /// Whether at least one ground-truth point references this image.
    pub has_animals: bool,
}

impl ImageMeta {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, has_animals: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            width,
            height,
            has_animals,
        })
    }

    /// True if (x, y) lies inside the image.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < f64::from(self.width) && y < f64::from(self.height)
    }
}

/// An annotated animal center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPoint {
    pub image_id: String,
    /// Column in pixels, `0 <= x < width`.
    pub x: f64,
    /// Row in pixels, `0 <= y < height`.
    pub y: f64,
    /// Identifier unique across the dataset.
    pub instance_id: String,
}

impl GroundTruthPoint {
    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// A predicted animal location with a confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    /// Confidence in [0, 1]. Out-of-range scores in input files are rejected,
    /// never clamped.
    pub score: f64,
}

impl ScoredDetection {
    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Checks score range and coordinate sanity (bounds against a concrete
    /// image are checked where image metadata is available).
    pub fn validate(&self) -> Result<()> {
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "detection score {} for image {:?} outside [0, 1]",
                self.score, self.image_id
            )));
        }
        if !self.x.is_finite() || !self.y.is_finite() || self.x < 0.0 || self.y < 0.0 {
            return Err(Error::Validation(format!(
                "detection coordinates ({}, {}) for image {:?} invalid",
                self.x, self.y, self.image_id
            )));
        }
        Ok(())
    }
}

/// The circular matching range around a ground-truth center. The disk is
/// closed: a detection exactly at `radius` counts as in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRange {
    radius: f64,
}

impl DistanceRange {
    pub fn new(radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::Validation(format!(
                "matching radius must be positive, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Closed-disk membership test.
    pub fn contains(&self, distance: f64) -> bool {
        distance <= self.radius
    }
}

/// Per-cell class of a label grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Background,
    Animal,
    Border,
}

impl ClassLabel {
    pub const COUNT: usize = 3;

    /// Fixed channel order used by probability grids and the loss kernel.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Background => 0,
            ClassLabel::Animal => 1,
            ClassLabel::Border => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(ClassLabel::Background),
            1 => Some(ClassLabel::Animal),
            2 => Some(ClassLabel::Border),
            _ => None,
        }
    }
}

/// Euclidean distance between two points in pixels.
pub fn euclidean_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx.hypot(dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_identity() {
        assert_eq!(euclidean_distance((0.0, 0.0), (0.0, 0.0)), 0.0);
    }

    #[test]
    fn distance_3_4_5() {
        assert_eq!(euclidean_distance((0.0, 0.0), (3.0, 4.0)), 5.0);
    }

    #[test]
    fn distance_axis_aligned() {
        assert_eq!(euclidean_distance((10.0, 10.0), (60.0, 10.0)), 50.0);
    }

    #[test]
    fn range_rejects_non_positive_radius() {
        assert!(DistanceRange::new(0.0).is_err());
        assert!(DistanceRange::new(-1.0).is_err());
        assert!(DistanceRange::new(f64::NAN).is_err());
    }

    #[test]
    fn range_is_closed_at_boundary() {
        let range = DistanceRange::new(50.0).unwrap();
        assert!(range.contains(50.0));
        assert!(!range.contains(50.0 + 1e-9));
    }

    #[test]
    fn score_outside_unit_interval_rejected() {
        let det = ScoredDetection {
            image_id: "img".into(),
            x: 1.0,
            y: 1.0,
            score: 1.2,
        };
        assert!(det.validate().is_err());
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_triangle(
            ax in -1e3..1e3f64, ay in -1e3..1e3f64,
            bx in -1e3..1e3f64, by in -1e3..1e3f64,
            cx in -1e3..1e3f64, cy in -1e3..1e3f64,
        ) {
            let a = (ax, ay);
            let b = (bx, by);
            let c = (cx, cy);
            prop_assert_eq!(euclidean_distance(a, b), euclidean_distance(b, a));
            prop_assert!(euclidean_distance(a, b) >= 0.0);
            prop_assert!(
                euclidean_distance(a, c) <= euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-9
            );
        }
    }
}
