//! Aggregation of per-image match reports into precision-recall curves,
//! distance-threshold sweeps, tile-based screening statistics and per-image
//! detection counts.
//!
//! Threshold semantics: a detection survives threshold `t` iff `score >= t`,
//! so `t = 0` keeps every detection. Degenerate operating points (no ground
//! truth, or no surviving detections) keep the conventional value 1.0 for the
//! undefined rate and carry `degenerate = true` instead of being silently
//! folded into the curve.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::match_census;
use crate::model::{DistanceRange, GroundTruthPoint, ImageMeta, ScoredDetection};

/// Default matching radius in pixels.
pub const DEFAULT_RADIUS: f64 = 50.0;

/// Default radii for distance-threshold sweeps, in pixels.
pub const DEFAULT_SWEEP_RADII: [f64; 5] = [10.0, 25.0, 50.0, 100.0, 200.0];

/// Counts and rates at one confidence threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when either rate was undefined (no ground truth or no surviving
    /// detections) and the conventional value 1.0 was substituted.
    pub degenerate: bool,
}

impl OperatingPoint {
    pub fn from_counts(threshold: f64, tp: u64, fp: u64, fn_: u64) -> Self {
        let (precision, recall, f1) = rates_from_counts(tp as f64, fp as f64, fn_ as f64);
        OperatingPoint {
            threshold,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
            degenerate: tp + fp == 0 || tp + fn_ == 0,
        }
    }
}

/// Precision, recall and F1 from (possibly fractional, e.g. averaged) counts.
///
/// Precision is 1 when there are no detections and recall is 1 when there is
/// no ground truth; F1 is 0 when precision + recall is 0.
pub fn rates_from_counts(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Splits a point list into per-image groups, keyed by image id.
fn group_by_image<'a, T, F: Fn(&T) -> &str>(items: &'a [T], key: F) -> BTreeMap<&'a str, Vec<&'a T>> {
    let mut map: BTreeMap<&str, Vec<&T>> = BTreeMap::new();
    for item in items {
        map.entry(key(item)).or_default().push(item);
    }
    map
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    for pair in thresholds.windows(2) {
        if pair[0] > pair[1] {
            return Err(Error::Validation(
                "thresholds must be sorted ascending".into(),
            ));
        }
    }
    if let Some(t) = thresholds
        .iter()
        .find(|t| !t.is_finite() || !(0.0..=1.0).contains(*t))
    {
        return Err(Error::Validation(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// The exact-curve threshold set: every distinct score present, ascending.
pub fn exact_thresholds(detections: &[ScoredDetection]) -> Vec<f64> {
    let mut scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    scores
}

/// `n + 1` evenly spaced thresholds covering [0, 1], for plotting.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n.max(1) as f64).collect()
}

/// Matches every image at one threshold and sums the counts.
fn counts_at_threshold(
    gt_by_image: &BTreeMap<&str, Vec<&GroundTruthPoint>>,
    det_by_image: &BTreeMap<&str, Vec<&ScoredDetection>>,
    range: DistanceRange,
    threshold: f64,
) -> Result<(u64, u64, u64)> {
    let image_ids: Vec<&str> = {
        let mut ids: Vec<&str> = gt_by_image.keys().chain(det_by_image.keys()).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let per_image: Result<Vec<(u64, u64, u64)>> = image_ids
        .par_iter()
        .map(|id| {
            let gts: Vec<GroundTruthPoint> = gt_by_image
                .get(id)
                .map(|v| v.iter().map(|&g| g.clone()).collect())
                .unwrap_or_default();
            let dets: Vec<ScoredDetection> = det_by_image
                .get(id)
                .map(|v| {
                    v.iter()
                        .filter(|d| d.score >= threshold)
                        .map(|&d| d.clone())
                        .collect()
                })
                .unwrap_or_default();
            let report = match_census(&gts, &dets, range)?;
            Ok((
                report.true_positives(),
                report.false_positives(),
                report.false_negatives(),
            ))
        })
        .collect();
    Ok(per_image?
        .into_iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2)))
}

/// Precision-recall curve over the dataset: one operating point per threshold,
/// counts summed over per-image census matchings.
pub fn pr_curve(
    dataset_gt: &[GroundTruthPoint],
    dataset_detections: &[ScoredDetection],
    range: DistanceRange,
    thresholds: &[f64],
) -> Result<Vec<OperatingPoint>> {
    validate_thresholds(thresholds)?;
    let gt_by_image = group_by_image(dataset_gt, |g| g.image_id.as_str());
    let det_by_image = group_by_image(dataset_detections, |d| d.image_id.as_str());
    thresholds
        .iter()
        .map(|&t| {
            let (tp, fp, fn_) = counts_at_threshold(&gt_by_image, &det_by_image, range, t)?;
            Ok(OperatingPoint::from_counts(t, tp, fp, fn_))
        })
        .collect()
}

/// One PR curve per matching radius.
pub fn sweep_distance_thresholds(
    dataset_gt: &[GroundTruthPoint],
    dataset_detections: &[ScoredDetection],
    radii: &[f64],
    thresholds: &[f64],
) -> Result<Vec<(f64, Vec<OperatingPoint>)>> {
    radii
        .iter()
        .map(|&r| {
            let range = DistanceRange::new(r)?;
            Ok((r, pr_curve(dataset_gt, dataset_detections, range, thresholds)?))
        })
        .collect()
}

/// Fixed-size tile grid laid over every image; partial edge tiles count as
/// full tiles since an operator has to screen them regardless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGridSpec {
    pub tile_width: u32,
    pub tile_height: u32,
}

impl TileGridSpec {
    pub fn new(tile_width: u32, tile_height: u32) -> Result<Self> {
        if tile_width == 0 || tile_height == 0 {
            return Err(Error::Validation("tile dimensions must be positive".into()));
        }
        Ok(Self {
            tile_width,
            tile_height,
        })
    }

    /// Tiles needed to cover one image (ceiling division per axis).
    pub fn tiles_per_image(&self, image: &ImageMeta) -> u64 {
        let nx = u64::from(image.width.div_ceil(self.tile_width));
        let ny = u64::from(image.height.div_ceil(self.tile_height));
        nx * ny
    }

    fn tile_of(&self, x: f64, y: f64) -> (u32, u32) {
        (
            (x / f64::from(self.tile_width)).floor() as u32,
            (y / f64::from(self.tile_height)).floor() as u32,
        )
    }
}

impl Default for TileGridSpec {
    fn default() -> Self {
        Self {
            tile_width: 1000,
            tile_height: 1000,
        }
    }
}

/// Tile-level confusion counts for the screening-effort evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileReport {
    pub threshold: f64,
    pub tiles_total: u64,
    pub tiles_with_gt: u64,
    pub tiles_with_detections: u64,
    pub tile_tp: u64,
    pub tile_fp: u64,
    pub tile_fn: u64,
}

fn check_points_in_images<'a>(
    images: &BTreeMap<&str, &ImageMeta>,
    points: impl Iterator<Item = (&'a str, f64, f64)>,
) -> Result<()> {
    for (id, x, y) in points {
        let image = images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))?;
        if !image.contains(x, y) {
            return Err(Error::Validation(format!(
                "point ({x}, {y}) outside image {id:?} ({}x{})",
                image.width, image.height
            )));
        }
    }
    Ok(())
}

/// Counts tiles containing ground truth and/or above-threshold detections.
pub fn tile_report(
    dataset_gt: &[GroundTruthPoint],
    dataset_detections: &[ScoredDetection],
    images: &[ImageMeta],
    spec: TileGridSpec,
    threshold: f64,
) -> Result<TileReport> {
    let image_map: BTreeMap<&str, &ImageMeta> =
        images.iter().map(|m| (m.image_id.as_str(), m)).collect();
    check_points_in_images(&image_map, dataset_gt.iter().map(|g| (g.image_id.as_str(), g.x, g.y)))?;
    check_points_in_images(
        &image_map,
        dataset_detections
            .iter()
            .map(|d| (d.image_id.as_str(), d.x, d.y)),
    )?;

    let tiles_total = images.iter().map(|m| spec.tiles_per_image(m)).sum();

    let mut gt_tiles: std::collections::BTreeSet<(&str, u32, u32)> = Default::default();
    for g in dataset_gt {
        let (tx, ty) = spec.tile_of(g.x, g.y);
        gt_tiles.insert((g.image_id.as_str(), tx, ty));
    }
    let mut det_tiles: std::collections::BTreeSet<(&str, u32, u32)> = Default::default();
    for d in dataset_detections.iter().filter(|d| d.score >= threshold) {
        let (tx, ty) = spec.tile_of(d.x, d.y);
        det_tiles.insert((d.image_id.as_str(), tx, ty));
    }

    let tile_tp = gt_tiles.intersection(&det_tiles).count() as u64;
    let tiles_with_gt = gt_tiles.len() as u64;
    let tiles_with_detections = det_tiles.len() as u64;
    Ok(TileReport {
        threshold,
        tiles_total,
        tiles_with_gt,
        tiles_with_detections,
        tile_tp,
        tile_fp: tiles_with_detections - tile_tp,
        tile_fn: tiles_with_gt - tile_tp,
    })
}

/// One point of the screening-effort curve: instance-based recall against the
/// number of tiles an operator would have to verify.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningPoint {
    pub threshold: f64,
    pub animal_recall: f64,
    pub tiles_with_detections: u64,
    pub degenerate: bool,
}

/// Pairs instance-based recall (census matching at `range`) with the tile
/// count at each threshold.
pub fn screening_effort_curve(
    dataset_gt: &[GroundTruthPoint],
    dataset_detections: &[ScoredDetection],
    images: &[ImageMeta],
    spec: TileGridSpec,
    range: DistanceRange,
    thresholds: &[f64],
) -> Result<Vec<ScreeningPoint>> {
    let curve = pr_curve(dataset_gt, dataset_detections, range, thresholds)?;
    curve
        .iter()
        .map(|point| {
            let tiles = tile_report(
                dataset_gt,
                dataset_detections,
                images,
                spec,
                point.threshold,
            )?;
            Ok(ScreeningPoint {
                threshold: point.threshold,
                animal_recall: point.recall,
                tiles_with_detections: tiles.tiles_with_detections,
                degenerate: point.degenerate,
            })
        })
        .collect()
}

/// Per-image detection-count summary at one threshold.
///
/// Only images present in the detection list appear; an image whose detections
/// all fall below the threshold is reported with count 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub threshold: f64,
    pub per_image: BTreeMap<String, u64>,
    pub min: u64,
    pub max: u64,
    /// detection count -> number of images with that count.
    pub histogram: BTreeMap<u64, u64>,
}

pub fn per_image_detection_stats(
    dataset_detections: &[ScoredDetection],
    threshold: f64,
) -> DetectionStats {
    let mut per_image: BTreeMap<String, u64> = BTreeMap::new();
    for d in dataset_detections {
        let entry = per_image.entry(d.image_id.clone()).or_insert(0);
        if d.score >= threshold {
            *entry += 1;
        }
    }
    let mut histogram: BTreeMap<u64, u64> = BTreeMap::new();
    for &count in per_image.values() {
        *histogram.entry(count).or_insert(0) += 1;
    }
    DetectionStats {
        threshold,
        min: per_image.values().copied().min().unwrap_or(0),
        max: per_image.values().copied().max().unwrap_or(0),
        per_image,
        histogram,
    }
}

/// Writes operating points as CSV with the columns
/// `threshold,tp,fp,fn,precision,recall,f1`.
pub fn write_operating_points_csv<W: Write>(writer: W, points: &[OperatingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "tp", "fp", "fn", "precision", "recall", "f1"])?;
    for p in points {
        w.write_record(&[
            p.threshold.to_string(),
            p.true_positives.to_string(),
            p.false_positives.to_string(),
            p.false_negatives.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the screening-effort curve as CSV with the columns
/// `threshold,animal_recall,tiles_with_detections`.
pub fn write_screening_curve_csv<W: Write>(writer: W, points: &[ScreeningPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "animal_recall", "tiles_with_detections"])?;
    for p in points {
        w.write_record(&[
            p.threshold.to_string(),
            p.animal_recall.to_string(),
            p.tiles_with_detections.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience: CSV emission straight to a path.
pub fn save_operating_points_csv(path: &Path, points: &[OperatingPoint]) -> Result<()> {
    write_operating_points_csv(std::fs::File::create(path)?, points)
}

pub fn save_screening_curve_csv(path: &Path, points: &[ScreeningPoint]) -> Result<()> {
    write_screening_curve_csv(std::fs::File::create(path)?, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(image: &str, x: f64, y: f64, id: &str) -> GroundTruthPoint {
        GroundTruthPoint {
            image_id: image.into(),
            x,
            y,
            instance_id: id.into(),
        }
    }

    fn det(image: &str, x: f64, y: f64, score: f64) -> ScoredDetection {
        ScoredDetection {
            image_id: image.into(),
            x,
            y,
            score,
        }
    }

    fn image(id: &str, w: u32, h: u32, has_animals: bool) -> ImageMeta {
        ImageMeta::new(id, w, h, has_animals).unwrap()
    }

    fn radius(r: f64) -> DistanceRange {
        DistanceRange::new(r).unwrap()
    }

    #[test]
    fn perfect_detector_scores_one() {
        let gts = vec![gt("a", 10.0, 10.0, "g0"), gt("b", 20.0, 20.0, "g1")];
        let dets = vec![det("a", 10.0, 10.0, 1.0), det("b", 20.0, 20.0, 1.0)];
        let curve = pr_curve(&gts, &dets, radius(50.0), &[0.0, 0.5, 1.0]).unwrap();
        for p in curve {
            assert_eq!(p.precision, 1.0);
            assert_eq!(p.recall, 1.0);
            assert_eq!(p.f1, 1.0);
            assert!(!p.degenerate);
        }
    }

    #[test]
    fn consistency_anchor_fractional_counts() {
        // Averaged counts reported for a detector at 0.8 recall.
        let (precision, recall, f1) = rates_from_counts(188.0, 447.3, 47.0);
        assert!((precision - 0.296).abs() <= 0.005, "precision {precision}");
        assert!((recall - 0.8).abs() <= 1e-12, "recall {recall}");
        assert!((f1 - 0.433).abs() <= 0.005, "f1 {f1}");
    }

    #[test]
    fn recall_non_increasing_in_threshold() {
        let gts = vec![gt("a", 10.0, 10.0, "g0"), gt("a", 200.0, 200.0, "g1")];
        let dets = vec![det("a", 12.0, 10.0, 0.9), det("a", 202.0, 200.0, 0.4)];
        let thresholds = [0.0, 0.5, 0.95];
        let curve = pr_curve(&gts, &dets, radius(50.0), &thresholds).unwrap();
        assert_eq!(curve[0].recall, 1.0);
        assert_eq!(curve[1].recall, 0.5);
        assert_eq!(curve[2].recall, 0.0);
        for pair in curve.windows(2) {
            assert!(pair[1].recall <= pair[0].recall);
            assert!(pair[1].false_positives <= pair[0].false_positives);
        }
    }

    #[test]
    fn unsorted_thresholds_rejected() {
        assert!(pr_curve(&[], &[], radius(50.0), &[0.5, 0.1]).is_err());
        assert!(pr_curve(&[], &[], radius(50.0), &[0.5, 1.5]).is_err());
    }

    #[test]
    fn empty_ground_truth_flags_degenerate() {
        let dets = vec![det("a", 10.0, 10.0, 0.9)];
        let curve = pr_curve(&[], &dets, radius(50.0), &[0.0]).unwrap();
        assert!(curve[0].degenerate);
        assert_eq!(curve[0].recall, 1.0);
        assert_eq!(curve[0].false_positives, 1);
    }

    #[test]
    fn sweep_respects_radius() {
        // Detections offset 30 px from each ground truth.
        let gts = vec![gt("a", 100.0, 100.0, "g0"), gt("a", 300.0, 300.0, "g1")];
        let dets = vec![det("a", 130.0, 100.0, 0.8), det("a", 330.0, 300.0, 0.8)];
        let sweep =
            sweep_distance_thresholds(&gts, &dets, &[10.0, 50.0], &[0.0, 0.5]).unwrap();
        let (r10, curve10) = &sweep[0];
        assert_eq!(*r10, 10.0);
        for p in curve10 {
            assert_eq!(p.recall, 0.0);
        }
        let (_, curve50) = &sweep[1];
        for p in curve50 {
            assert_eq!(p.recall, 1.0);
        }
    }

    #[test]
    fn additivity_over_image_sets() {
        let gts_a = vec![gt("a", 10.0, 10.0, "g0")];
        let gts_b = vec![gt("b", 10.0, 10.0, "g1"), gt("b", 400.0, 10.0, "g2")];
        let dets_a = vec![det("a", 15.0, 10.0, 0.7), det("a", 300.0, 300.0, 0.6)];
        let dets_b = vec![det("b", 12.0, 10.0, 0.9)];
        let thresholds = [0.0, 0.65, 0.8];
        let curve_a = pr_curve(&gts_a, &dets_a, radius(50.0), &thresholds).unwrap();
        let curve_b = pr_curve(&gts_b, &dets_b, radius(50.0), &thresholds).unwrap();
        let mut all_gt = gts_a.clone();
        all_gt.extend(gts_b.clone());
        let mut all_det = dets_a.clone();
        all_det.extend(dets_b.clone());
        let combined = pr_curve(&all_gt, &all_det, radius(50.0), &thresholds).unwrap();
        for ((a, b), c) in curve_a.iter().zip(&curve_b).zip(&combined) {
            assert_eq!(a.true_positives + b.true_positives, c.true_positives);
            assert_eq!(a.false_positives + b.false_positives, c.false_positives);
            assert_eq!(a.false_negatives + b.false_negatives, c.false_negatives);
        }
    }

    #[test]
    fn canonical_tile_total() {
        let images: Vec<ImageMeta> = (0..128)
            .map(|i| image(&format!("img_{i:04}"), 4000, 3000, false))
            .collect();
        let report =
            tile_report(&[], &[], &images, TileGridSpec::default(), 0.0).unwrap();
        assert_eq!(report.tiles_total, 1536);
        assert_eq!(report.tiles_with_detections, 0);
        assert_eq!(report.tile_fn, report.tiles_with_gt);
    }

    #[test]
    fn partial_tiles_count_as_full() {
        let images = vec![image("a", 1001, 999, false)];
        let spec = TileGridSpec::new(1000, 1000).unwrap();
        let report = tile_report(&[], &[], &images, spec, 0.0).unwrap();
        assert_eq!(report.tiles_total, 2);
    }

    #[test]
    fn tile_confusion_counts() {
        let images = vec![image("a", 2000, 1000, true)];
        let spec = TileGridSpec::new(1000, 1000).unwrap();
        let gts = vec![gt("a", 100.0, 100.0, "g0")];
        // One detection in the ground-truth tile, one in the empty tile.
        let dets = vec![det("a", 150.0, 150.0, 0.9), det("a", 1500.0, 500.0, 0.9)];
        let report = tile_report(&gts, &dets, &images, spec, 0.5).unwrap();
        assert_eq!(report.tiles_total, 2);
        assert_eq!(report.tiles_with_gt, 1);
        assert_eq!(report.tiles_with_detections, 2);
        assert_eq!(report.tile_tp, 1);
        assert_eq!(report.tile_fp, 1);
        assert_eq!(report.tile_fn, 0);
        assert_eq!(report.tile_tp + report.tile_fn, report.tiles_with_gt);
        assert_eq!(report.tile_tp + report.tile_fp, report.tiles_with_detections);
    }

    #[test]
    fn tile_report_rejects_unknown_images() {
        let images = vec![image("a", 1000, 1000, false)];
        let dets = vec![det("b", 10.0, 10.0, 0.9)];
        assert!(matches!(
            tile_report(&[], &dets, &images, TileGridSpec::default(), 0.0),
            Err(Error::UnknownImage(_))
        ));
    }

    #[test]
    fn screening_curve_flat_for_perfect_detector() {
        let images = vec![image("a", 2000, 2000, true)];
        let gts = vec![gt("a", 100.0, 100.0, "g0"), gt("a", 1500.0, 1500.0, "g1")];
        let dets = vec![det("a", 100.0, 100.0, 0.9), det("a", 1500.0, 1500.0, 0.8)];
        let curve = screening_effort_curve(
            &gts,
            &dets,
            &images,
            TileGridSpec::new(1000, 1000).unwrap(),
            radius(50.0),
            &[0.0, 0.5],
        )
        .unwrap();
        let gt_tiles = 2;
        for p in &curve {
            assert_eq!(p.animal_recall, 1.0);
            assert_eq!(p.tiles_with_detections, gt_tiles);
        }
    }

    #[test]
    fn detection_stats_empty_input() {
        let stats = per_image_detection_stats(&[], 0.5);
        assert_eq!(stats.min, 0);
        assert_eq!(stats.max, 0);
        assert!(stats.per_image.is_empty());
        assert!(stats.histogram.is_empty());
    }

    #[test]
    fn detection_stats_counts_above_threshold() {
        let dets = vec![
            det("a", 1.0, 1.0, 0.9),
            det("a", 2.0, 2.0, 0.8),
            det("b", 3.0, 3.0, 0.2),
        ];
        let stats = per_image_detection_stats(&dets, 0.5);
        assert_eq!(stats.per_image["a"], 2);
        assert_eq!(stats.per_image["b"], 0);
        assert_eq!(stats.max, 2);
        assert_eq!(stats.min, 0);
        assert_eq!(stats.histogram[&2], 1);
        assert_eq!(stats.histogram[&0], 1);
    }

    #[test]
    fn csv_columns_are_fixed() {
        let points = vec![OperatingPoint::from_counts(0.5, 3, 1, 2)];
        let mut buf = Vec::new();
        write_operating_points_csv(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "threshold,tp,fp,fn,precision,recall,f1");
        assert_eq!(lines.next().unwrap(), "0.5,3,1,2,0.75,0.6,0.6666666666666665");
    }
}
