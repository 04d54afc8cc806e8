//! Annotation/detection file ingestion, dataset statistics and image-wise
//! splitting with animal-count priority.
//!
//! # File formats
//!
//! All files are UTF-8 CSV with LF line endings and a header row; numeric
//! fields are plain decimal.
//!
//! * `annotations.csv` — one row per animal:
//!   `image_id,width,height,x,y,instance_id`
//! * `images.csv` — images without animals: `image_id,width,height`
//! * `detections.csv` — `image_id,x,y,score`
//! * `splits.json` — `{split_id: {image_id: "train"|"val"|"test"}}`
//!
//! # Splitting
//!
//! Images are assigned as a whole (no image in two sets). Animal-bearing
//! images are allocated greedily in descending animal count to the set whose
//! animal total is furthest below its target fraction; empty images are then
//! distributed the same way against image-count targets. The test set is
//! derived without any randomness (ties broken by image id), so it is
//! identical across split ids and across seeds; train and val are reshuffled
//! per split id with the seeded generator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruthPoint, ImageMeta, ScoredDetection};

/// A validated set of images plus their point annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageMeta>,
    pub ground_truth: Vec<GroundTruthPoint>,
}

impl Dataset {
    /// Builds a dataset, validating referential integrity: unique image ids,
    /// unique instance ids, in-bounds coordinates and consistent
    /// `has_animals` flags.
    pub fn new(images: Vec<ImageMeta>, ground_truth: Vec<GroundTruthPoint>) -> Result<Self> {
        let mut by_id: BTreeMap<&str, &ImageMeta> = BTreeMap::new();
        for image in &images {
            if by_id.insert(image.image_id.as_str(), image).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate image id {:?}",
                    image.image_id
                )));
            }
        }
        let mut instance_ids = BTreeSet::new();
        let mut with_points = BTreeSet::new();
        for point in &ground_truth {
            let image = by_id
                .get(point.image_id.as_str())
                .ok_or_else(|| Error::UnknownImage(point.image_id.clone()))?;
            if !image.contains(point.x, point.y) {
                return Err(Error::Validation(format!(
                    "annotation {:?} at ({}, {}) outside image {:?} ({}x{})",
                    point.instance_id, point.x, point.y, image.image_id, image.width, image.height
                )));
            }
            if !instance_ids.insert(point.instance_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate instance id {:?}",
                    point.instance_id
                )));
            }
            with_points.insert(point.image_id.as_str());
        }
        for image in &images {
            let actual = with_points.contains(image.image_id.as_str());
            if image.has_animals != actual {
                return Err(Error::Validation(format!(
                    "image {:?} has_animals={} but {} annotations reference it",
                    image.image_id,
                    image.has_animals,
                    if actual { "some" } else { "no" }
                )));
            }
        }
        Ok(Self {
            images,
            ground_truth,
        })
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageMeta> {
        self.images.iter().find(|m| m.image_id == image_id)
    }

    /// Animals per image id (images without annotations map to 0).
    pub fn animal_counts(&self) -> BTreeMap<&str, u64> {
        let mut counts: BTreeMap<&str, u64> = self
            .images
            .iter()
            .map(|m| (m.image_id.as_str(), 0))
            .collect();
        for point in &self.ground_truth {
            *counts.get_mut(point.image_id.as_str()).unwrap() += 1;
        }
        counts
    }

    pub fn total_animals(&self) -> u64 {
        self.ground_truth.len() as u64
    }

    /// Ground truth of one image, in dataset order.
    pub fn ground_truth_for(&self, image_id: &str) -> Vec<&GroundTruthPoint> {
        self.ground_truth
            .iter()
            .filter(|g| g.image_id == image_id)
            .collect()
    }
}

/// The three split sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl SplitSet {
    pub const ALL: [SplitSet; 3] = [SplitSet::Train, SplitSet::Val, SplitSet::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitSet::Train => "train",
            SplitSet::Val => "val",
            SplitSet::Test => "test",
        }
    }
}

/// One train/val/test assignment of every image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split_id: u32,
    pub mapping: BTreeMap<String, SplitSet>,
}

impl SplitAssignment {
    pub fn image_ids_in(&self, set: SplitSet) -> Vec<&str> {
        self.mapping
            .iter()
            .filter(|(_, &s)| s == set)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn read_u32(record: &csv::StringRecord, idx: usize, path: &str, line: u64, field: &str) -> Result<u32> {
    record
        .get(idx)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line,
            message: format!("missing field {field}"),
        })?
        .trim()
        .parse()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line,
            message: format!("field {field}: {e}"),
        })
}

fn read_f64(record: &csv::StringRecord, idx: usize, path: &str, line: u64, field: &str) -> Result<f64> {
    record
        .get(idx)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line,
            message: format!("missing field {field}"),
        })?
        .trim()
        .parse()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line,
            message: format!("field {field}: {e}"),
        })
}

fn read_str(record: &csv::StringRecord, idx: usize, path: &str, line: u64, field: &str) -> Result<String> {
    Ok(record
        .get(idx)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line,
            message: format!("missing field {field}"),
        })?
        .to_string())
}

/// Loads annotations plus the list of empty images and assembles a validated
/// dataset. Images are returned sorted by id.
pub fn load_annotations(annotations_path: &Path, images_path: &Path) -> Result<Dataset> {
    let ann_name = annotations_path.display().to_string();
    let mut reader = csv::Reader::from_path(annotations_path)?;
    let mut dims: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    let mut ground_truth = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let image_id = read_str(&record, 0, &ann_name, line, "image_id")?;
        let width = read_u32(&record, 1, &ann_name, line, "width")?;
        let height = read_u32(&record, 2, &ann_name, line, "height")?;
        let x = read_f64(&record, 3, &ann_name, line, "x")?;
        let y = read_f64(&record, 4, &ann_name, line, "y")?;
        let instance_id = read_str(&record, 5, &ann_name, line, "instance_id")?;
        if let Some(&(w, h)) = dims.get(&image_id) {
            if (w, h) != (width, height) {
                return Err(Error::Parse {
                    path: ann_name,
                    line,
                    message: format!(
                        "inconsistent dimensions for image {image_id:?}: {w}x{h} vs {width}x{height}"
                    ),
                });
            }
        } else {
            dims.insert(image_id.clone(), (width, height));
        }
        ground_truth.push(GroundTruthPoint {
            image_id,
            x,
            y,
            instance_id,
        });
    }

    let img_name = images_path.display().to_string();
    let mut reader = csv::Reader::from_path(images_path)?;
    let mut empty_dims: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let image_id = read_str(&record, 0, &img_name, line, "image_id")?;
        let width = read_u32(&record, 1, &img_name, line, "width")?;
        let height = read_u32(&record, 2, &img_name, line, "height")?;
        if dims.contains_key(&image_id) {
            return Err(Error::Parse {
                path: img_name,
                line,
                message: format!(
                    "image {image_id:?} listed as empty but has annotations"
                ),
            });
        }
        if empty_dims.insert(image_id.clone(), (width, height)).is_some() {
            return Err(Error::Parse {
                path: img_name,
                line,
                message: format!("duplicate image id {image_id:?}"),
            });
        }
    }

    let mut images = Vec::new();
    for (id, (w, h)) in &dims {
        images.push(ImageMeta::new(id.clone(), *w, *h, true)?);
    }
    for (id, (w, h)) in &empty_dims {
        images.push(ImageMeta::new(id.clone(), *w, *h, false)?);
    }
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Dataset::new(images, ground_truth)
}

/// Loads a detection list, validating score range and coordinate sanity.
/// Bounds against image dimensions are checked by [`validate_detections`].
pub fn load_detections(path: &Path) -> Result<Vec<ScoredDetection>> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let mut detections = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let detection = ScoredDetection {
            image_id: read_str(&record, 0, &name, line, "image_id")?,
            x: read_f64(&record, 1, &name, line, "x")?,
            y: read_f64(&record, 2, &name, line, "y")?,
            score: read_f64(&record, 3, &name, line, "score")?,
        };
        detection.validate().map_err(|e| Error::Parse {
            path: name.clone(),
            line,
            message: e.to_string(),
        })?;
        detections.push(detection);
    }
    Ok(detections)
}

/// Checks that every detection references a dataset image and lies inside it.
pub fn validate_detections(dataset: &Dataset, detections: &[ScoredDetection]) -> Result<()> {
    let by_id: BTreeMap<&str, &ImageMeta> = dataset
        .images
        .iter()
        .map(|m| (m.image_id.as_str(), m))
        .collect();
    for det in detections {
        let image = by_id
            .get(det.image_id.as_str())
            .ok_or_else(|| Error::UnknownImage(det.image_id.clone()))?;
        if !image.contains(det.x, det.y) {
            return Err(Error::Validation(format!(
                "detection at ({}, {}) outside image {:?} ({}x{})",
                det.x, det.y, image.image_id, image.width, image.height
            )));
        }
    }
    Ok(())
}

/// Writes `annotations.csv` and `images.csv` for a dataset.
pub fn save_annotations(dataset: &Dataset, annotations_path: &Path, images_path: &Path) -> Result<()> {
    let dims: BTreeMap<&str, (u32, u32)> = dataset
        .images
        .iter()
        .map(|m| (m.image_id.as_str(), (m.width, m.height)))
        .collect();
    let mut w = csv::Writer::from_path(annotations_path)?;
    w.write_record(["image_id", "width", "height", "x", "y", "instance_id"])?;
    for point in &dataset.ground_truth {
        let (width, height) = dims[point.image_id.as_str()];
        w.write_record(&[
            point.image_id.clone(),
            width.to_string(),
            height.to_string(),
            point.x.to_string(),
            point.y.to_string(),
            point.instance_id.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(images_path)?;
    w.write_record(["image_id", "width", "height"])?;
    for image in dataset.images.iter().filter(|m| !m.has_animals) {
        w.write_record(&[
            image.image_id.clone(),
            image.width.to_string(),
            image.height.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `detections.csv`.
pub fn save_detections(detections: &[ScoredDetection], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "x", "y", "score"])?;
    for det in detections {
        w.write_record(&[
            det.image_id.clone(),
            det.x.to_string(),
            det.y.to_string(),
            det.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes split assignments as `{split_id: {image_id: set}}`.
pub fn write_splits_json<W: Write>(writer: W, splits: &[SplitAssignment]) -> Result<()> {
    let map: BTreeMap<String, &BTreeMap<String, SplitSet>> = splits
        .iter()
        .map(|s| (s.split_id.to_string(), &s.mapping))
        .collect();
    serde_json::to_writer_pretty(writer, &map)?;
    Ok(())
}

pub fn read_splits_json<R: Read>(reader: R) -> Result<Vec<SplitAssignment>> {
    let map: BTreeMap<String, BTreeMap<String, SplitSet>> = serde_json::from_reader(reader)?;
    let mut splits = Vec::new();
    for (key, mapping) in map {
        let split_id = key.parse().map_err(|e| {
            Error::Validation(format!("split id {key:?} is not an integer: {e}"))
        })?;
        splits.push(SplitAssignment { split_id, mapping });
    }
    splits.sort_by_key(|s| s.split_id);
    Ok(splits)
}

pub fn save_splits(splits: &[SplitAssignment], path: &Path) -> Result<()> {
    write_splits_json(std::fs::File::create(path)?, splits)
}

pub fn load_splits(path: &Path) -> Result<Vec<SplitAssignment>> {
    read_splits_json(std::fs::File::open(path)?)
}

/// Greedy allocation: each item (weight `w`) goes to the set whose running
/// total is furthest below its target, ties toward the earlier set.
fn allocate_greedy<K: Copy>(
    items: &[(K, u64)],
    targets: &[f64],
) -> Vec<Vec<K>> {
    let mut totals = vec![0.0; targets.len()];
    let mut buckets: Vec<Vec<K>> = targets.iter().map(|_| Vec::new()).collect();
    for &(key, weight) in items {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (s, &target) in targets.iter().enumerate() {
            let deficit = target - totals[s];
            if deficit > best_deficit {
                best_deficit = deficit;
                best = s;
            }
        }
        totals[best] += weight as f64;
        buckets[best].push(key);
    }
    buckets
}

fn nonzero_fractions(fractions: &[f64]) -> usize {
    fractions.iter().filter(|&&f| f > 0.0).count()
}

/// Image-wise split with animal-count priority.
///
/// Returns `n_splits` assignments sharing one test set (see module docs).
pub fn split_dataset(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    n_splits: u32,
    seed: u64,
) -> Result<Vec<SplitAssignment>> {
    let (f_train, f_val, f_test) = fractions;
    let all = [f_train, f_val, f_test];
    if all.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Validation(
            "split fractions must lie in [0, 1]".into(),
        ));
    }
    if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation("split fractions must sum to 1".into()));
    }
    if n_splits < 1 {
        return Err(Error::Validation("n_splits must be at least 1".into()));
    }
    if dataset.images.len() < nonzero_fractions(&all) {
        return Err(Error::InfeasibleSplit(format!(
            "{} images cannot populate {} non-empty sets",
            dataset.images.len(),
            nonzero_fractions(&all)
        )));
    }

    let counts = dataset.animal_counts();
    // Canonical order: descending animal count, then image id. No randomness
    // here so the derived test set is seed-independent.
    let mut positives: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&id, &c)| (id, c))
        .collect();
    positives.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut empties: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(_, &c)| c == 0)
        .map(|(&id, _)| (id, 1))
        .collect();
    empties.sort_by(|a, b| a.0.cmp(b.0));

    let total_animals = dataset.total_animals() as f64;
    let total_empty = empties.len() as f64;

    // Phase 1: fix the test membership with the canonical three-way greedy.
    let animal_targets = [
        f_train * total_animals,
        f_val * total_animals,
        f_test * total_animals,
    ];
    let image_targets = [
        f_train * total_empty,
        f_val * total_empty,
        f_test * total_empty,
    ];
    let positive_buckets = allocate_greedy(&positives, &animal_targets);
    let empty_buckets = allocate_greedy(&empties, &image_targets);
    let test_ids: BTreeSet<&str> = positive_buckets[2]
        .iter()
        .chain(empty_buckets[2].iter())
        .copied()
        .collect();

    // Phase 2: per split, reshuffle the remainder between train and val.
    let remainder_fraction = f_train + f_val;
    let mut splits = Vec::new();
    for split_id in 0..n_splits {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (u64::from(split_id)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut rest_positives: Vec<(&str, u64)> = positives
            .iter()
            .filter(|(id, _)| !test_ids.contains(id))
            .copied()
            .collect();
        // Shuffle then stable-sort: random order among equal counts.
        rest_positives.shuffle(&mut rng);
        rest_positives.sort_by(|a, b| b.1.cmp(&a.1));
        let mut rest_empties: Vec<(&str, u64)> = empties
            .iter()
            .filter(|(id, _)| !test_ids.contains(id))
            .copied()
            .collect();
        rest_empties.shuffle(&mut rng);

        let rest_animals: u64 = rest_positives.iter().map(|(_, c)| c).sum();
        let (w_train, w_val) = if remainder_fraction > 0.0 {
            (f_train / remainder_fraction, f_val / remainder_fraction)
        } else {
            (0.0, 0.0)
        };
        let pos_buckets = allocate_greedy(
            &rest_positives,
            &[w_train * rest_animals as f64, w_val * rest_animals as f64],
        );
        let emp_buckets = allocate_greedy(
            &rest_empties,
            &[
                w_train * rest_empties.len() as f64,
                w_val * rest_empties.len() as f64,
            ],
        );

        let mut mapping = BTreeMap::new();
        for id in &test_ids {
            mapping.insert((*id).to_string(), SplitSet::Test);
        }
        for id in pos_buckets[0].iter().chain(emp_buckets[0].iter()) {
            mapping.insert((*id).to_string(), SplitSet::Train);
        }
        for id in pos_buckets[1].iter().chain(emp_buckets[1].iter()) {
            mapping.insert((*id).to_string(), SplitSet::Val);
        }
        splits.push(SplitAssignment { split_id, mapping });
    }
    Ok(splits)
}

/// Aggregate counts for one split set (or a whole dataset).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SetStats {
    pub pixels: u64,
    pub images_with_animals: u64,
    pub images_without_animals: u64,
    pub animals: u64,
    /// animals-per-image count -> number of images.
    pub animals_per_image_histogram: BTreeMap<u64, u64>,
}

impl SetStats {
    fn add_image(&mut self, image: &ImageMeta, animal_count: u64) {
        self.pixels += u64::from(image.width) * u64::from(image.height);
        if animal_count > 0 {
            self.images_with_animals += 1;
        } else {
            self.images_without_animals += 1;
        }
        self.animals += animal_count;
        *self
            .animals_per_image_histogram
            .entry(animal_count)
            .or_insert(0) += 1;
    }
}

/// Per-set and total statistics for one split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStatistics {
    pub split_id: u32,
    pub per_set: BTreeMap<SplitSet, SetStats>,
    pub total: SetStats,
}

/// Computes Table-style statistics for a split assignment.
pub fn dataset_statistics(dataset: &Dataset, assignment: &SplitAssignment) -> Result<SplitStatistics> {
    let counts = dataset.animal_counts();
    let mut per_set: BTreeMap<SplitSet, SetStats> = SplitSet::ALL
        .iter()
        .map(|&s| (s, SetStats::default()))
        .collect();
    let mut total = SetStats::default();
    for image in &dataset.images {
        let set = assignment
            .mapping
            .get(&image.image_id)
            .ok_or_else(|| Error::UnknownImage(image.image_id.clone()))?;
        let count = counts[image.image_id.as_str()];
        per_set.get_mut(set).unwrap().add_image(image, count);
        total.add_image(image, count);
    }
    Ok(SplitStatistics {
        split_id: assignment.split_id,
        per_set,
        total,
    })
}

/// Statistics of a whole dataset without a split.
pub fn whole_dataset_statistics(dataset: &Dataset) -> SetStats {
    let counts = dataset.animal_counts();
    let mut stats = SetStats::default();
    for image in &dataset.images {
        stats.add_image(image, counts[image.image_id.as_str()]);
    }
    stats
}
