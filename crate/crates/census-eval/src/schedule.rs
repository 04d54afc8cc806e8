//! Training-schedule planning and its numeric kernels: inverse-frequency
//! class weights, the weighted cross-entropy loss, curriculum and
//! hard-negative gating, per-cell weight maps and exact 90-degree
//! augmentations.
//!
//! The module emits executable plans and performs the selection computations;
//! it does not run a network or an optimizer.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ProbabilityGrid};
use crate::model::ClassLabel;

/// Default number of hard negatives mined per grid.
pub const DEFAULT_HARD_NEGATIVES: usize = 4;

/// Default hard-negative weight as a fraction of the animal class weight.
/// A 0.5 variant is in circulation for the same schedule; pass it explicitly
/// to [`apply_hard_negative_weights`] if that is the intended configuration.
pub const DEFAULT_HARD_NEGATIVE_FACTOR: f64 = 0.25;

/// Probabilities are clipped to this floor before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Per-class loss weights, all positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub background: f64,
    pub animal: f64,
    pub border: f64,
}

impl ClassWeights {
    pub fn new(background: f64, animal: f64, border: f64) -> Result<Self> {
        for (name, w) in [("background", background), ("animal", animal), ("border", border)] {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Validation(format!(
                    "class weight {name} must be positive, got {w}"
                )));
            }
        }
        Ok(Self {
            background,
            animal,
            border,
        })
    }

    pub fn weight(&self, class: ClassLabel) -> f64 {
        match class {
            ClassLabel::Background => self.background,
            ClassLabel::Animal => self.animal,
            ClassLabel::Border => self.border,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            background: self.background * factor,
            animal: self.animal * factor,
            border: self.border * factor,
        }
    }
}

/// Cell counts per class, in the order background / animal / border.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub background: u64,
    pub animal: u64,
    pub border: u64,
}

impl ClassCounts {
    fn get(&self, class: ClassLabel) -> u64 {
        match class {
            ClassLabel::Background => self.background,
            ClassLabel::Animal => self.animal,
            ClassLabel::Border => self.border,
        }
    }
}

/// Weights proportional to inverse class frequency, normalized so the rarest
/// class gets weight 1.0. Errors on zero counts; see
/// [`inverse_frequency_weights_smoothed`] for sparse data.
pub fn inverse_frequency_weights(counts: ClassCounts) -> Result<ClassWeights> {
    for class in [ClassLabel::Background, ClassLabel::Animal, ClassLabel::Border] {
        if counts.get(class) == 0 {
            return Err(Error::ZeroClassCount(class));
        }
    }
    let rarest = counts
        .background
        .min(counts.animal)
        .min(counts.border) as f64;
    ClassWeights::new(
        rarest / counts.background as f64,
        rarest / counts.animal as f64,
        rarest / counts.border as f64,
    )
}

/// Add-one smoothed variant that tolerates zero counts.
pub fn inverse_frequency_weights_smoothed(counts: ClassCounts) -> Result<ClassWeights> {
    inverse_frequency_weights(ClassCounts {
        background: counts.background + 1,
        animal: counts.animal + 1,
        border: counts.border + 1,
    })
}

/// Per-cell loss weights aligned to a label grid. Weights are positive unless
/// a cell is explicitly zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl WeightMap {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![1.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, weight: f64) {
        self.weights[row * self.cols + col] = weight;
    }
}

/// Weighted cross-entropy over a grid: the mean over cells of
/// `m_cell * w_class * -ln(p_class)`, where `p_class` is the predicted
/// probability of the true class, clipped below at [`PROBABILITY_FLOOR`].
pub fn weighted_cross_entropy(
    truth: &LabelGrid,
    predicted: &ProbabilityGrid,
    weights: ClassWeights,
    weight_map: Option<&WeightMap>,
) -> Result<f64> {
    if truth.rows() != predicted.rows() || truth.cols() != predicted.cols() {
        return Err(Error::ShapeMismatch(format!(
            "truth {}x{} vs prediction {}x{}",
            truth.rows(),
            truth.cols(),
            predicted.rows(),
            predicted.cols()
        )));
    }
    if let Some(map) = weight_map {
        if map.rows() != truth.rows() || map.cols() != truth.cols() {
            return Err(Error::ShapeMismatch(format!(
                "weight map {}x{} vs grid {}x{}",
                map.rows(),
                map.cols(),
                truth.rows(),
                truth.cols()
            )));
        }
    }
    predicted.validate_simplexes(1e-6)?;

    let mut total = 0.0;
    for ((row, col), label) in truth.cells() {
        let p = predicted
            .class_probability(row, col, label)
            .max(PROBABILITY_FLOOR);
        let m = weight_map.map_or(1.0, |map| map.get(row, col));
        total += m * weights.weight(label) * -p.ln();
    }
    Ok(total / (truth.rows() * truth.cols()) as f64)
}

/// Patch sampling mode of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Only patches containing at least one animal.
    AnimalOnly,
    /// Patches from the full dataset, animals or not.
    FullDataset,
}

/// One epoch of the training plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    /// 1-based epoch number.
    pub epoch: u32,
    pub sampling: SamplingMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Optimizer momentum setting, recorded in the plan as configured.
    pub momentum: f64,
    pub hard_negatives_enabled: bool,
    pub flip_probability: f64,
    pub rotation_probability: f64,
    /// Allowed rotation angles in degrees; empty while rotations are off.
    pub rotation_angles: Vec<u32>,
}

/// Builds the per-epoch plan:
///
/// * animal-only sampling for epochs 1-5, full dataset afterwards;
/// * learning rate 1e-4 (1-5), 1e-5 (6-10), 1e-6 (11-110), 1e-7 (111+);
/// * weight decay 1e-3 (1-5), then 1e-4;
/// * horizontal/vertical flips at 50% throughout;
/// * hard negatives from epoch 80;
/// * 90-degree rotations at 75% from epoch 301.
pub fn build_training_plan(total_epochs: u32) -> Result<Vec<EpochPlan>> {
    if total_epochs < 1 {
        return Err(Error::Validation("plan needs at least one epoch".into()));
    }
    Ok((1..=total_epochs)
        .map(|epoch| {
            let learning_rate = match epoch {
                1..=5 => 1e-4,
                6..=10 => 1e-5,
                11..=110 => 1e-6,
                _ => 1e-7,
            };
            let rotations_on = epoch >= 301;
            EpochPlan {
                epoch,
                sampling: if epoch <= 5 {
                    SamplingMode::AnimalOnly
                } else {
                    SamplingMode::FullDataset
                },
                learning_rate,
                weight_decay: if epoch <= 5 { 1e-3 } else { 1e-4 },
                momentum: 0.9,
                hard_negatives_enabled: epoch >= 80,
                flip_probability: 0.5,
                rotation_probability: if rotations_on { 0.75 } else { 0.0 },
                rotation_angles: if rotations_on {
                    vec![90, 180, 270]
                } else {
                    Vec::new()
                },
            }
        })
        .collect())
}

/// Renders the plan as a human-readable table.
pub fn write_plan_table<W: Write>(mut writer: W, plan: &[EpochPlan]) -> Result<()> {
    writeln!(
        writer,
        "{:>5}  {:<12} {:>8} {:>8} {:>6} {:>6} {:>6}  {}",
        "epoch", "sampling", "lr", "wd", "hardneg", "flip", "rot", "angles"
    )?;
    for p in plan {
        writeln!(
            writer,
            "{:>5}  {:<12} {:>8.0e} {:>8.0e} {:>6} {:>6.2} {:>6.2}  {:?}",
            p.epoch,
            match p.sampling {
                SamplingMode::AnimalOnly => "animal-only",
                SamplingMode::FullDataset => "full",
            },
            p.learning_rate,
            p.weight_decay,
            p.hard_negatives_enabled,
            p.flip_probability,
            p.rotation_probability,
            p.rotation_angles,
        )?;
    }
    Ok(())
}

/// Selects the `k` background-labeled cells with the highest predicted animal
/// probability, descending, ties toward lower row-major index. Returns fewer
/// than `k` cells when fewer background cells exist.
pub fn select_hard_negatives(
    labels: &LabelGrid,
    predicted: &ProbabilityGrid,
    k: usize,
) -> Result<Vec<(usize, usize)>> {
    if labels.rows() != predicted.rows() || labels.cols() != predicted.cols() {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{} vs prediction {}x{}",
            labels.rows(),
            labels.cols(),
            predicted.rows(),
            predicted.cols()
        )));
    }
    let mut candidates: Vec<(usize, (usize, usize), f64)> = labels
        .cells()
        .filter(|&(_, label)| label == ClassLabel::Background)
        .map(|((row, col), _)| {
            (
                row * labels.cols() + col,
                (row, col),
                predicted.class_probability(row, col, ClassLabel::Animal),
            )
        })
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    Ok(candidates
        .into_iter()
        .take(k)
        .map(|(_, cell, _)| cell)
        .collect())
}

/// Returns a weight map with the selected cells set to
/// `factor * weights.animal`; everything else is copied unchanged.
pub fn apply_hard_negative_weights(
    weight_map: &WeightMap,
    selected: &[(usize, usize)],
    weights: ClassWeights,
    factor: f64,
) -> Result<WeightMap> {
    let mut out = weight_map.clone();
    for &(row, col) in selected {
        if row >= out.rows() || col >= out.cols() {
            return Err(Error::ShapeMismatch(format!(
                "hard-negative cell ({row}, {col}) outside {}x{} map",
                out.rows(),
                out.cols()
            )));
        }
        out.set(row, col, factor * weights.animal);
    }
    Ok(out)
}

/// Exact cell-index permutations; no interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentOp {
    FlipH,
    FlipV,
    /// Quarter turn clockwise.
    Rot90,
    Rot180,
    /// Quarter turn counter-clockwise.
    Rot270,
}

impl AugmentOp {
    /// Source cell for destination `(row, col)` in a `rows x cols` grid.
    fn source(self, row: usize, col: usize, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            AugmentOp::FlipH => (row, cols - 1 - col),
            AugmentOp::FlipV => (rows - 1 - row, col),
            // Clockwise: destination (r, c) came from (rows-1-c, r).
            AugmentOp::Rot90 => (rows - 1 - col, row),
            AugmentOp::Rot180 => (rows - 1 - row, cols - 1 - col),
            AugmentOp::Rot270 => (col, cols - 1 - row),
        }
    }

    fn requires_square(self) -> bool {
        matches!(self, AugmentOp::Rot90 | AugmentOp::Rot270)
    }
}

/// Applies an exact flip/rotation to a label grid. Rotations require a square
/// grid.
pub fn augment_grid(grid: &LabelGrid, op: AugmentOp) -> Result<LabelGrid> {
    if op.requires_square() && grid.rows() != grid.cols() {
        return Err(Error::Validation(format!(
            "rotation needs a square grid, got {}x{}",
            grid.rows(),
            grid.cols()
        )));
    }
    let mut out = LabelGrid::background(grid.rows(), grid.cols());
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let (sr, sc) = op.source(row, col, grid.rows(), grid.cols());
            out.set(row, col, grid.get(sr, sc));
        }
    }
    Ok(out)
}
