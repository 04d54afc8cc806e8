//! Label grids, patch geometry and probability-grid stitching.
//!
//! A patch of `patch_size` pixels is classified on a coarse grid of
//! `grid_size x grid_size` cells at `stride = patch_size / grid_size` pixels
//! per cell. The cell containing an animal center becomes [`ClassLabel::Animal`];
//! its in-bounds 8-neighborhood becomes [`ClassLabel::Border`] unless a cell
//! already holds another animal (animal takes precedence). Everything else is
//! background.
//!
//! Full images are covered by overlapping patches whose per-patch probability
//! grids are stitched into one full-image grid of `ceil(height / stride)` by
//! `ceil(width / stride)` cells. A full-image cell takes one contribution from
//! every patch containing the cell's anchor pixel (the cell's top-left corner):
//! the value of the patch cell that covers the anchor. Contributions are
//! arithmetically averaged, which keeps each output cell a probability simplex
//! and guarantees at least one contribution per cell whenever the patches cover
//! the image.
//!
//! # Binary container
//!
//! Grids serialize to a small binary container, byte layout:
//!
//! ```text
//! offset size  field
//! 0      4     magic "CGRD"
//! 4      4     rows, u32 little-endian
//! 8      4     cols, u32 little-endian
//! 12     4     classes, u32 little-endian
//! 16     ...   rows * cols * classes f32 little-endian, row-major,
//!              classes contiguous per cell
//! ```
//!
//! A JSON sidecar `<file>.json` records the grid geometry. Cells are
//! renormalized on load to absorb f32 quantization of the stored
//! probabilities.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassLabel, GroundTruthPoint, ImageMeta, ScoredDetection};

const CONTAINER_MAGIC: &[u8; 4] = b"CGRD";

/// Patch and prediction-grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Patch side length in pixels.
    pub patch_size: u32,
    /// Prediction cells per patch side.
    pub grid_size: u32,
}

impl GridGeometry {
    pub fn new(patch_size: u32, grid_size: u32) -> Result<Self> {
        if patch_size == 0 || grid_size == 0 || patch_size % grid_size != 0 {
            return Err(Error::Validation(format!(
                "patch size {patch_size} must be a positive multiple of grid size {grid_size}"
            )));
        }
        Ok(Self {
            patch_size,
            grid_size,
        })
    }

    /// Pixels per grid cell.
    pub fn stride(&self) -> u32 {
        self.patch_size / self.grid_size
    }

    /// Full-image prediction grid shape (rows, cols), ceiling division.
    pub fn image_grid_shape(&self, image: &ImageMeta) -> (usize, usize) {
        let stride = self.stride();
        (
            image.height.div_ceil(stride) as usize,
            image.width.div_ceil(stride) as usize,
        )
    }
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            patch_size: 512,
            grid_size: 32,
        }
    }
}

/// Per-cell class grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    rows: usize,
    cols: usize,
    labels: Vec<ClassLabel>,
}

impl LabelGrid {
    pub fn background(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            labels: vec![ClassLabel::Background; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> ClassLabel {
        self.labels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: ClassLabel) {
        self.labels[row * self.cols + col] = label;
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), ClassLabel)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &label)| ((i / self.cols, i % self.cols), label))
    }

    /// Cells per class, in [`ClassLabel`] channel order.
    pub fn class_histogram(&self) -> [u64; ClassLabel::COUNT] {
        let mut counts = [0; ClassLabel::COUNT];
        for &label in &self.labels {
            counts[label.index()] += 1;
        }
        counts
    }

    /// Checks the border-construction property: every animal cell's in-bounds
    /// 8-neighborhood holds only animal or border cells.
    pub fn validate_border_property(&self) -> Result<()> {
        for ((row, col), label) in self.cells() {
            if label != ClassLabel::Animal {
                continue;
            }
            for (nr, nc) in neighbors8(row, col, self.rows, self.cols) {
                if self.get(nr, nc) == ClassLabel::Background {
                    return Err(Error::Validation(format!(
                        "background cell ({nr}, {nc}) adjacent to animal cell ({row}, {col})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// One-hot probability grid with exact 0/1 entries.
    pub fn to_one_hot(&self) -> ProbabilityGrid {
        let mut grid = ProbabilityGrid::zeros(self.rows, self.cols);
        for ((row, col), label) in self.cells() {
            let mut cell = [0.0; ClassLabel::COUNT];
            cell[label.index()] = 1.0;
            grid.set_cell(row, col, cell);
        }
        grid
    }
}

fn neighbors8(
    row: usize,
    col: usize,
    rows: usize,
    cols: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let r = row as i64;
    let c = col as i64;
    (-1..=1)
        .flat_map(move |dr| (-1..=1).map(move |dc| (r + dr, c + dc)))
        .filter(move |&(nr, nc)| {
            (nr, nc) != (r, c) && nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols
        })
        .map(|(nr, nc)| (nr as usize, nc as usize))
}

/// Builds the `grid_size x grid_size` label grid for a patch.
///
/// Points outside the patch are ignored (patches are crops, not filters).
pub fn make_label_grid(
    points: &[GroundTruthPoint],
    patch_origin: (u32, u32),
    geometry: GridGeometry,
) -> LabelGrid {
    let n = geometry.grid_size as usize;
    let stride = f64::from(geometry.stride());
    let mut grid = LabelGrid::background(n, n);

    let mut animal_cells = Vec::new();
    for point in points {
        let rel_x = point.x - f64::from(patch_origin.0);
        let rel_y = point.y - f64::from(patch_origin.1);
        if rel_x < 0.0 || rel_y < 0.0 {
            continue;
        }
        let col = (rel_x / stride).floor() as usize;
        let row = (rel_y / stride).floor() as usize;
        if row < n && col < n {
            animal_cells.push((row, col));
        }
    }
    for &(row, col) in &animal_cells {
        grid.set(row, col, ClassLabel::Animal);
    }
    for &(row, col) in &animal_cells {
        for (nr, nc) in neighbors8(row, col, n, n) {
            if grid.get(nr, nc) != ClassLabel::Animal {
                grid.set(nr, nc, ClassLabel::Border);
            }
        }
    }
    grid
}

/// Patch origins covering one image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub image_width: u32,
    pub image_height: u32,
    pub patch_size: u32,
    /// (x, y) pixel offsets, sorted row-major.
    pub origins: Vec<(u32, u32)>,
}

fn axis_origins(extent: u32, patch: u32, patches: u32) -> Vec<u32> {
    if patches <= 1 {
        return vec![0];
    }
    let span = f64::from(extent - patch);
    let steps = f64::from(patches - 1);
    (0..patches)
        .map(|i| (f64::from(i) * span / steps).round() as u32)
        .collect()
}

/// Evenly spreads `patches_x x patches_y` overlapping patches over the image.
pub fn plan_patch_layout(
    image: &ImageMeta,
    geometry: GridGeometry,
    patches_x: u32,
    patches_y: u32,
) -> Result<PatchLayout> {
    let patch = geometry.patch_size;
    if patches_x == 0 || patches_y == 0 {
        return Err(Error::Coverage("patch counts must be positive".into()));
    }
    if patch > image.width || patch > image.height {
        return Err(Error::Coverage(format!(
            "patch size {patch} exceeds image {}x{}",
            image.width, image.height
        )));
    }
    if u64::from(patches_x) * u64::from(patch) < u64::from(image.width)
        || u64::from(patches_y) * u64::from(patch) < u64::from(image.height)
    {
        return Err(Error::Coverage(format!(
            "{patches_x}x{patches_y} patches of {patch} px cannot cover {}x{}",
            image.width, image.height
        )));
    }
    let xs = axis_origins(image.width, patch, patches_x);
    let ys = axis_origins(image.height, patch, patches_y);
    let origins = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(PatchLayout {
        image_width: image.width,
        image_height: image.height,
        patch_size: patch,
        origins,
    })
}

/// The smallest patch grid covering the image (ceiling division per axis).
pub fn minimal_patch_layout(image: &ImageMeta, geometry: GridGeometry) -> Result<PatchLayout> {
    plan_patch_layout(
        image,
        geometry,
        image.width.div_ceil(geometry.patch_size),
        image.height.div_ceil(geometry.patch_size),
    )
}

/// Dense per-cell class-probability grid, row-major, `ClassLabel::COUNT`
/// channels per cell in channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbabilityGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols * ClassLabel::COUNT],
        }
    }

    /// A grid with the same simplex in every cell.
    pub fn constant(rows: usize, cols: usize, cell: [f64; ClassLabel::COUNT]) -> Result<Self> {
        let mut grid = Self::zeros(rows, cols);
        for row in 0..rows {
            for col in 0..cols {
                grid.set_cell(row, col, cell);
            }
        }
        grid.validate_simplexes(1e-9)?;
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> [f64; ClassLabel::COUNT] {
        let base = (row * self.cols + col) * ClassLabel::COUNT;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_cell(&mut self, row: usize, col: usize, values: [f64; ClassLabel::COUNT]) {
        let base = (row * self.cols + col) * ClassLabel::COUNT;
        self.data[base..base + ClassLabel::COUNT].copy_from_slice(&values);
    }

    pub fn class_probability(&self, row: usize, col: usize, class: ClassLabel) -> f64 {
        self.data[(row * self.cols + col) * ClassLabel::COUNT + class.index()]
    }

    /// Verifies every cell is non-negative and sums to one within `tol`.
    pub fn validate_simplexes(&self, tol: f64) -> Result<()> {
        for row in 0..self.rows {
            for col in 0..self.cols {
                let cell = self.cell(row, col);
                let sum: f64 = cell.iter().sum();
                if cell.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > tol {
                    return Err(Error::NonSimplex { row, col, sum });
                }
            }
        }
        Ok(())
    }

    /// Class with the highest probability per cell; ties resolve to the
    /// earliest class in channel order (background first), which never
    /// invents a detection.
    pub fn argmax_labels(&self) -> LabelGrid {
        let mut grid = LabelGrid::background(self.rows, self.cols);
        for row in 0..self.rows {
            for col in 0..self.cols {
                let cell = self.cell(row, col);
                let mut best = 0;
                for k in 1..ClassLabel::COUNT {
                    if cell[k] > cell[best] {
                        best = k;
                    }
                }
                grid.set(row, col, ClassLabel::from_index(best).unwrap());
            }
        }
        grid
    }
}

/// Averages per-patch probability grids into the full-image grid.
///
/// `patch_grids` must hold one `grid_size x grid_size` grid per layout origin,
/// in layout order.
pub fn stitch_probability_grids(
    patch_grids: &[ProbabilityGrid],
    layout: &PatchLayout,
    geometry: GridGeometry,
) -> Result<ProbabilityGrid> {
    if layout.patch_size != geometry.patch_size {
        return Err(Error::ShapeMismatch(format!(
            "layout patch size {} does not match geometry {}",
            layout.patch_size, geometry.patch_size
        )));
    }
    if patch_grids.len() != layout.origins.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patch grids for {} layout origins",
            patch_grids.len(),
            layout.origins.len()
        )));
    }
    let n = geometry.grid_size as usize;
    for grid in patch_grids {
        if grid.rows() != n || grid.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "patch grid is {}x{}, expected {n}x{n}",
                grid.rows(),
                grid.cols()
            )));
        }
        grid.validate_simplexes(1e-6)?;
    }

    let stride = geometry.stride();
    let rows = layout.image_height.div_ceil(stride) as usize;
    let cols = layout.image_width.div_ceil(stride) as usize;
    let mut sums = vec![0.0f64; rows * cols * ClassLabel::COUNT];
    let mut counts = vec![0u32; rows * cols];

    for (grid, &(ox, oy)) in patch_grids.iter().zip(&layout.origins) {
        // Global cells whose anchor pixel lies inside this patch.
        let first_col = ox.div_ceil(stride) as usize;
        let last_col = (((ox + geometry.patch_size - 1) / stride) as usize).min(cols - 1);
        let first_row = oy.div_ceil(stride) as usize;
        let last_row = (((oy + geometry.patch_size - 1) / stride) as usize).min(rows - 1);
        for g_row in first_row..=last_row {
            let anchor_y = g_row as u32 * stride;
            let p_row = ((anchor_y - oy) / stride) as usize;
            for g_col in first_col..=last_col {
                let anchor_x = g_col as u32 * stride;
                let p_col = ((anchor_x - ox) / stride) as usize;
                let cell = grid.cell(p_row, p_col);
                let base = (g_row * cols + g_col) * ClassLabel::COUNT;
                for (k, &p) in cell.iter().enumerate() {
                    sums[base + k] += p;
                }
                counts[g_row * cols + g_col] += 1;
            }
        }
    }

    let mut out = ProbabilityGrid::zeros(rows, cols);
    for (i, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Coverage(format!(
                "cell ({}, {}) received no patch contribution",
                i / cols,
                i % cols
            )));
        }
        let base = i * ClassLabel::COUNT;
        out.data[base..base + ClassLabel::COUNT].copy_from_slice(&[
            sums[base] / f64::from(count),
            sums[base + 1] / f64::from(count),
            sums[base + 2] / f64::from(count),
        ]);
    }
    Ok(out)
}

/// Extracts detections from a probability grid: every cell whose argmax class
/// is animal emits a detection at the cell-center pixel with the animal
/// probability as score. Border and background cells emit nothing.
pub fn grid_to_detections(
    grid: &ProbabilityGrid,
    geometry: GridGeometry,
    image: &ImageMeta,
) -> Vec<ScoredDetection> {
    let stride = f64::from(geometry.stride());
    let half = stride / 2.0;
    let labels = grid.argmax_labels();
    let mut detections = Vec::new();
    for ((row, col), label) in labels.cells() {
        if label != ClassLabel::Animal {
            continue;
        }
        // Clamp edge-cell centers into the image.
        let x = (col as f64 * stride + half).min(f64::from(image.width) - 1.0);
        let y = (row as f64 * stride + half).min(f64::from(image.height) - 1.0);
        detections.push(ScoredDetection {
            image_id: image.image_id.clone(),
            x,
            y,
            score: grid.class_probability(row, col, ClassLabel::Animal),
        });
    }
    detections
}

/// Samples a patch origin: if the image holds ground-truth points, the patch
/// is guaranteed to contain at least one of them (uniformly chosen anchor,
/// then uniform origin among those keeping the anchor inside); otherwise the
/// origin is uniform over the valid range.
pub fn crop_semirandom_patch<R: Rng + ?Sized>(
    image: &ImageMeta,
    points: &[GroundTruthPoint],
    geometry: GridGeometry,
    rng: &mut R,
) -> Result<(u32, u32)> {
    let patch = geometry.patch_size;
    if patch > image.width || patch > image.height {
        return Err(Error::Validation(format!(
            "image {}x{} smaller than patch {patch}",
            image.width, image.height
        )));
    }
    let max_x = image.width - patch;
    let max_y = image.height - patch;
    let points: Vec<&GroundTruthPoint> = points
        .iter()
        .filter(|p| p.image_id == image.image_id)
        .collect();
    if points.is_empty() {
        return Ok((rng.gen_range(0..=max_x), rng.gen_range(0..=max_y)));
    }
    let anchor = points[rng.gen_range(0..points.len())];
    let lo_x = (anchor.x.floor() as i64 - i64::from(patch) + 1).max(0) as u32;
    let hi_x = (anchor.x.floor() as i64).min(i64::from(max_x)).max(0) as u32;
    let lo_y = (anchor.y.floor() as i64 - i64::from(patch) + 1).max(0) as u32;
    let hi_y = (anchor.y.floor() as i64).min(i64::from(max_y)).max(0) as u32;
    Ok((rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y)))
}

/// Geometry sidecar written next to grid containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub patch_size: u32,
    pub grid_size: u32,
    pub stride: u32,
}

impl From<GridGeometry> for GridSidecar {
    fn from(g: GridGeometry) -> Self {
        Self {
            patch_size: g.patch_size,
            grid_size: g.grid_size,
            stride: g.stride(),
        }
    }
}

/// Writes a grid in the binary container format (see module docs).
pub fn write_grid<W: Write>(mut writer: W, grid: &ProbabilityGrid) -> Result<()> {
    writer.write_all(CONTAINER_MAGIC)?;
    writer.write_all(&(grid.rows as u32).to_le_bytes())?;
    writer.write_all(&(grid.cols as u32).to_le_bytes())?;
    writer.write_all(&(ClassLabel::COUNT as u32).to_le_bytes())?;
    for &value in &grid.data {
        writer.write_all(&(value as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a grid container and renormalizes each cell to absorb the f32
/// quantization of the stored probabilities. Cells further than 1e-3 from a
/// simplex are rejected.
pub fn read_grid<R: Read>(mut reader: R) -> Result<ProbabilityGrid> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::BadContainer(format!(
            "bad magic {magic:?}, expected {CONTAINER_MAGIC:?}"
        )));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    reader.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    reader.read_exact(&mut word)?;
    let classes = u32::from_le_bytes(word) as usize;
    if classes != ClassLabel::COUNT {
        return Err(Error::BadContainer(format!(
            "container holds {classes} classes, expected {}",
            ClassLabel::COUNT
        )));
    }
    let mut grid = ProbabilityGrid::zeros(rows, cols);
    for value in grid.data.iter_mut() {
        reader.read_exact(&mut word)?;
        let v = f32::from_le_bytes(word);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::BadContainer(format!("invalid probability {v}")));
        }
        *value = f64::from(v);
    }
    for row in 0..rows {
        for col in 0..cols {
            let cell = grid.cell(row, col);
            let sum: f64 = cell.iter().sum();
            if (sum - 1.0).abs() > 1e-3 {
                return Err(Error::NonSimplex { row, col, sum });
            }
            grid.set_cell(row, col, [cell[0] / sum, cell[1] / sum, cell[2] / sum]);
        }
    }
    Ok(grid)
}

/// Sidecar path for a grid container: `<file>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

/// Saves a grid container plus its geometry sidecar.
pub fn save_grid(path: &Path, grid: &ProbabilityGrid, geometry: GridGeometry) -> Result<()> {
    write_grid(std::fs::File::create(path)?, grid)?;
    let sidecar = GridSidecar::from(geometry);
    serde_json::to_writer_pretty(std::fs::File::create(sidecar_path(path))?, &sidecar)?;
    Ok(())
}

/// Loads a grid container; returns the geometry sidecar when present.
pub fn load_grid(path: &Path) -> Result<(ProbabilityGrid, Option<GridSidecar>)> {
    let grid = read_grid(std::fs::File::open(path)?)?;
    let sidecar = sidecar_path(path);
    let geometry = if sidecar.exists() {
        Some(serde_json::from_reader(std::fs::File::open(sidecar)?)?)
    } else {
        None
    };
    Ok((grid, geometry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(x: f64, y: f64, id: &str) -> GroundTruthPoint {
        GroundTruthPoint {
            image_id: "img".into(),
            x,
            y,
            instance_id: id.into(),
        }
    }

    fn canonical_image() -> ImageMeta {
        ImageMeta::new("img", 4000, 3000, true).unwrap()
    }

    #[test]
    fn geometry_requires_divisibility() {
        assert!(GridGeometry::new(512, 33).is_err());
        assert_eq!(GridGeometry::default().stride(), 16);
    }

    #[test]
    fn single_animal_grid() {
        let grid = make_label_grid(&[gt(256.0, 256.0, "a")], (0, 0), GridGeometry::default());
        assert_eq!(grid.get(16, 16), ClassLabel::Animal);
        let hist = grid.class_histogram();
        assert_eq!(hist[ClassLabel::Animal.index()], 1);
        assert_eq!(hist[ClassLabel::Border.index()], 8);
        assert_eq!(hist[ClassLabel::Background.index()], 32 * 32 - 9);
        grid.validate_border_property().unwrap();
    }

    #[test]
    fn empty_grid_is_all_background() {
        let grid = make_label_grid(&[], (0, 0), GridGeometry::default());
        assert_eq!(grid.class_histogram()[ClassLabel::Background.index()], 32 * 32);
    }

    #[test]
    fn adjacent_animals_keep_precedence() {
        // Animals in horizontally adjacent cells (16,16) and (16,17): the
        // border ring around the pair is enumerable by hand. Each animal's
        // 8-neighborhood includes the other animal's cell, which must stay
        // animal. The union ring is the 3x4 block minus the two animal cells.
        let points = vec![gt(256.0 + 8.0, 256.0 + 8.0, "a"), gt(272.0 + 8.0, 256.0 + 8.0, "b")];
        let grid = make_label_grid(&points, (0, 0), GridGeometry::default());
        assert_eq!(grid.get(16, 16), ClassLabel::Animal);
        assert_eq!(grid.get(16, 17), ClassLabel::Animal);
        let hist = grid.class_histogram();
        assert_eq!(hist[ClassLabel::Animal.index()], 2);
        assert_eq!(hist[ClassLabel::Border.index()], 3 * 4 - 2);
        for row in 15..=17 {
            for col in 15..=18 {
                let expected = if (row, col) == (16, 16) || (row, col) == (16, 17) {
                    ClassLabel::Animal
                } else {
                    ClassLabel::Border
                };
                assert_eq!(grid.get(row, col), expected, "cell ({row}, {col})");
            }
        }
        grid.validate_border_property().unwrap();
    }

    #[test]
    fn corner_animal_border_clipped() {
        let grid = make_label_grid(&[gt(0.0, 0.0, "a")], (0, 0), GridGeometry::default());
        assert_eq!(grid.get(0, 0), ClassLabel::Animal);
        let hist = grid.class_histogram();
        assert_eq!(hist[ClassLabel::Border.index()], 3);
    }

    #[test]
    fn points_outside_patch_ignored() {
        let grid = make_label_grid(&[gt(1000.0, 1000.0, "a")], (0, 0), GridGeometry::default());
        assert_eq!(grid.class_histogram()[ClassLabel::Animal.index()], 0);
        let grid = make_label_grid(&[gt(1000.0, 1000.0, "a")], (992, 992), GridGeometry::default());
        assert_eq!(grid.class_histogram()[ClassLabel::Animal.index()], 1);
    }

    #[test]
    fn label_grid_permutation_invariant_and_idempotent() {
        let mut points = vec![
            gt(100.0, 100.0, "a"),
            gt(116.0, 100.0, "b"),
            gt(400.0, 380.0, "c"),
        ];
        let forward = make_label_grid(&points, (0, 0), GridGeometry::default());
        points.reverse();
        let reversed = make_label_grid(&points, (0, 0), GridGeometry::default());
        assert_eq!(forward, reversed);
        assert_eq!(forward, make_label_grid(&points, (0, 0), GridGeometry::default()));
    }

    #[test]
    fn canonical_patch_layout() {
        let layout =
            plan_patch_layout(&canonical_image(), GridGeometry::default(), 8, 6).unwrap();
        assert_eq!(layout.origins.len(), 48);
        let xs: Vec<u32> = layout.origins.iter().take(8).map(|&(x, _)| x).collect();
        assert_eq!(xs.first(), Some(&0));
        assert_eq!(xs.last(), Some(&3488));
        let ys: Vec<u32> = layout.origins.iter().step_by(8).map(|&(_, y)| y).collect();
        assert_eq!(ys.first(), Some(&0));
        assert_eq!(ys.last(), Some(&2488));
    }

    #[test]
    fn single_patch_layout() {
        let image = ImageMeta::new("img", 512, 512, false).unwrap();
        let layout = plan_patch_layout(&image, GridGeometry::default(), 1, 1).unwrap();
        assert_eq!(layout.origins, vec![(0, 0)]);
    }

    #[test]
    fn insufficient_patches_rejected() {
        assert!(plan_patch_layout(&canonical_image(), GridGeometry::default(), 7, 6).is_err());
    }

    #[test]
    fn layout_covers_every_pixel() {
        // Brute-force pixel scan on small randomized images.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geometry = GridGeometry::new(64, 4).unwrap();
        for _ in 0..50 {
            let width = rng.gen_range(64..400);
            let height = rng.gen_range(64..400);
            let image = ImageMeta::new("img", width, height, false).unwrap();
            let layout = minimal_patch_layout(&image, geometry).unwrap();
            let mut covered = vec![false; (width * height) as usize];
            for &(ox, oy) in &layout.origins {
                for y in oy..(oy + 64).min(height) {
                    for x in ox..(ox + 64).min(width) {
                        covered[(y * width + x) as usize] = true;
                    }
                }
            }
            assert!(covered.iter().all(|&c| c), "{width}x{height} not covered");
        }
    }

    #[test]
    fn stitch_identity_for_single_patch() {
        let image = ImageMeta::new("img", 512, 512, false).unwrap();
        let geometry = GridGeometry::default();
        let layout = plan_patch_layout(&image, geometry, 1, 1).unwrap();
        let mut patch = ProbabilityGrid::zeros(32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for row in 0..32 {
            for col in 0..32 {
                let a: f64 = rng.gen_range(0.0..1.0);
                let b: f64 = rng.gen_range(0.0..1.0 - a);
                patch.set_cell(row, col, [a, b, 1.0 - a - b]);
            }
        }
        let out = stitch_probability_grids(&[patch.clone()], &layout, geometry).unwrap();
        assert_eq!(out, patch);
    }

    #[test]
    fn stitch_averages_constant_overlap() {
        // Two horizontally overlapping patches with constant simplexes p and q:
        // cells covered by both must equal (p + q) / 2 exactly.
        let image = ImageMeta::new("img", 768, 512, false).unwrap();
        let geometry = GridGeometry::default();
        let layout = plan_patch_layout(&image, geometry, 2, 1).unwrap();
        assert_eq!(layout.origins, vec![(0, 0), (256, 0)]);
        let p = [0.6, 0.3, 0.1];
        let q = [0.2, 0.5, 0.3];
        let grids = vec![
            ProbabilityGrid::constant(32, 32, p).unwrap(),
            ProbabilityGrid::constant(32, 32, q).unwrap(),
        ];
        let out = stitch_probability_grids(&grids, &layout, geometry).unwrap();
        assert_eq!(out.cols(), 48);
        // Anchor pixels in [256, 512) lie in both patches.
        assert_eq!(out.cell(8, 8), p);
        assert_eq!(out.cell(8, 40), q);
        let mid = out.cell(8, 24);
        for k in 0..3 {
            assert!((mid[k] - (p[k] + q[k]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stitched_canonical_shape_and_simplexes() {
        let image = canonical_image();
        let geometry = GridGeometry::default();
        let layout = plan_patch_layout(&image, geometry, 8, 6).unwrap();
        let grids: Vec<ProbabilityGrid> = (0..48)
            .map(|i| {
                let w = (i as f64 + 1.0) / 50.0;
                ProbabilityGrid::constant(32, 32, [1.0 - w, w / 2.0, w / 2.0]).unwrap()
            })
            .collect();
        let out = stitch_probability_grids(&grids, &layout, geometry).unwrap();
        assert_eq!((out.rows(), out.cols()), (188, 250));
        out.validate_simplexes(1e-9).unwrap();
    }

    #[test]
    fn stitch_rejects_shape_mismatch() {
        let image = ImageMeta::new("img", 512, 512, false).unwrap();
        let geometry = GridGeometry::default();
        let layout = plan_patch_layout(&image, geometry, 1, 1).unwrap();
        let bad = ProbabilityGrid::constant(16, 16, [1.0, 0.0, 0.0]).unwrap();
        assert!(stitch_probability_grids(&[bad], &layout, geometry).is_err());
    }

    #[test]
    fn detections_from_planted_cells() {
        let image = canonical_image();
        let geometry = GridGeometry::default();
        let mut grid = ProbabilityGrid::zeros(188, 250);
        for row in 0..188 {
            for col in 0..250 {
                grid.set_cell(row, col, [1.0, 0.0, 0.0]);
            }
        }
        let planted = [(16usize, 16usize), (0, 0), (187, 249)];
        for &(row, col) in &planted {
            grid.set_cell(row, col, [0.1, 0.8, 0.1]);
        }
        let detections = grid_to_detections(&grid, geometry, &image);
        assert_eq!(detections.len(), planted.len());
        let first = detections
            .iter()
            .find(|d| (d.x, d.y) == (264.0, 264.0))
            .expect("cell (16,16) detection at (264, 264)");
        assert_eq!(first.score, 0.8);
        // Bottom-right cell center is clamped inside the image.
        let last = detections.iter().find(|d| d.y > 2990.0).unwrap();
        assert!(last.y < 3000.0 && last.x < 4000.0);
    }

    #[test]
    fn all_background_grid_gives_no_detections() {
        let image = canonical_image();
        let grid = ProbabilityGrid::constant(188, 250, [0.9, 0.05, 0.05]).unwrap();
        assert!(grid_to_detections(&grid, GridGeometry::default(), &image).is_empty());
    }

    #[test]
    fn crop_always_contains_an_animal() {
        let image = canonical_image();
        let points = vec![gt(3999.0, 2999.0, "corner")];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let (ox, oy) = crop_semirandom_patch(&image, &points, GridGeometry::default(), &mut rng)
                .unwrap();
            assert!(ox + 512 <= 4000 && oy + 512 <= 3000);
            assert!(f64::from(ox) <= 3999.0 && 3999.0 < f64::from(ox) + 512.0);
            assert!(f64::from(oy) <= 2999.0 && 2999.0 < f64::from(oy) + 512.0);
        }
    }

    #[test]
    fn crop_rejects_small_images() {
        let image = ImageMeta::new("img", 100, 100, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(crop_semirandom_patch(&image, &[], GridGeometry::default(), &mut rng).is_err());
    }

    #[test]
    fn container_round_trip() {
        let grid = ProbabilityGrid::constant(4, 5, [0.5, 0.25, 0.25]).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &grid).unwrap();
        assert_eq!(&buf[..4], b"CGRD");
        assert_eq!(buf.len(), 16 + 4 * 5 * 3 * 4);
        let loaded = read_grid(buf.as_slice()).unwrap();
        assert_eq!(loaded.cell(0, 0), [0.5, 0.25, 0.25]);
        loaded.validate_simplexes(1e-9).unwrap();
    }

    #[test]
    fn container_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &ProbabilityGrid::constant(1, 1, [1.0, 0.0, 0.0]).unwrap()).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_grid(buf.as_slice()), Err(Error::BadContainer(_))));
    }

    #[test]
    fn one_hot_round_trip_through_argmax() {
        let grid = make_label_grid(
            &[gt(100.0, 100.0, "a"), gt(300.0, 260.0, "b")],
            (0, 0),
            GridGeometry::default(),
        );
        assert_eq!(grid.to_one_hot().argmax_labels(), grid);
    }
}
