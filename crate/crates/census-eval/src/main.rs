//! `census-eval` command-line tool: every library workflow as a subcommand.
//!
//! Each run writes its artifacts plus a `manifest.json` (inputs, effective
//! configuration, tool version, seed) into the output directory, making the
//! run replayable. All randomness flows through explicit `--seed` flags.
//!
//! Exit codes: 0 success, 1 failed check (oracle mismatch), 2 usage error,
//! 3 I/O error, 4 parse/format error, 5 validation error. Failures additionally
//! emit a machine-readable JSON error record on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use census_eval::dataset::{
    self, dataset_statistics, load_annotations, load_detections, split_dataset,
    whole_dataset_statistics, Dataset,
};
use census_eval::error::Error;
use census_eval::grid::{
    grid_to_detections, load_grid, make_label_grid, plan_patch_layout, save_grid,
    stitch_probability_grids, GridGeometry,
};
use census_eval::manifest::RunManifest;
use census_eval::matching::{match_census, match_oracle};
use census_eval::metrics::{
    exact_thresholds, per_image_detection_stats, pr_curve, save_operating_points_csv,
    save_screening_curve_csv, screening_effort_curve, sweep_distance_thresholds, tile_report,
    uniform_thresholds, TileGridSpec, DEFAULT_RADIUS, DEFAULT_SWEEP_RADII,
};
use census_eval::model::{DistanceRange, GroundTruthPoint, ImageMeta, ScoredDetection};
use census_eval::schedule::{build_training_plan, write_plan_table};
use census_eval::simulate::{generate_campaign, BetaParams, CampaignSpec, DetectorSpec};

/// Census-oriented detection evaluation, dataset tooling and schedule planning.
#[derive(Parser)]
#[command(name = "census-eval", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate detections against annotations: PR curve at one radius.
    Evaluate(EvaluateArgs),
    /// PR curves across several matching radii.
    Sweep(SweepArgs),
    /// Tile-based screening report and effort curve.
    Tiles(TilesArgs),
    /// Split a dataset image-wise with animal-count priority.
    Split(SplitArgs),
    /// Dataset statistics, optionally per split and per detection file.
    Stats(StatsArgs),
    /// Build the label grid for one patch of one image.
    Labelgrid(LabelgridArgs),
    /// Stitch per-patch probability grids into a full-image grid.
    Stitch(StitchArgs),
    /// Emit the per-epoch training plan.
    Plan(PlanArgs),
    /// Generate a synthetic campaign with a planted-truth ledger.
    Simulate(SimulateArgs),
    /// Cross-check the matcher against the exhaustive oracle.
    OracleCheck(OracleCheckArgs),
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// annotations.csv (one row per animal).
    #[arg(long)]
    annotations: PathBuf,
    /// images.csv (images without animals).
    #[arg(long)]
    images: PathBuf,
    /// detections.csv.
    #[arg(long)]
    detections: PathBuf,
    /// Matching radius in pixels.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    /// Threshold set: "exact", "uniform:N", or a comma list like "0.1,0.5".
    #[arg(long, default_value = "exact")]
    thresholds: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Comma-separated radii in pixels.
    #[arg(long, default_value = "10,25,50,100,200")]
    radii: String,
    #[arg(long, default_value = "exact")]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TilesArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 1000)]
    tile_width: u32,
    #[arg(long, default_value_t = 1000)]
    tile_height: u32,
    /// Threshold for the single tile report.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Matching radius for the recall axis of the effort curve.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long, default_value = "exact")]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Comma-separated train,val,test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    fractions: String,
    #[arg(long, default_value_t = 3)]
    n_splits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Optional splits.json to break statistics down per set.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Optional detections.csv for per-image detection statistics.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct LabelgridArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Image to crop from.
    #[arg(long)]
    image_id: String,
    /// Patch origin "x,y" in pixels.
    #[arg(long, default_value = "0,0")]
    origin: String,
    #[arg(long, default_value_t = 512)]
    patch_size: u32,
    #[arg(long, default_value_t = 32)]
    grid_size: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct StitchArgs {
    /// Directory of patch grid containers, lexicographic name order matching
    /// the row-major patch layout.
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    image_width: u32,
    #[arg(long)]
    image_height: u32,
    #[arg(long)]
    patches_x: u32,
    #[arg(long)]
    patches_y: u32,
    #[arg(long, default_value_t = 512)]
    patch_size: u32,
    #[arg(long, default_value_t = 32)]
    grid_size: u32,
    /// When set, also extract detections for this image id.
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    #[arg(long, default_value_t = 400)]
    epochs: u32,
    /// Also print the plan as a table on stdout.
    #[arg(long, default_value_t = false)]
    table: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    images: u32,
    #[arg(long, default_value_t = 4000)]
    width: u32,
    #[arg(long, default_value_t = 3000)]
    height: u32,
    #[arg(long, default_value_t = 0.6)]
    fraction_empty: f64,
    /// Mean animals per non-empty image (at least 1).
    #[arg(long, default_value_t = 3.0)]
    mean_animals: f64,
    #[arg(long, default_value_t = 0.9)]
    hit_rate: f64,
    /// Positional noise sigma in pixels.
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    fp_per_image: f64,
    /// Minimum animal separation in pixels (default 2 * sigma).
    #[arg(long)]
    min_separation: Option<f64>,
    /// True-detection score model "alpha,beta".
    #[arg(long, default_value = "5,2")]
    tp_score: String,
    /// False-alarm score model "alpha,beta".
    #[arg(long, default_value = "2,5")]
    fp_score: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OracleCheckArgs {
    #[arg(long, default_value_t = 1000)]
    instances: u32,
    /// Maximum points per side of a random instance.
    #[arg(long, default_value_t = 8)]
    max_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional directory for the JSON result.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Tiles(args) => run_tiles(args),
        Command::Split(args) => run_split(args),
        Command::Stats(args) => run_stats(args),
        Command::Labelgrid(args) => run_labelgrid(args),
        Command::Stitch(args) => run_stitch(args),
        Command::Plan(args) => run_plan(args),
        Command::Simulate(args) => run_simulate(args),
        Command::OracleCheck(args) => run_oracle_check(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            let code = exit_code_for(&err);
            let record = serde_json::json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": err.to_string(),
                    "exit_code": code,
                }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}

/// CENSUS_EVAL_THREADS caps the rayon worker pool.
fn configure_threads() {
    if let Ok(value) = std::env::var("CENSUS_EVAL_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::BadContainer(_) => 4,
        _ => 5,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Io(_) => "io",
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "parse",
        Error::BadContainer(_) => "container",
        Error::Validation(_) => "validation",
        Error::MixedImageIds { .. } => "mixed_image_ids",
        Error::UnknownImage(_) => "unknown_image",
        Error::InstanceTooLarge { .. } => "instance_too_large",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::NonSimplex { .. } => "non_simplex",
        Error::InfeasibleSplit(_) => "infeasible_split",
        Error::Coverage(_) => "coverage",
        Error::ZeroClassCount(_) => "zero_class_count",
        Error::InfeasiblePlacement(_) => "infeasible_placement",
        Error::LedgerMismatch(_) => "ledger_mismatch",
    }
}

type CliResult = Result<ExitCode, Error>;

fn ensure_out_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn parse_comma_floats(text: &str, what: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| Error::Validation(format!("bad {what} {part:?}: {e}")))
        })
        .collect()
}

fn parse_beta(text: &str, what: &str) -> Result<BetaParams, Error> {
    let parts = parse_comma_floats(text, what)?;
    if parts.len() != 2 {
        return Err(Error::Validation(format!(
            "{what} must be \"alpha,beta\", got {text:?}"
        )));
    }
    Ok(BetaParams {
        alpha: parts[0],
        beta: parts[1],
    })
}

/// Resolves a threshold specification against the loaded detections.
fn resolve_thresholds(spec: &str, detections: &[ScoredDetection]) -> Result<Vec<f64>, Error> {
    if spec == "exact" {
        return Ok(exact_thresholds(detections));
    }
    if let Some(n) = spec.strip_prefix("uniform:") {
        let n: usize = n
            .parse()
            .map_err(|e| Error::Validation(format!("bad uniform threshold count: {e}")))?;
        return Ok(uniform_thresholds(n));
    }
    let mut values = parse_comma_floats(spec, "threshold")?;
    values.sort_by(f64::total_cmp);
    Ok(values)
}

fn load_inputs(
    annotations: &Path,
    images: &Path,
    detections: &Path,
) -> Result<(Dataset, Vec<ScoredDetection>), Error> {
    let dataset = load_annotations(annotations, images)?;
    let dets = load_detections(detections)?;
    dataset::validate_detections(&dataset, &dets)?;
    Ok((dataset, dets))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    serde_json::to_writer_pretty(std::fs::File::create(path)?, value)?;
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let (dataset, detections) = load_inputs(&args.annotations, &args.images, &args.detections)?;
    let range = DistanceRange::new(args.radius)?;
    let thresholds = resolve_thresholds(&args.thresholds, &detections)?;
    let curve = pr_curve(&dataset.ground_truth, &detections, range, &thresholds)?;

    save_operating_points_csv(&args.out.join("pr_curve.csv"), &curve)?;
    save_json(&args.out.join("pr_curve.json"), &curve)?;
    RunManifest::new("evaluate")
        .input("annotations", &args.annotations)
        .input("images", &args.images)
        .input("detections", &args.detections)
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!(
        "evaluate: {} operating points at radius {} -> {}",
        curve.len(),
        args.radius,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepEntry {
    radius: f64,
    curve: Vec<census_eval::metrics::OperatingPoint>,
}

fn run_sweep(args: SweepArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let (dataset, detections) = load_inputs(&args.annotations, &args.images, &args.detections)?;
    let radii = if args.radii.trim().is_empty() {
        DEFAULT_SWEEP_RADII.to_vec()
    } else {
        parse_comma_floats(&args.radii, "radius")?
    };
    let thresholds = resolve_thresholds(&args.thresholds, &detections)?;
    let sweep = sweep_distance_thresholds(&dataset.ground_truth, &detections, &radii, &thresholds)?;

    let entries: Vec<SweepEntry> = sweep
        .into_iter()
        .map(|(radius, curve)| SweepEntry { radius, curve })
        .collect();
    for entry in &entries {
        save_operating_points_csv(
            &args.out.join(format!("sweep_r{}.csv", entry.radius)),
            &entry.curve,
        )?;
    }
    save_json(&args.out.join("sweep.json"), &entries)?;
    RunManifest::new("sweep")
        .input("annotations", &args.annotations)
        .input("images", &args.images)
        .input("detections", &args.detections)
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!("sweep: {} radii -> {}", entries.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_tiles(args: TilesArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let (dataset, detections) = load_inputs(&args.annotations, &args.images, &args.detections)?;
    let spec = TileGridSpec::new(args.tile_width, args.tile_height)?;
    let range = DistanceRange::new(args.radius)?;
    let report = tile_report(
        &dataset.ground_truth,
        &detections,
        &dataset.images,
        spec,
        args.threshold,
    )?;
    let thresholds = resolve_thresholds(&args.thresholds, &detections)?;
    let curve = screening_effort_curve(
        &dataset.ground_truth,
        &detections,
        &dataset.images,
        spec,
        range,
        &thresholds,
    )?;

    save_json(&args.out.join("tile_report.json"), &report)?;
    save_screening_curve_csv(&args.out.join("screening_curve.csv"), &curve)?;
    save_json(&args.out.join("screening_curve.json"), &curve)?;
    RunManifest::new("tiles")
        .input("annotations", &args.annotations)
        .input("images", &args.images)
        .input("detections", &args.detections)
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!(
        "tiles: {} of {} tiles hold detections at threshold {} -> {}",
        report.tiles_with_detections,
        report.tiles_total,
        args.threshold,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_split(args: SplitArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let dataset = load_annotations(&args.annotations, &args.images)?;
    let fractions = parse_comma_floats(&args.fractions, "fraction")?;
    if fractions.len() != 3 {
        return Err(Error::Validation(format!(
            "--fractions needs train,val,test, got {:?}",
            args.fractions
        )));
    }
    let splits = split_dataset(
        &dataset,
        (fractions[0], fractions[1], fractions[2]),
        args.n_splits,
        args.seed,
    )?;
    let stats: Result<Vec<_>, Error> = splits
        .iter()
        .map(|s| dataset_statistics(&dataset, s))
        .collect();

    dataset::save_splits(&splits, &args.out.join("splits.json"))?;
    save_json(&args.out.join("split_stats.json"), &stats?)?;
    RunManifest::new("split")
        .input("annotations", &args.annotations)
        .input("images", &args.images)
        .config(&args)?
        .seed(args.seed)
        .save(&args.out.join("manifest.json"))?;
    println!(
        "split: {} assignments over {} images -> {}",
        splits.len(),
        dataset.images.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct StatsOutput {
    total: census_eval::dataset::SetStats,
    per_split: Vec<census_eval::dataset::SplitStatistics>,
}

fn run_stats(args: StatsArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let dataset = load_annotations(&args.annotations, &args.images)?;
    let per_split = match &args.splits {
        Some(path) => {
            let splits = dataset::load_splits(path)?;
            splits
                .iter()
                .map(|s| dataset_statistics(&dataset, s))
                .collect::<Result<Vec<_>, Error>>()?
        }
        None => Vec::new(),
    };
    let output = StatsOutput {
        total: whole_dataset_statistics(&dataset),
        per_split,
    };
    save_json(&args.out.join("stats.json"), &output)?;

    let mut manifest = RunManifest::new("stats")
        .input("annotations", &args.annotations)
        .input("images", &args.images);
    if let Some(path) = &args.detections {
        let detections = load_detections(path)?;
        dataset::validate_detections(&dataset, &detections)?;
        let det_stats = per_image_detection_stats(&detections, args.threshold);
        save_json(&args.out.join("detection_stats.json"), &det_stats)?;
        manifest = manifest.input("detections", path);
    }
    if let Some(path) = &args.splits {
        manifest = manifest.input("splits", path);
    }
    manifest
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!(
        "stats: {} images, {} animals -> {}",
        dataset.images.len(),
        dataset.total_animals(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_labelgrid(args: LabelgridArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let dataset = load_annotations(&args.annotations, &args.images)?;
    if dataset.image(&args.image_id).is_none() {
        return Err(Error::UnknownImage(args.image_id.clone()));
    }
    let origin = parse_comma_floats(&args.origin, "origin")?;
    if origin.len() != 2 || origin.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        return Err(Error::Validation(format!(
            "--origin must be non-negative integers \"x,y\", got {:?}",
            args.origin
        )));
    }
    let geometry = GridGeometry::new(args.patch_size, args.grid_size)?;
    let points: Vec<GroundTruthPoint> = dataset
        .ground_truth_for(&args.image_id)
        .into_iter()
        .cloned()
        .collect();
    let grid = make_label_grid(&points, (origin[0] as u32, origin[1] as u32), geometry);
    let histogram = grid.class_histogram();

    save_grid(&args.out.join("label_grid.bin"), &grid.to_one_hot(), geometry)?;
    RunManifest::new("labelgrid")
        .input("annotations", &args.annotations)
        .input("images", &args.images)
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!(
        "labelgrid: {} animal, {} border, {} background cells -> {}",
        histogram[census_eval::ClassLabel::Animal.index()],
        histogram[census_eval::ClassLabel::Border.index()],
        histogram[census_eval::ClassLabel::Background.index()],
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_stitch(args: StitchArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let geometry = GridGeometry::new(args.patch_size, args.grid_size)?;
    let image = ImageMeta::new(
        args.image_id.clone().unwrap_or_else(|| "image".into()),
        args.image_width,
        args.image_height,
        false,
    )?;
    let layout = plan_patch_layout(&image, geometry, args.patches_x, args.patches_y)?;

    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.patches)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.extension().map_or(false, |e| e == "bin"))
        .collect();
    files.sort();
    if files.len() != layout.origins.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patch files in {} for a {}x{} layout ({} patches)",
            files.len(),
            args.patches.display(),
            args.patches_x,
            args.patches_y,
            layout.origins.len()
        )));
    }
    let grids: Result<Vec<_>, Error> = files.iter().map(|f| Ok(load_grid(f)?.0)).collect();
    let stitched = stitch_probability_grids(&grids?, &layout, geometry)?;
    save_grid(&args.out.join("stitched.bin"), &stitched, geometry)?;

    if args.image_id.is_some() {
        let detections = grid_to_detections(&stitched, geometry, &image);
        dataset::save_detections(&detections, &args.out.join("detections.csv"))?;
    }
    RunManifest::new("stitch")
        .input("patches", &args.patches)
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!(
        "stitch: {}x{} grid from {} patches -> {}",
        stitched.rows(),
        stitched.cols(),
        files.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_plan(args: PlanArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let plan = build_training_plan(args.epochs)?;
    save_json(&args.out.join("plan.json"), &plan)?;
    if args.table {
        write_plan_table(std::io::stdout().lock(), &plan)?;
    }
    RunManifest::new("plan")
        .config(&args)?
        .save(&args.out.join("manifest.json"))?;
    println!("plan: {} epochs -> {}", plan.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_simulate(args: SimulateArgs) -> CliResult {
    ensure_out_dir(&args.out)?;
    let spec = CampaignSpec {
        n_images: args.images,
        image_width: args.width,
        image_height: args.height,
        fraction_empty: args.fraction_empty,
        mean_animals_per_positive: args.mean_animals,
        detector: DetectorSpec {
            hit_rate: args.hit_rate,
            position_noise_sigma: args.sigma,
            fp_per_image: args.fp_per_image,
            tp_score: parse_beta(&args.tp_score, "tp-score")?,
            fp_score: parse_beta(&args.fp_score, "fp-score")?,
        },
        seed: args.seed,
        min_separation: args.min_separation,
    };
    let campaign = generate_campaign(&spec)?;

    dataset::save_annotations(
        &campaign.dataset,
        &args.out.join("annotations.csv"),
        &args.out.join("images.csv"),
    )?;
    dataset::save_detections(&campaign.detections, &args.out.join("detections.csv"))?;
    campaign.ledger.save(&args.out.join("ledger.json"))?;
    RunManifest::new("simulate")
        .config(&args)?
        .seed(args.seed)
        .save(&args.out.join("manifest.json"))?;
    println!(
        "simulate: {} images, {} animals, {} detections -> {}",
        campaign.dataset.images.len(),
        campaign.dataset.total_animals(),
        campaign.detections.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct OracleCheckResult {
    instances: u32,
    mismatches: u32,
    elapsed_seconds: f64,
}

fn run_oracle_check(args: OracleCheckArgs) -> CliResult {
    use census_eval::matching::ORACLE_SIZE_CAP;
    if args.max_points > ORACLE_SIZE_CAP {
        return Err(Error::Validation(format!(
            "--max-points {} exceeds the oracle cap {ORACLE_SIZE_CAP}",
            args.max_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let started = std::time::Instant::now();
    let mut mismatches = 0;
    for _ in 0..args.instances {
        let n_gt = rng.gen_range(0..=args.max_points);
        let n_det = rng.gen_range(0..=args.max_points);
        let gts: Vec<GroundTruthPoint> = (0..n_gt)
            .map(|i| GroundTruthPoint {
                image_id: "check".into(),
                x: rng.gen_range(0.0..100.0),
                y: rng.gen_range(0.0..100.0),
                instance_id: format!("g{i}"),
            })
            .collect();
        let dets: Vec<ScoredDetection> = (0..n_det)
            .map(|_| ScoredDetection {
                image_id: "check".into(),
                x: rng.gen_range(0.0..100.0),
                y: rng.gen_range(0.0..100.0),
                score: rng.gen_range(0.0..1.0),
            })
            .collect();
        let range = DistanceRange::new(rng.gen_range(5.0..45.0))?;
        let census = match_census(&gts, &dets, range)?;
        let oracle = match_oracle(&gts, &dets, range)?;
        let counts_equal = census.true_positives() == oracle.true_positives()
            && census.false_positives() == oracle.false_positives()
            && census.false_negatives() == oracle.false_negatives();
        let distance_equal =
            (census.total_matched_distance - oracle.total_matched_distance).abs() < 1e-6;
        if !counts_equal || !distance_equal {
            mismatches += 1;
        }
    }
    let result = OracleCheckResult {
        instances: args.instances,
        mismatches,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        save_json(&out.join("oracle_check.json"), &result)?;
        RunManifest::new("oracle-check")
            .config(&args)?
            .seed(args.seed)
            .save(&out.join("manifest.json"))?;
    }
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
