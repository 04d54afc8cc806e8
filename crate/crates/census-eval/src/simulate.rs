//! Synthetic campaign generator: image metadata, sparse ground truth and an
//! imperfect detector with planted hit/miss decisions, plus a ledger that
//! records the planted truth per detection for independent verification.
//!
//! Generation is deterministic under the campaign seed. Each image draws from
//! its own generator seeded by (campaign seed, image index), so per-image work
//! can run in any order without changing the output.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::MatchReport;
use crate::model::{GroundTruthPoint, ImageMeta, ScoredDetection};

/// Beta-distribution parameters for a score model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let dist = Beta::new(self.alpha, self.beta).map_err(|e| {
            Error::Validation(format!("invalid beta parameters {self:?}: {e}"))
        })?;
        Ok(dist.sample(rng))
    }
}

/// Detector imperfection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Probability that an animal produces a detection.
    pub hit_rate: f64,
    /// Standard deviation of the positional noise, in pixels.
    pub position_noise_sigma: f64,
    /// Mean of the per-image Poisson false-positive count.
    pub fp_per_image: f64,
    /// Score model for true detections; defaults to Beta(5, 2).
    pub tp_score: BetaParams,
    /// Score model for false alarms; defaults to Beta(2, 5).
    pub fp_score: BetaParams,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            hit_rate: 0.9,
            position_noise_sigma: 5.0,
            fp_per_image: 2.0,
            tp_score: BetaParams { alpha: 5.0, beta: 2.0 },
            fp_score: BetaParams { alpha: 2.0, beta: 5.0 },
        }
    }
}

impl DetectorSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hit_rate) {
            return Err(Error::Validation(format!(
                "hit rate {} outside [0, 1]",
                self.hit_rate
            )));
        }
        if self.position_noise_sigma < 0.0 || self.fp_per_image < 0.0 {
            return Err(Error::Validation(
                "position noise and false-positive rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Full description of a synthetic campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub n_images: u32,
    pub image_width: u32,
    pub image_height: u32,
    /// Fraction of images with no animals at all.
    pub fraction_empty: f64,
    /// Mean animal count of a non-empty image; counts are 1 + Poisson(mean - 1).
    pub mean_animals_per_positive: f64,
    pub detector: DetectorSpec,
    pub seed: u64,
    /// Minimum pairwise animal separation in pixels; defaults to
    /// `2 * position_noise_sigma` when absent. Lower it explicitly to stress
    /// the protocol with crowded scenes.
    pub min_separation: Option<f64>,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            n_images: 100,
            image_width: 4000,
            image_height: 3000,
            fraction_empty: 0.6,
            mean_animals_per_positive: 3.0,
            detector: DetectorSpec::default(),
            seed: 0,
            min_separation: None,
        }
    }
}

impl CampaignSpec {
    fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Validation(
                "campaign needs at least one image with positive dimensions".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.fraction_empty) {
            return Err(Error::Validation(format!(
                "fraction_empty {} outside [0, 1]",
                self.fraction_empty
            )));
        }
        if self.mean_animals_per_positive < 1.0 {
            return Err(Error::Validation(
                "mean animals per positive image must be at least 1".into(),
            ));
        }
        self.detector.validate()
    }

    fn separation(&self) -> f64 {
        self.min_separation
            .unwrap_or(2.0 * self.detector.position_noise_sigma)
    }
}

/// Planted truth for one generated detection, aligned with the detection list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub image_id: String,
    pub is_tp: bool,
    /// Instance id of the animal that produced a true detection.
    pub source_instance_id: Option<String>,
}

/// Book-keeping record of everything the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub spec: CampaignSpec,
    /// One entry per detection, in detection-list order.
    pub detections: Vec<LedgerEntry>,
    /// Animals planted per image (only images with animals appear).
    pub per_image_animals: std::collections::BTreeMap<String, u64>,
    pub planted_tp: u64,
    pub planted_fp: u64,
}

impl Ledger {
    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// A generated campaign: dataset, detections and the planted-truth ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub dataset: Dataset,
    pub detections: Vec<ScoredDetection>,
    pub ledger: Ledger,
}

const MAX_PLACEMENT_ATTEMPTS: u32 = 1000;

fn place_animals<R: Rng>(
    rng: &mut R,
    count: u64,
    width: u32,
    height: u32,
    min_separation: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut attempts = 0;
        loop {
            let candidate = (
                rng.gen_range(0.0..f64::from(width)),
                rng.gen_range(0.0..f64::from(height)),
            );
            let clear = placed.iter().all(|&p| {
                crate::model::euclidean_distance(p, candidate) >= min_separation
            });
            if clear {
                placed.push(candidate);
                break;
            }
            attempts += 1;
            if attempts >= MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::InfeasiblePlacement(format!(
                    "could not place {count} animals with separation {min_separation} in {width}x{height}"
                )));
            }
        }
    }
    Ok(placed)
}

fn image_rng(seed: u64, image_index: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(u64::from(image_index)),
    )
}

/// Generates a campaign: deterministic under `spec.seed`.
pub fn generate_campaign(spec: &CampaignSpec) -> Result<Campaign> {
    spec.validate()?;
    let n_images = spec.n_images;
    let n_empty = (spec.fraction_empty * f64::from(n_images)).round() as u32;

    // Decide per-image emptiness up front with the master generator so the
    // per-image generators stay independent of each other.
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut empty_flags = vec![false; n_images as usize];
    let mut indices: Vec<usize> = (0..n_images as usize).collect();
    indices.shuffle(&mut master);
    for &i in indices.iter().take(n_empty as usize) {
        empty_flags[i] = true;
    }

    let mut images = Vec::new();
    let mut ground_truth = Vec::new();
    let mut detections = Vec::new();
    let mut ledger_entries = Vec::new();
    let mut per_image_animals = std::collections::BTreeMap::new();
    let mut instance_counter = 0u64;

    let sigma = spec.detector.position_noise_sigma;
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?)
    } else {
        None
    };

    for index in 0..n_images {
        let image_id = format!("img_{index:05}");
        let mut rng = image_rng(spec.seed, index);
        let is_empty = empty_flags[index as usize];

        let count = if is_empty {
            0
        } else {
            let extra_mean = spec.mean_animals_per_positive - 1.0;
            let extra = if extra_mean > 0.0 {
                Poisson::new(extra_mean)
                    .map_err(|e| Error::Validation(e.to_string()))?
                    .sample(&mut rng) as u64
            } else {
                0
            };
            1 + extra
        };

        images.push(ImageMeta::new(
            image_id.clone(),
            spec.image_width,
            spec.image_height,
            count > 0,
        )?);
        if count > 0 {
            per_image_animals.insert(image_id.clone(), count);
        }

        let positions = place_animals(
            &mut rng,
            count,
            spec.image_width,
            spec.image_height,
            spec.separation(),
        )?;
        let mut animal_ids = Vec::new();
        for (x, y) in positions.iter().copied() {
            let instance_id = format!("a{instance_counter:06}");
            instance_counter += 1;
            ground_truth.push(GroundTruthPoint {
                image_id: image_id.clone(),
                x,
                y,
                instance_id: instance_id.clone(),
            });
            animal_ids.push((instance_id, x, y));
        }

        // True detections: Bernoulli(hit_rate) per animal, noisy position.
        for (instance_id, x, y) in &animal_ids {
            if !rng.gen_bool(spec.detector.hit_rate) {
                continue;
            }
            let (dx, dy) = match &noise {
                Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
                None => (0.0, 0.0),
            };
            let det_x = (x + dx).clamp(0.0, f64::from(spec.image_width) - 1.0);
            let det_y = (y + dy).clamp(0.0, f64::from(spec.image_height) - 1.0);
            detections.push(ScoredDetection {
                image_id: image_id.clone(),
                x: det_x,
                y: det_y,
                score: spec.detector.tp_score.sample(&mut rng)?,
            });
            ledger_entries.push(LedgerEntry {
                image_id: image_id.clone(),
                is_tp: true,
                source_instance_id: Some(instance_id.clone()),
            });
        }

        // False alarms: Poisson count, uniform positions.
        let fp_count = if spec.detector.fp_per_image > 0.0 {
            Poisson::new(spec.detector.fp_per_image)
                .map_err(|e| Error::Validation(e.to_string()))?
                .sample(&mut rng) as u64
        } else {
            0
        };
        for _ in 0..fp_count {
            detections.push(ScoredDetection {
                image_id: image_id.clone(),
                x: rng.gen_range(0.0..f64::from(spec.image_width)),
                y: rng.gen_range(0.0..f64::from(spec.image_height)),
                score: spec.detector.fp_score.sample(&mut rng)?,
            });
            ledger_entries.push(LedgerEntry {
                image_id: image_id.clone(),
                is_tp: false,
                source_instance_id: None,
            });
        }
    }

    let planted_tp = ledger_entries.iter().filter(|e| e.is_tp).count() as u64;
    let planted_fp = ledger_entries.len() as u64 - planted_tp;
    Ok(Campaign {
        dataset: Dataset::new(images, ground_truth)?,
        detections,
        ledger: Ledger {
            spec: spec.clone(),
            detections: ledger_entries,
            per_image_animals,
            planted_tp,
            planted_fp,
        },
    })
}

/// Agreement between the protocol's TP/FP decisions and the planted truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub detections: u64,
    pub agreeing: u64,
    pub agreement: f64,
    pub protocol_tp: u64,
    pub planted_tp: u64,
}

/// Replays match reports against the ledger. Reports must come from matching
/// the full campaign detections (threshold 0) image by image.
pub fn replay_ledger(ledger: &Ledger, reports: &[MatchReport]) -> Result<AgreementStats> {
    // Detection indices in the ledger are per campaign; rebuild per-image
    // index ranges in generation order.
    let mut per_image: std::collections::BTreeMap<&str, Vec<&LedgerEntry>> = Default::default();
    for entry in &ledger.detections {
        per_image.entry(entry.image_id.as_str()).or_default().push(entry);
    }

    let mut detections = 0u64;
    let mut agreeing = 0u64;
    let mut protocol_tp = 0u64;
    for report in reports {
        // Images without detections never reach the ledger; their reports must
        // then cover zero detections.
        let entries = per_image.remove(report.image_id.as_str()).unwrap_or_default();
        let n = entries.len();
        let covered = report.pairs.len() + report.false_positive_indices.len();
        if covered != n {
            return Err(Error::LedgerMismatch(format!(
                "image {:?}: report covers {covered} detections, ledger has {n}",
                report.image_id
            )));
        }
        let mut verdicts = vec![false; n];
        for &(det, _) in &report.pairs {
            if det >= n {
                return Err(Error::LedgerMismatch(format!(
                    "image {:?}: detection index {det} out of range",
                    report.image_id
                )));
            }
            verdicts[det] = true;
        }
        protocol_tp += report.pairs.len() as u64;
        detections += n as u64;
        agreeing += entries
            .iter()
            .zip(&verdicts)
            .filter(|(entry, &verdict)| entry.is_tp == verdict)
            .count() as u64;
    }
    if let Some(missing) = per_image.keys().next() {
        return Err(Error::LedgerMismatch(format!(
            "no report for image {missing:?}"
        )));
    }
    Ok(AgreementStats {
        detections,
        agreeing,
        agreement: if detections > 0 {
            agreeing as f64 / detections as f64
        } else {
            1.0
        },
        protocol_tp,
        planted_tp: ledger.planted_tp,
    })
}

/// Matches every campaign image at threshold 0 and replays the ledger.
pub fn replay_campaign(campaign: &Campaign, range: crate::model::DistanceRange) -> Result<AgreementStats> {
    let reports = campaign_reports(campaign, range)?;
    replay_ledger(&campaign.ledger, &reports)
}

/// Per-image census reports over all campaign detections.
pub fn campaign_reports(
    campaign: &Campaign,
    range: crate::model::DistanceRange,
) -> Result<Vec<MatchReport>> {
    let mut det_by_image: std::collections::BTreeMap<&str, Vec<ScoredDetection>> =
        Default::default();
    for det in &campaign.detections {
        det_by_image
            .entry(det.image_id.as_str())
            .or_default()
            .push(det.clone());
    }
    campaign
        .dataset
        .images
        .iter()
        .filter_map(|image| {
            let dets = det_by_image.remove(image.image_id.as_str());
            let gts: Vec<GroundTruthPoint> = campaign
                .dataset
                .ground_truth_for(&image.image_id)
                .into_iter()
                .cloned()
                .collect();
            if dets.is_none() && gts.is_empty() {
                return None;
            }
            Some(crate::matching::match_census(
                &gts,
                &dets.unwrap_or_default(),
                range,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistanceRange;

    fn quiet_spec() -> CampaignSpec {
        CampaignSpec {
            n_images: 30,
            image_width: 1000,
            image_height: 800,
            fraction_empty: 0.5,
            mean_animals_per_positive: 3.0,
            seed: 11,
            ..CampaignSpec::default()
        }
    }

    #[test]
    fn exact_empty_fraction() {
        let spec = CampaignSpec {
            n_images: 100,
            fraction_empty: 0.65,
            seed: 3,
            ..CampaignSpec::default()
        };
        let campaign = generate_campaign(&spec).unwrap();
        let empty = campaign
            .dataset
            .images
            .iter()
            .filter(|m| !m.has_animals)
            .count();
        assert_eq!(empty, 65);
        assert_eq!(campaign.dataset.images.len(), 100);
    }

    #[test]
    fn same_seed_same_campaign() {
        let spec = quiet_spec();
        let a = generate_campaign(&spec).unwrap();
        let b = generate_campaign(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.ledger, b.ledger);
        let different = generate_campaign(&CampaignSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.detections, different.detections);
    }

    #[test]
    fn generated_detections_satisfy_model_invariants() {
        let campaign = generate_campaign(&quiet_spec()).unwrap();
        for det in &campaign.detections {
            det.validate().unwrap();
            let image = campaign.dataset.image(&det.image_id).unwrap();
            assert!(image.contains(det.x, det.y));
        }
        assert_eq!(campaign.detections.len(), campaign.ledger.detections.len());
    }

    #[test]
    fn perfect_detector_is_perfect() {
        let spec = CampaignSpec {
            detector: DetectorSpec {
                hit_rate: 1.0,
                position_noise_sigma: 0.0,
                fp_per_image: 0.0,
                ..DetectorSpec::default()
            },
            ..quiet_spec()
        };
        let campaign = generate_campaign(&spec).unwrap();
        assert!(campaign.ledger.planted_fp == 0);
        assert_eq!(
            campaign.ledger.planted_tp,
            campaign.dataset.total_animals()
        );
        let stats = replay_campaign(&campaign, DistanceRange::new(50.0).unwrap()).unwrap();
        assert_eq!(stats.agreement, 1.0);
        assert_eq!(stats.protocol_tp, campaign.dataset.total_animals());
    }

    #[test]
    fn fp_only_detector_agrees() {
        let spec = CampaignSpec {
            detector: DetectorSpec {
                hit_rate: 0.0,
                fp_per_image: 3.0,
                ..DetectorSpec::default()
            },
            ..quiet_spec()
        };
        let campaign = generate_campaign(&spec).unwrap();
        assert_eq!(campaign.ledger.planted_tp, 0);
        // A uniform false alarm occasionally lands within range of an animal;
        // use a small radius so the protocol verdicts match the ledger.
        let stats = replay_campaign(&campaign, DistanceRange::new(1.0).unwrap()).unwrap();
        assert_eq!(stats.protocol_tp, 0);
        assert_eq!(stats.agreement, 1.0);
    }

    #[test]
    fn ledger_counts_match_detections() {
        let campaign = generate_campaign(&quiet_spec()).unwrap();
        let tp = campaign.ledger.detections.iter().filter(|e| e.is_tp).count() as u64;
        assert_eq!(tp, campaign.ledger.planted_tp);
        assert_eq!(
            campaign.ledger.planted_tp + campaign.ledger.planted_fp,
            campaign.detections.len() as u64
        );
        let per_image_total: u64 = campaign.ledger.per_image_animals.values().sum();
        assert_eq!(per_image_total, campaign.dataset.total_animals());
    }

    #[test]
    fn replay_rejects_foreign_reports() {
        let campaign = generate_campaign(&quiet_spec()).unwrap();
        let other = generate_campaign(&CampaignSpec {
            seed: 999,
            n_images: 3,
            fraction_empty: 0.0,
            ..quiet_spec()
        })
        .unwrap();
        let reports = campaign_reports(&other, DistanceRange::new(50.0).unwrap()).unwrap();
        assert!(replay_ledger(&campaign.ledger, &reports).is_err());
    }

    #[test]
    fn infeasible_density_reported() {
        let spec = CampaignSpec {
            n_images: 1,
            image_width: 10,
            image_height: 10,
            fraction_empty: 0.0,
            mean_animals_per_positive: 200.0,
            min_separation: Some(5.0),
            seed: 1,
            ..CampaignSpec::default()
        };
        assert!(matches!(
            generate_campaign(&spec),
            Err(Error::InfeasiblePlacement(_))
        ));
    }

    #[test]
    fn ledger_round_trips_through_json() {
        let campaign = generate_campaign(&quiet_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        campaign.ledger.save(&path).unwrap();
        assert_eq!(Ledger::load(&path).unwrap(), campaign.ledger);
    }
}
