//! Census-oriented matching of detections against ground-truth points for a
//! single image.
//!
//! A detection may pair with a ground truth only if it lies inside the closed
//! circular range around the ground-truth center. Among all pairings the
//! protocol selects a maximum-cardinality matching on the in-range bipartite
//! graph, and among those the one with minimum total matched distance. The
//! consequences line up with the counting rules of a census:
//!
//! * n detections around one animal give one true positive and n-1 false
//!   positives;
//! * a detection in range of several animals is a true positive as long as it
//!   is needed to cover one of them, and a false positive once every animal in
//!   its range is covered by closer detections;
//! * true positives never exceed the number of animals.
//!
//! The matching is found by successive shortest augmenting paths; each
//! augmentation yields a minimum-distance matching of its cardinality, so the
//! final matching is distance-minimal among maximum ones. Equal-distance
//! alternatives resolve toward lower detection and ground-truth indices by
//! iteration order, which makes the output deterministic.
//!
//! [`match_oracle`] re-solves small instances by exhaustive enumeration and is
//! used to validate [`match_census`].

use crate::error::{Error, Result};
use crate::model::{euclidean_distance, DistanceRange, GroundTruthPoint, ScoredDetection};

/// Cap on either side of an instance fed to [`match_oracle`].
pub const ORACLE_SIZE_CAP: usize = 10;

/// Per-image TP/FP/FN assignment under the census protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub image_id: String,
    /// Matched (detection index, ground-truth index) pairs, sorted by
    /// detection index. Every pair is within the matching range.
    pub pairs: Vec<(usize, usize)>,
    /// Detection indices left unmatched, ascending.
    pub false_positive_indices: Vec<usize>,
    /// Instance ids of unmatched ground truths, in input order.
    pub false_negative_ids: Vec<String>,
    /// Sum of pair distances, in pixels.
    pub total_matched_distance: f64,
}

impl MatchReport {
    pub fn true_positives(&self) -> u64 {
        self.pairs.len() as u64
    }

    pub fn false_positives(&self) -> u64 {
        self.false_positive_indices.len() as u64
    }

    pub fn false_negatives(&self) -> u64 {
        self.false_negative_ids.len() as u64
    }
}

/// In-range edges of the bipartite detection/ground-truth graph.
struct RangeGraph {
    /// Per detection: (ground-truth index, distance) for every in-range pair.
    edges: Vec<Vec<(usize, f64)>>,
    n_gt: usize,
}

impl RangeGraph {
    fn build(
        ground_truth: &[GroundTruthPoint],
        detections: &[ScoredDetection],
        range: DistanceRange,
    ) -> Self {
        let edges = detections
            .iter()
            .map(|det| {
                ground_truth
                    .iter()
                    .enumerate()
                    .filter_map(|(j, gt)| {
                        let d = euclidean_distance(det.position(), gt.position());
                        range.contains(d).then_some((j, d))
                    })
                    .collect()
            })
            .collect();
        Self {
            edges,
            n_gt: ground_truth.len(),
        }
    }
}

fn check_single_image(
    ground_truth: &[GroundTruthPoint],
    detections: &[ScoredDetection],
) -> Result<String> {
    let mut image_id: Option<&str> = None;
    for id in ground_truth
        .iter()
        .map(|g| g.image_id.as_str())
        .chain(detections.iter().map(|d| d.image_id.as_str()))
    {
        match image_id {
            None => image_id = Some(id),
            Some(expected) if expected != id => {
                return Err(Error::MixedImageIds {
                    expected: expected.to_string(),
                    found: id.to_string(),
                })
            }
            Some(_) => {}
        }
    }
    // Both sides empty: there is no image to report on; keep the id empty.
    Ok(image_id.unwrap_or("").to_string())
}

/// Matches detections to ground truth for one image under the census protocol.
///
/// Returns an error if the points span more than one `image_id`.
pub fn match_census(
    ground_truth: &[GroundTruthPoint],
    detections: &[ScoredDetection],
    range: DistanceRange,
) -> Result<MatchReport> {
    let image_id = check_single_image(ground_truth, detections)?;
    let graph = RangeGraph::build(ground_truth, detections, range);
    let (match_det, total) = min_distance_maximum_matching(&graph);
    Ok(assemble_report(image_id, ground_truth, &match_det, total))
}

/// Successive shortest augmenting paths on the in-range graph.
///
/// Each iteration finds the cheapest alternating path from a free detection to
/// a free ground truth (Bellman-Ford relaxation; backward matched edges carry
/// negative cost) and augments along it. Stops when no augmenting path exists.
fn min_distance_maximum_matching(graph: &RangeGraph) -> (Vec<Option<usize>>, f64) {
    let n_det = graph.edges.len();
    let n_gt = graph.n_gt;
    let mut match_det: Vec<Option<usize>> = vec![None; n_det];
    let mut match_gt: Vec<Option<usize>> = vec![None; n_gt];

    loop {
        let mut dist_det = vec![f64::INFINITY; n_det];
        let mut dist_gt = vec![f64::INFINITY; n_gt];
        let mut prev_gt: Vec<usize> = vec![usize::MAX; n_gt];
        for (i, m) in match_det.iter().enumerate() {
            if m.is_none() {
                dist_det[i] = 0.0;
            }
        }

        // Alternating paths have at most n_det + n_gt edges; relax until
        // stable with that bound as a safety cap.
        let max_rounds = n_det + n_gt + 2;
        for _ in 0..max_rounds {
            let mut changed = false;
            for i in 0..n_det {
                if !dist_det[i].is_finite() {
                    continue;
                }
                for &(j, cost) in &graph.edges[i] {
                    if match_det[i] == Some(j) {
                        continue; // would traverse the matched edge forward
                    }
                    let cand = dist_det[i] + cost;
                    if cand < dist_gt[j] {
                        dist_gt[j] = cand;
                        prev_gt[j] = i;
                        changed = true;
                        if let Some(i2) = match_gt[j] {
                            // Walk the matched edge back to its detection.
                            let back = cand - edge_cost(graph, i2, j);
                            if back < dist_det[i2] {
                                dist_det[i2] = back;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let target = (0..n_gt)
            .filter(|&j| match_gt[j].is_none() && dist_gt[j].is_finite())
            .min_by(|&a, &b| dist_gt[a].total_cmp(&dist_gt[b]).then(a.cmp(&b)));
        let Some(mut j) = target else {
            break;
        };

        // Flip the alternating path ending at the free ground truth `j`.
        loop {
            let i = prev_gt[j];
            let continue_at = match_det[i];
            match_det[i] = Some(j);
            match_gt[j] = Some(i);
            match continue_at {
                Some(prev_j) => j = prev_j,
                None => break,
            }
        }
    }

    let total = match_det
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| edge_cost(graph, i, j)))
        .sum();
    (match_det, total)
}

fn edge_cost(graph: &RangeGraph, det: usize, gt: usize) -> f64 {
    graph.edges[det]
        .iter()
        .find(|&&(j, _)| j == gt)
        .map(|&(_, d)| d)
        .expect("matched edge must exist in the range graph")
}

fn assemble_report(
    image_id: String,
    ground_truth: &[GroundTruthPoint],
    match_det: &[Option<usize>],
    total_matched_distance: f64,
) -> MatchReport {
    let mut pairs = Vec::new();
    let mut false_positive_indices = Vec::new();
    let mut matched_gt = vec![false; ground_truth.len()];
    for (i, m) in match_det.iter().enumerate() {
        match m {
            Some(j) => {
                pairs.push((i, *j));
                matched_gt[*j] = true;
            }
            None => false_positive_indices.push(i),
        }
    }
    let false_negative_ids = ground_truth
        .iter()
        .zip(&matched_gt)
        .filter(|(_, &m)| !m)
        .map(|(gt, _)| gt.instance_id.clone())
        .collect();
    MatchReport {
        image_id,
        pairs,
        false_positive_indices,
        false_negative_ids,
        total_matched_distance,
    }
}

/// Exhaustive matching oracle for instances of at most [`ORACLE_SIZE_CAP`]
/// points per side.
///
/// Enumerates every valid pairing of in-range pairs and returns the one
/// maximizing cardinality, tie-broken by minimum total distance and then by
/// the lexicographically smallest pair list. Counts agree with
/// [`match_census`] on every instance.
pub fn match_oracle(
    ground_truth: &[GroundTruthPoint],
    detections: &[ScoredDetection],
    range: DistanceRange,
) -> Result<MatchReport> {
    if ground_truth.len() > ORACLE_SIZE_CAP || detections.len() > ORACLE_SIZE_CAP {
        return Err(Error::InstanceTooLarge {
            ground_truth: ground_truth.len(),
            detections: detections.len(),
            cap: ORACLE_SIZE_CAP,
        });
    }
    let image_id = check_single_image(ground_truth, detections)?;
    let graph = RangeGraph::build(ground_truth, detections, range);

    let mut best: Option<(usize, f64, Vec<(usize, usize)>)> = None;
    let mut gt_used = vec![false; graph.n_gt];
    let mut current: Vec<(usize, usize)> = Vec::new();
    enumerate_pairings(&graph, 0, &mut gt_used, &mut current, 0.0, &mut best);

    let (_, total, pairs) = best.expect("enumeration always yields at least the empty pairing");
    let mut match_det = vec![None; detections.len()];
    for &(i, j) in &pairs {
        match_det[i] = Some(j);
    }
    Ok(assemble_report(image_id, ground_truth, &match_det, total))
}

fn enumerate_pairings(
    graph: &RangeGraph,
    det: usize,
    gt_used: &mut Vec<bool>,
    current: &mut Vec<(usize, usize)>,
    total: f64,
    best: &mut Option<(usize, f64, Vec<(usize, usize)>)>,
) {
    if det == graph.edges.len() {
        let candidate = (current.len(), total, current.clone());
        let replace = match best {
            None => true,
            Some((card, dist, pairs)) => {
                candidate.0 > *card
                    || (candidate.0 == *card
                        && (candidate.1 < *dist
                            || (candidate.1 == *dist && candidate.2 < *pairs)))
            }
        };
        if replace {
            *best = Some(candidate);
        }
        return;
    }
    // Leave this detection unmatched.
    enumerate_pairings(graph, det + 1, gt_used, current, total, best);
    // Or match it to any free in-range ground truth.
    for idx in 0..graph.edges[det].len() {
        let (j, cost) = graph.edges[det][idx];
        if gt_used[j] {
            continue;
        }
        gt_used[j] = true;
        current.push((det, j));
        enumerate_pairings(graph, det + 1, gt_used, current, total + cost, best);
        current.pop();
        gt_used[j] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt(x: f64, y: f64, id: &str) -> GroundTruthPoint {
        GroundTruthPoint {
            image_id: "img".into(),
            x,
            y,
            instance_id: id.into(),
        }
    }

    fn det(x: f64, y: f64) -> ScoredDetection {
        ScoredDetection {
            image_id: "img".into(),
            x,
            y,
            score: 0.5,
        }
    }

    fn radius(r: f64) -> DistanceRange {
        DistanceRange::new(r).unwrap()
    }

    fn counts(report: &MatchReport) -> (u64, u64, u64) {
        (
            report.true_positives(),
            report.false_positives(),
            report.false_negatives(),
        )
    }

    #[test]
    fn out_of_range_detection_is_false_positive() {
        // One animal, a close detection and a far one: the far one is rejected.
        let gts = vec![gt(100.0, 100.0, "a")];
        let dets = vec![det(120.0, 100.0), det(220.0, 100.0)];
        let report = match_census(&gts, &dets, radius(50.0)).unwrap();
        assert_eq!(counts(&report), (1, 1, 0));
        assert_eq!(report.pairs, vec![(0, 0)]);
        assert_eq!(report.false_positive_indices, vec![1]);
        assert_eq!(report.total_matched_distance, 20.0);
    }

    #[test]
    fn n_detections_on_one_animal_give_one_tp() {
        let gts = vec![gt(100.0, 100.0, "a")];
        let dets = vec![
            det(95.0, 100.0),
            det(105.0, 100.0),
            det(100.0, 110.0),
            det(100.0, 92.0),
        ];
        let report = match_census(&gts, &dets, radius(50.0)).unwrap();
        assert_eq!(counts(&report), (1, 3, 0));
        // The closest one is kept.
        assert_eq!(report.pairs, vec![(0, 0)]);
    }

    #[test]
    fn shared_detection_covers_the_otherwise_missed_animal() {
        // Middle detection is in range of both animals; the right animal has
        // its own detection, so the middle one must pair with the left animal.
        let gts = vec![gt(0.0, 0.0, "left"), gt(60.0, 0.0, "right")];
        let dets = vec![det(30.0, 0.0), det(62.0, 0.0)];
        let report = match_census(&gts, &dets, radius(40.0)).unwrap();
        assert_eq!(counts(&report), (2, 0, 0));
        assert_eq!(report.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn superfluous_shared_detection_is_false_positive() {
        // Both animals already covered by dedicated detections; the shared
        // middle detection is discarded.
        let gts = vec![gt(0.0, 0.0, "left"), gt(60.0, 0.0, "right")];
        let dets = vec![det(5.0, 0.0), det(30.0, 0.0), det(62.0, 0.0)];
        let report = match_census(&gts, &dets, radius(40.0)).unwrap();
        assert_eq!(counts(&report), (2, 1, 0));
        assert_eq!(report.false_positive_indices, vec![1]);
    }

    #[test]
    fn empty_detections_give_only_false_negatives() {
        let gts = vec![gt(10.0, 10.0, "a"), gt(50.0, 50.0, "b")];
        let report = match_census(&gts, &[], radius(50.0)).unwrap();
        assert_eq!(counts(&report), (0, 0, 2));
        assert_eq!(report.false_negative_ids, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn empty_ground_truth_gives_only_false_positives() {
        let dets = vec![det(10.0, 10.0), det(50.0, 50.0)];
        let report = match_census(&[], &dets, radius(50.0)).unwrap();
        assert_eq!(counts(&report), (0, 2, 0));
    }

    #[test]
    fn boundary_distance_counts_as_in_range() {
        let gts = vec![gt(0.0, 0.0, "a")];
        let report = match_census(&gts, &[det(50.0, 0.0)], radius(50.0)).unwrap();
        assert_eq!(counts(&report), (1, 0, 0));
    }

    #[test]
    fn duplicate_detections_are_distinct_candidates() {
        let gts = vec![gt(0.0, 0.0, "a")];
        let dets = vec![det(10.0, 0.0), det(10.0, 0.0), det(10.0, 0.0)];
        let report = match_census(&gts, &dets, radius(50.0)).unwrap();
        assert_eq!(counts(&report), (1, 2, 0));
    }

    #[test]
    fn mixed_image_ids_rejected() {
        let gts = vec![gt(0.0, 0.0, "a")];
        let mut other = det(1.0, 1.0);
        other.image_id = "other".into();
        assert!(matches!(
            match_census(&gts, &[other], radius(50.0)),
            Err(Error::MixedImageIds { .. })
        ));
    }

    #[test]
    fn oracle_rejects_oversized_instances() {
        let gts: Vec<_> = (0..11).map(|i| gt(i as f64 * 100.0, 0.0, &format!("g{i}"))).collect();
        assert!(matches!(
            match_oracle(&gts, &[], radius(50.0)),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_handles_single_pair() {
        let gts = vec![gt(0.0, 0.0, "a")];
        let report = match_oracle(&gts, &[det(3.0, 4.0)], radius(50.0)).unwrap();
        assert_eq!(counts(&report), (1, 0, 0));
        assert_eq!(report.total_matched_distance, 5.0);
    }

    #[test]
    fn oracle_shared_detection_case() {
        // Two animals with dedicated detections plus one shared in between.
        let gts = vec![gt(0.0, 0.0, "left"), gt(60.0, 0.0, "right")];
        let dets = vec![det(5.0, 0.0), det(30.0, 0.0), det(62.0, 0.0)];
        let report = match_oracle(&gts, &dets, radius(40.0)).unwrap();
        assert_eq!(counts(&report), (2, 1, 0));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<GroundTruthPoint>, Vec<ScoredDetection>, DistanceRange) {
        let n_gt = rng.gen_range(0..=8);
        let n_det = rng.gen_range(0..=8);
        let gts = (0..n_gt)
            .map(|i| gt(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), &format!("g{i}")))
            .collect();
        let dets = (0..n_det)
            .map(|_| det(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let r = radius(rng.gen_range(5.0..45.0));
        (gts, dets, r)
    }

    #[test]
    fn census_equals_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let (gts, dets, r) = random_instance(&mut rng);
            let census = match_census(&gts, &dets, r).unwrap();
            let oracle = match_oracle(&gts, &dets, r).unwrap();
            assert_eq!(counts(&census), counts(&oracle));
            assert!(
                (census.total_matched_distance - oracle.total_matched_distance).abs() < 1e-6,
                "distance mismatch: census {} vs oracle {}",
                census.total_matched_distance,
                oracle.total_matched_distance
            );
        }
    }

    #[test]
    fn report_partitions_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (gts, dets, r) = random_instance(&mut rng);
            let report = match_census(&gts, &dets, r).unwrap();
            assert_eq!(
                report.true_positives() + report.false_negatives(),
                gts.len() as u64
            );
            assert_eq!(
                report.true_positives() + report.false_positives(),
                dets.len() as u64
            );
            for &(i, j) in &report.pairs {
                let d = euclidean_distance(dets[i].position(), gts[j].position());
                assert!(r.contains(d));
            }
        }
    }

    #[test]
    fn radius_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let (gts, dets, _) = random_instance(&mut rng);
            let small = match_census(&gts, &dets, radius(10.0)).unwrap();
            let large = match_census(&gts, &dets, radius(60.0)).unwrap();
            assert!(small.true_positives() <= large.true_positives());
        }
    }

    #[test]
    fn adding_detections_never_decreases_tp() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let (gts, mut dets, r) = random_instance(&mut rng);
            let before = match_census(&gts, &dets, r).unwrap().true_positives();
            dets.push(det(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)));
            let after = match_census(&gts, &dets, r).unwrap().true_positives();
            assert!(after >= before);
        }
    }

    #[test]
    fn pairing_invariant_under_permutation_with_distinct_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (gts, dets, r) = random_instance(&mut rng);
            let base = match_census(&gts, &dets, r).unwrap();

            let mut det_order: Vec<usize> = (0..dets.len()).collect();
            let mut gt_order: Vec<usize> = (0..gts.len()).collect();
            use rand::seq::SliceRandom;
            det_order.shuffle(&mut rng);
            gt_order.shuffle(&mut rng);
            let dets_perm: Vec<_> = det_order.iter().map(|&i| dets[i].clone()).collect();
            let gts_perm: Vec<_> = gt_order.iter().map(|&j| gts[j].clone()).collect();
            let perm = match_census(&gts_perm, &dets_perm, r).unwrap();

            assert_eq!(counts(&base), counts(&perm));
            // With continuous random coordinates the optimum is unique, so the
            // matched point pairs agree after undoing the permutation.
            let mut base_pairs: Vec<(usize, usize)> = base.pairs.clone();
            let mut perm_pairs: Vec<(usize, usize)> = perm
                .pairs
                .iter()
                .map(|&(i, j)| (det_order[i], gt_order[j]))
                .collect();
            base_pairs.sort_unstable();
            perm_pairs.sort_unstable();
            assert_eq!(base_pairs, perm_pairs);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn census_count_identities(
            gt_coords in proptest::collection::vec((0.0..200.0f64, 0.0..200.0f64), 0..8),
            det_coords in proptest::collection::vec((0.0..200.0f64, 0.0..200.0f64), 0..8),
            r in 5.0..80.0f64,
        ) {
            let gts: Vec<_> = gt_coords
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| gt(x, y, &format!("g{i}")))
                .collect();
            let dets: Vec<_> = det_coords.iter().map(|&(x, y)| det(x, y)).collect();
            let report = match_census(&gts, &dets, radius(r)).unwrap();
            prop_assert_eq!(report.true_positives() + report.false_negatives(), gts.len() as u64);
            prop_assert_eq!(report.true_positives() + report.false_positives(), dets.len() as u64);
            prop_assert!(report.true_positives() <= gts.len() as u64);
        }
    }
}
