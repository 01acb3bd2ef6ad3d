//! Radar point-matching front-end shared by both estimation back-ends.
//!
//! A previous scan (or the latest observations of the live trails) is aligned
//! into the current radar frame using the pose estimates, a Euclidean cost
//! matrix is solved as a linear sum assignment, assignments are gated through
//! a score matrix, and the remainder is resolved greedily using anchor-sum
//! distances that compare the relative arrangement of points across the scans.

pub mod frontend;
pub mod lsa;
pub mod trails;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::models::relative_radar_pose;
use crate::types::RadarScan;
use trails::TrailSet;

/// Gates applied when converting assignment costs into match scores.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchGates {
    /// Pairs farther apart than this after alignment are rejected [m].
    pub max_distance: f64,
    /// Current-point intensity below this rejects the pair.
    pub min_intensity: f64,
}

impl Default for MatchGates {
    fn default() -> Self {
        MatchGates {
            max_distance: 1.0,
            min_intensity: 0.0,
        }
    }
}

/// One accepted correspondence between a current point and a previous point
/// (or trail), with the cost/score it was accepted at.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatchPair {
    pub curr: usize,
    pub prev: usize,
    pub cost: f64,
    pub score: f64,
}

/// The one-to-one result of matching a scan against a previous point set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("trail references scan {0} with no available pose (stale reference)")]
    StaleScanReference(u64),
}

/// Euclidean cost matrix: rows are current points, columns previous points
/// already aligned into the current radar frame.
pub fn cost_matrix(curr: &[Vector3<f64>], prev_aligned: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(curr.len(), prev_aligned.len(), |i, j| {
        (curr[i] - prev_aligned[j]).norm()
    })
}

/// Score matrix `s = 1 / (1 + C)`, gated to zero where the pair fails the
/// distance or intensity gates.
pub fn score_matrix(
    cost: &DMatrix<f64>,
    curr_intensity: &[f64],
    gates: &MatchGates,
) -> DMatrix<f64> {
    DMatrix::from_fn(cost.nrows(), cost.ncols(), |i, j| {
        let c = cost[(i, j)];
        if c > gates.max_distance || curr_intensity[i] < gates.min_intensity {
            0.0
        } else {
            1.0 / (1.0 + c)
        }
    })
}

/// Maps the points of a past scan into the current radar frame using the body
/// poses at both times and the radar extrinsics.
pub fn align_points(
    points: &[Vector3<f64>],
    past_pose: &Pose,
    current_pose: &Pose,
    extrinsics: &Pose,
) -> Vec<Vector3<f64>> {
    let rel = relative_radar_pose(past_pose, current_pose, extrinsics);
    points.iter().map(|p| rel.transform(p)).collect()
}

/// Matches two point sets already expressed in the current radar frame:
/// assignment on the cost matrix, score gating, then greedy refinement of the
/// leftovers by anchor-sum distance.
pub fn match_point_sets(
    curr: &[Vector3<f64>],
    curr_intensity: &[f64],
    prev_aligned: &[Vector3<f64>],
    gates: &MatchGates,
) -> MatchSet {
    let cost = cost_matrix(curr, prev_aligned);
    let score = score_matrix(&cost, curr_intensity, gates);
    let proposals = lsa::lsa_solve(&cost);

    // Accept assignment pairs that survive the gates, best score first.
    let mut accepted: Vec<MatchPair> = proposals
        .iter()
        .filter(|&&(i, j)| score[(i, j)] > 0.0)
        .map(|&(i, j)| MatchPair {
            curr: i,
            prev: j,
            cost: cost[(i, j)],
            score: score[(i, j)],
        })
        .collect();
    accepted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.curr.cmp(&b.curr)));

    let mut curr_used = vec![false; curr.len()];
    let mut prev_used = vec![false; prev_aligned.len()];
    for p in &accepted {
        curr_used[p.curr] = true;
        prev_used[p.prev] = true;
    }

    // Remaining previous points may still have gated candidates among the
    // unmatched current points; resolve them greedily, best candidates first,
    // disambiguating by how well the pair preserves distances to the anchor
    // set accepted so far.
    let mut leftovers: Vec<(usize, f64)> = (0..prev_aligned.len())
        .filter(|&j| !prev_used[j])
        .filter_map(|j| {
            let best = (0..curr.len())
                .filter(|&i| !curr_used[i] && score[(i, j)] > 0.0)
                .map(|i| score[(i, j)])
                .fold(0.0f64, f64::max);
            (best > 0.0).then_some((j, best))
        })
        .collect();
    leftovers.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    for (j, _) in leftovers {
        let candidates: Vec<usize> = (0..curr.len())
            .filter(|&i| !curr_used[i] && score[(i, j)] > 0.0)
            .collect();
        let pick = match candidates.len() {
            0 => continue,
            1 => candidates[0],
            _ => {
                let anchor_sum = |i: usize, j: usize| -> f64 {
                    let cs: f64 = accepted
                        .iter()
                        .map(|a| (curr[i] - curr[a.curr]).norm())
                        .sum();
                    let ps: f64 = accepted
                        .iter()
                        .map(|a| (prev_aligned[j] - prev_aligned[a.prev]).norm())
                        .sum();
                    (cs - ps).abs()
                };
                *candidates
                    .iter()
                    .min_by(|&&a, &&b| {
                        anchor_sum(a, j)
                            .total_cmp(&anchor_sum(b, j))
                            .then(cost[(a, j)].total_cmp(&cost[(b, j)]))
                            .then(a.cmp(&b))
                    })
                    .unwrap()
            }
        };
        curr_used[pick] = true;
        prev_used[j] = true;
        accepted.push(MatchPair {
            curr: pick,
            prev: j,
            cost: cost[(pick, j)],
            score: score[(pick, j)],
        });
    }

    accepted.sort_by_key(|p| p.curr);
    MatchSet { pairs: accepted }
}

/// Matches the current scan against the live trails. Each trail contributes
/// its latest observation, aligned from the scan it was taken at into the
/// current frame using the pose estimates supplied by the back-end.
pub fn match_scan_to_trails(
    scan: &RadarScan,
    trail_set: &TrailSet,
    pose_for_scan: &dyn Fn(u64) -> Option<Pose>,
    current_pose: &Pose,
    extrinsics: &Pose,
    gates: &MatchGates,
) -> Result<MatchSet, MatchError> {
    let mut rel_cache: BTreeMap<u64, Pose> = BTreeMap::new();
    let mut prev_aligned = Vec::with_capacity(trail_set.trails.len());
    for trail in &trail_set.trails {
        let obs = trail.latest();
        let rel = match rel_cache.get(&obs.scan_index) {
            Some(r) => *r,
            None => {
                let past = pose_for_scan(obs.scan_index)
                    .ok_or(MatchError::StaleScanReference(obs.scan_index))?;
                let r = relative_radar_pose(&past, current_pose, extrinsics);
                rel_cache.insert(obs.scan_index, r);
                r
            }
        };
        prev_aligned.push(rel.transform(&obs.point));
    }
    let curr: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.position).collect();
    let intensity: Vec<f64> = scan.points.iter().map(|p| p.intensity).collect();
    Ok(match_point_sets(&curr, &intensity, &prev_aligned, gates))
}

/// Ground-truth correspondences between two scans given the true relative
/// transform mapping previous-scan coordinates into the current frame:
/// assignment on `‖p_i − (R p_j + t)‖` gated by a distance threshold.
pub fn gt_correspondences(
    curr: &[Vector3<f64>],
    prev: &[Vector3<f64>],
    rel: &Pose,
    max_distance: f64,
) -> Vec<(usize, usize)> {
    let mapped: Vec<Vector3<f64>> = prev.iter().map(|p| rel.transform(p)).collect();
    let cost = cost_matrix(curr, &mapped);
    lsa::lsa_solve(&cost)
        .into_iter()
        .filter(|&(i, j)| cost[(i, j)] <= max_distance)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;

    #[test]
    fn perfect_alignment_matches_everything() {
        let prev = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 1.0, 0.0),
            Vector3::new(3.0, -1.0, 0.5),
        ];
        let ms = match_point_sets(&prev, &[1.0, 1.0, 1.0], &prev, &MatchGates::default());
        assert_eq!(ms.len(), 3);
        for p in &ms.pairs {
            assert_eq!(p.curr, p.prev);
            assert!(p.cost < 1e-12);
            assert!((p.score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_gate_rejects_far_pairs() {
        let prev = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(5.0, 0.0, 0.0)];
        let curr = vec![Vector3::new(0.1, 0.0, 0.0), Vector3::new(8.0, 0.0, 0.0)];
        let ms = match_point_sets(&curr, &[1.0, 1.0], &prev, &MatchGates::default());
        assert_eq!(ms.len(), 1);
        assert_eq!(ms.pairs[0].curr, 0);
        assert_eq!(ms.pairs[0].prev, 0);
    }

    #[test]
    fn intensity_gate_rejects_weak_current_points() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)];
        let gates = MatchGates {
            max_distance: 1.0,
            min_intensity: 0.5,
        };
        let ms = match_point_sets(&pts, &[0.1, 0.9], &pts, &gates);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms.pairs[0].curr, 1);
    }

    #[test]
    fn anchor_distance_breaks_cost_tie() {
        // One anchor pair far out on +x. Two current points sit symmetric
        // about a previous point (equal cost); the anchor-sum distance picks
        // the one whose distance to the anchor matches the previous geometry.
        let prev = vec![Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.0)];
        let curr = vec![
            Vector3::new(10.0, 0.0, 0.0),  // anchor (exact)
            Vector3::new(0.5, 0.0, 0.0),   // closer to the anchor
            Vector3::new(-0.5, 0.0, 0.0),  // farther from the anchor
        ];
        let ms = match_point_sets(&curr, &[1.0; 3], &prev, &MatchGates::default());
        // Anchor matches exactly; prev[1] has two equal-cost candidates.
        // |d(curr, anchor) − d(prev, prev_anchor)|: candidate 1 → |9.5−10|=0.5,
        // candidate 2 → |10.5−10|=0.5 — tie in anchor distance too, broken by
        // cost (also tied) then lower index → candidate 1.
        // Shift prev[1] so the anchor distance disambiguates.
        let prev2 = vec![Vector3::new(10.0, 0.0, 0.0), Vector3::new(-0.4, 0.0, 0.0)];
        let ms2 = match_point_sets(&curr, &[1.0; 3], &prev2, &MatchGates::default());
        let pair = ms2.pairs.iter().find(|p| p.prev == 1).unwrap();
        // prev distance to anchor = 10.4; curr candidates: 9.5 (i=1) vs 10.5
        // (i=2) → |9.5−10.4| = 0.9 vs |10.5−10.4| = 0.1 → picks i=2.
        assert_eq!(pair.curr, 2);
        assert_eq!(ms.pairs.iter().find(|p| p.prev == 1).unwrap().curr, 1);
    }

    #[test]
    fn single_candidate_accepted_unchanged() {
        // LSA proposes the cross pairing (cheaper in total), but gating kills
        // the long edge; refinement then matches the short leftover edge.
        let prev = vec![Vector3::new(0.0, 0.0, 0.0)];
        let curr = vec![Vector3::new(0.9, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)];
        let ms = match_point_sets(&curr, &[1.0, 1.0], &prev, &MatchGates::default());
        assert_eq!(ms.len(), 1);
        assert_eq!(ms.pairs[0].curr, 0);
    }

    #[test]
    fn gt_correspondences_recover_known_transform() {
        let rel = Pose::new(Rotation::rot_z(0.3), Vector3::new(0.2, -0.1, 0.0));
        let prev = vec![
            Vector3::new(1.0, 2.0, 0.0),
            Vector3::new(4.0, -1.0, 1.0),
            Vector3::new(2.0, 2.0, -1.0),
        ];
        let curr: Vec<Vector3<f64>> = prev.iter().map(|p| rel.transform(p)).collect();
        let pairs = gt_correspondences(&curr, &prev, &rel, 0.5);
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // An outlier previous point with no counterpart stays unmatched.
        let mut prev_plus = prev.clone();
        prev_plus.push(Vector3::new(9.0, 9.0, 9.0));
        let pairs2 = gt_correspondences(&curr, &prev_plus, &rel, 0.5);
        assert_eq!(pairs2, vec![(0, 0), (1, 1), (2, 2)]);
    }
}
