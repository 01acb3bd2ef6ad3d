//! Shared data-association front-end.
//!
//! Both estimation back-ends drive this component with their own pose
//! estimates and landmark predictions; every association decision (trail
//! matches, landmark matches, trail creation/removal/promotion, landmark
//! removal) is taken here and recorded as a pure index/id log so two runs can
//! be compared decision-for-decision.
//!
//! Per scan the order is: scan-to-trail matching over the full scan, then
//! scan-to-landmark matching over the points the trails did not take, then
//! trail maintenance (extend / create / remove / promote). Points matched to
//! a landmark never seed new trails.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::types::RadarScan;

use super::trails::{TrailObs, TrailSet};
use super::{match_point_sets, match_scan_to_trails, MatchError, MatchGates};

/// Front-end configuration shared verbatim by both back-ends.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontEndConfig {
    /// Gates for scan-to-trail matching.
    pub trail_gates: MatchGates,
    /// Gates for scan-to-landmark matching.
    pub landmark_gates: MatchGates,
    /// Trail history cap; a trail observed this many consecutive scans is
    /// promoted to a persistent landmark.
    pub trail_len: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            trail_gates: MatchGates::default(),
            landmark_gates: MatchGates::default(),
            trail_len: 7,
        }
    }
}

/// Index/id record of every association decision taken at one scan. Two runs
/// took identical decisions up to some scan iff these records are equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanDecisions {
    pub scan_index: u64,
    /// `(current point index, trail id)`, sorted by point index.
    pub trail_matches: Vec<(usize, u64)>,
    /// `(current point index, landmark id)`, sorted by point index.
    pub landmark_matches: Vec<(usize, u64)>,
    /// Trails newly seeded from unclaimed detections.
    pub created_trails: Vec<u64>,
    /// Trails dropped because they went unmatched.
    pub removed_trails: Vec<u64>,
    /// Trails promoted to landmarks this scan (the landmark takes the
    /// trail's id).
    pub promoted_trails: Vec<u64>,
    /// Landmarks offered for matching but left unmatched; the back-end must
    /// remove them from its state.
    pub removed_landmarks: Vec<u64>,
}

/// A matched trail handed to the back-end: the history snapshot *before* the
/// current observation was appended, plus the matched current point.
#[derive(Clone, Debug)]
pub struct TrailMatch {
    pub trail_id: u64,
    /// Index of the matched point in the current scan.
    pub point_index: usize,
    /// Past observations, oldest first; never empty.
    pub history: Vec<TrailObs>,
}

/// A trail that reached the promotion threshold this scan; the back-end
/// initializes a persistent landmark (id = trail id) from the current
/// observation.
#[derive(Clone, Debug)]
pub struct Promotion {
    pub trail_id: u64,
    /// Index of the current point the landmark is initialized from.
    pub point_index: usize,
    /// Full history including the current observation.
    pub history: Vec<TrailObs>,
}

/// Everything a back-end needs from one scan's association pass.
#[derive(Clone, Debug, Default)]
pub struct ScanAssociation {
    pub decisions: ScanDecisions,
    pub trail_matches: Vec<TrailMatch>,
    /// `(landmark id, current point index)`, sorted by point index.
    pub landmark_matches: Vec<(u64, usize)>,
    pub promotions: Vec<Promotion>,
    /// Landmarks offered but unmatched, in the order they were offered.
    pub unmatched_landmarks: Vec<u64>,
}

/// The stateful front-end: owns the trail set; both back-ends construct one
/// with the same configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrontEnd {
    pub cfg: FrontEndConfig,
    trails: TrailSet,
}

impl FrontEnd {
    pub fn new(cfg: FrontEndConfig) -> Self {
        let trails = TrailSet::new(cfg.trail_len);
        FrontEnd { cfg, trails }
    }

    /// Drops trail history entries referencing `scan_index`; call when the
    /// back-end discards its pose estimate for that scan so trails never
    /// point at poses that no longer exist.
    pub fn evict_scan(&mut self, scan_index: u64) {
        self.trails.evict_scan(scan_index);
    }

    pub fn trails(&self) -> &TrailSet {
        &self.trails
    }

    /// Runs one scan through association and trail maintenance.
    ///
    /// `landmark_predictions` carries `(id, predicted position in the current
    /// radar frame)` for every landmark the back-end currently holds;
    /// `pose_for_scan` must resolve every scan index still referenced by a
    /// trail to the back-end's pose estimate for it.
    pub fn process_scan(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        landmark_predictions: &[(u64, Vector3<f64>)],
        pose_for_scan: &dyn Fn(u64) -> Option<Pose>,
        current_pose: &Pose,
        extrinsics: &Pose,
    ) -> Result<ScanAssociation, MatchError> {
        // Scan-to-trail matching over the full scan.
        let trail_set_matches = match_scan_to_trails(
            scan,
            &self.trails,
            pose_for_scan,
            current_pose,
            extrinsics,
            &self.cfg.trail_gates,
        )?;
        let mut trail_matches: Vec<TrailMatch> = trail_set_matches
            .pairs
            .iter()
            .map(|p| TrailMatch {
                trail_id: self.trails.trails[p.prev].id,
                point_index: p.curr,
                history: self.trails.trails[p.prev].history.iter().copied().collect(),
            })
            .collect();
        trail_matches.sort_by_key(|m| m.point_index);

        // Landmark matching over the points the trails did not take.
        let taken: BTreeSet<usize> = trail_matches.iter().map(|m| m.point_index).collect();
        let mut rem_index = Vec::new();
        let mut rem_points = Vec::new();
        let mut rem_intensity = Vec::new();
        for (i, p) in scan.points.iter().enumerate() {
            if !taken.contains(&i) {
                rem_index.push(i);
                rem_points.push(p.position);
                rem_intensity.push(p.intensity);
            }
        }
        let predicted: Vec<Vector3<f64>> =
            landmark_predictions.iter().map(|&(_, p)| p).collect();
        let lm_set = match_point_sets(
            &rem_points,
            &rem_intensity,
            &predicted,
            &self.cfg.landmark_gates,
        );
        let mut landmark_matches: Vec<(u64, usize)> = lm_set
            .pairs
            .iter()
            .map(|p| (landmark_predictions[p.prev].0, rem_index[p.curr]))
            .collect();
        landmark_matches.sort_by_key(|&(_, pi)| pi);
        let matched_ids: BTreeSet<u64> = landmark_matches.iter().map(|&(id, _)| id).collect();
        let unmatched_landmarks: Vec<u64> = landmark_predictions
            .iter()
            .map(|&(id, _)| id)
            .filter(|id| !matched_ids.contains(id))
            .collect();

        // Trail maintenance: landmark-matched points never seed new trails.
        let excluded: BTreeSet<usize> = landmark_matches.iter().map(|&(_, pi)| pi).collect();
        let match_pairs: Vec<(usize, usize)> = trail_set_matches
            .pairs
            .iter()
            .map(|p| (p.curr, p.prev))
            .collect();
        let update = self.trails.apply_scan(scan, scan_index, &match_pairs, &excluded);

        let promotions: Vec<Promotion> = update
            .promotions
            .iter()
            .map(|t| {
                let matched = trail_matches
                    .iter()
                    .find(|m| m.trail_id == t.id)
                    .expect("a promoted trail was matched this scan");
                Promotion {
                    trail_id: t.id,
                    point_index: matched.point_index,
                    history: t.history.iter().copied().collect(),
                }
            })
            .collect();

        let decisions = ScanDecisions {
            scan_index,
            trail_matches: trail_matches
                .iter()
                .map(|m| (m.point_index, m.trail_id))
                .collect(),
            landmark_matches: landmark_matches.iter().map(|&(id, pi)| (pi, id)).collect(),
            created_trails: update.created.clone(),
            removed_trails: update.removed.clone(),
            promoted_trails: promotions.iter().map(|p| p.trail_id).collect(),
            removed_landmarks: unmatched_landmarks.clone(),
        };

        Ok(ScanAssociation {
            decisions,
            trail_matches,
            landmark_matches,
            promotions,
            unmatched_landmarks,
        })
    }
}
