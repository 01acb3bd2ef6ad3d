//! Trails: per-point match histories used to decide which detections are
//! stable enough to become persistent landmarks.
//!
//! A trail records where a point was seen across consecutive scans, keyed by
//! scan index so the back-ends can look up the pose the observation was taken
//! at (EKF clone or factor-graph window state). A trail that misses a scan is
//! dropped; one that survives the promotion threshold is handed back to the
//! caller as a landmark candidate.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::types::RadarScan;

/// One observation in a trail's history.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrailObs {
    /// Scan index the observation was taken at.
    pub scan_index: u64,
    /// Detection position in that scan's radar frame.
    pub point: Vector3<f64>,
    pub intensity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trail {
    pub id: u64,
    /// Observations ordered by scan index, capped at the trail length.
    pub history: VecDeque<TrailObs>,
    /// Number of consecutive scans this trail has been observed in.
    pub consecutive: u32,
}

impl Trail {
    pub fn latest(&self) -> &TrailObs {
        self.history.back().expect("trail history is never empty")
    }

    fn check_invariants(&self, max_len: usize) {
        debug_assert!(!self.history.is_empty());
        debug_assert!(self.history.len() <= max_len);
        debug_assert!(self
            .history
            .iter()
            .zip(self.history.iter().skip(1))
            .all(|(a, b)| a.scan_index < b.scan_index));
    }
}

/// Result of folding one scan's matches into the trail set.
#[derive(Clone, Debug, Default)]
pub struct TrailUpdate {
    /// Trails that reached the promotion threshold this scan, removed from
    /// the live set; their history includes the current observation.
    pub promotions: Vec<Trail>,
    /// Ids of trails dropped because they went unmatched.
    pub removed: Vec<u64>,
    /// Ids of trails newly created from unmatched detections.
    pub created: Vec<u64>,
}

/// The live set of trails.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrailSet {
    pub trails: Vec<Trail>,
    next_id: u64,
    /// History cap and promotion threshold (the clone-buffer length N).
    pub max_len: usize,
}

impl TrailSet {
    pub fn new(max_len: usize) -> Self {
        assert!(max_len >= 1);
        TrailSet {
            trails: Vec::new(),
            next_id: 0,
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.trails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trails.is_empty()
    }

    /// Scan indices currently referenced by any history entry.
    pub fn referenced_scans(&self) -> BTreeSet<u64> {
        self.trails
            .iter()
            .flat_map(|t| t.history.iter().map(|o| o.scan_index))
            .collect()
    }

    /// Drops history entries referencing an evicted scan. Entries are ordered,
    /// so only the front of each history can be affected.
    pub fn evict_scan(&mut self, scan_index: u64) {
        for trail in &mut self.trails {
            while trail
                .history
                .front()
                .is_some_and(|o| o.scan_index <= scan_index)
            {
                trail.history.pop_front();
            }
        }
        // A trail whose entire history referenced evicted scans is gone.
        self.trails.retain(|t| !t.history.is_empty());
    }

    /// Folds one scan into the set: matched trails are extended (and promoted
    /// once they hit the threshold), unmatched trails are dropped, and
    /// detections that matched nothing — and are not in `excluded_points`
    /// (e.g. landmark-matched ones) — seed new trails.
    ///
    /// `matches` pairs `(current point index, trail index)`.
    pub fn apply_scan(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        matches: &[(usize, usize)],
        excluded_points: &BTreeSet<usize>,
    ) -> TrailUpdate {
        let mut update = TrailUpdate::default();
        let mut matched_point_of_trail = vec![None; self.trails.len()];
        let mut point_taken = vec![false; scan.points.len()];
        for &(pi, ti) in matches {
            matched_point_of_trail[ti] = Some(pi);
            point_taken[pi] = true;
        }

        let mut survivors = Vec::with_capacity(self.trails.len());
        for (ti, mut trail) in std::mem::take(&mut self.trails).into_iter().enumerate() {
            match matched_point_of_trail[ti] {
                Some(pi) => {
                    trail.history.push_back(TrailObs {
                        scan_index,
                        point: scan.points[pi].position,
                        intensity: scan.points[pi].intensity,
                    });
                    if trail.history.len() > self.max_len {
                        trail.history.pop_front();
                    }
                    trail.consecutive += 1;
                    trail.check_invariants(self.max_len);
                    if trail.consecutive as usize >= self.max_len {
                        update.promotions.push(trail);
                    } else {
                        survivors.push(trail);
                    }
                }
                None => update.removed.push(trail.id),
            }
        }

        for (pi, point) in scan.points.iter().enumerate() {
            if point_taken[pi] || excluded_points.contains(&pi) {
                continue;
            }
            let trail = Trail {
                id: self.next_id,
                history: VecDeque::from([TrailObs {
                    scan_index,
                    point: point.position,
                    intensity: point.intensity,
                }]),
                consecutive: 1,
            };
            self.next_id += 1;
            update.created.push(trail.id);
            survivors.push(trail);
        }

        self.trails = survivors;
        update
    }
}
