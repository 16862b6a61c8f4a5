//! The online per-frame engine.
//!
//! Each [`Tracker::step`] builds one graph over all live tracks and the
//! frame's detections, solves a multicut, turns clusters into identity
//! decisions, advances track lifecycles and motion-projects the survivors.
//!
//! Distances between tracks and detections use the track aggregate after
//! motion projection, i.e. the positional threshold is applied to predicted
//! positions.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rayon::prelude::*;
use thiserror::Error;

use crate::assign::prematch_bias;
use crate::config::TrackerConfig;
use crate::geometry::{BBox, GroundPoint};
use crate::model::{next_unmatched_state, Detection, Evidence, ModelError, SuperBox, Track, TrackState};
use crate::multicut::{clusters_of, solve_heuristic, MulticutError, Partition, WeightedGraph};
use crate::weights::{base_weight, finalize_weight, mark_infeasible, NodeView};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame mismatch: tracker expects frame {expected}, got {got}")]
    FrameMismatch { expected: i64, got: i64 },
    #[error("detection for camera {camera} but only {num_cameras} cameras are configured")]
    CameraOutOfRange { camera: usize, num_cameras: usize },
    #[error("non-finite edge weight between nodes {0} and {1}")]
    NonFiniteWeight(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multicut(#[from] MulticutError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraBox {
    pub camera: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Where one identity was observed in this frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityOutput {
    pub identity: u64,
    /// Mean ground position of this frame's detections.
    pub bev: GroundPoint,
    pub boxes: Vec<CameraBox>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameResult {
    pub frame: i64,
    /// Identity per input detection; `None` for detections below `min_confidence`.
    pub assignments: Vec<Option<u64>>,
    pub born: Vec<u64>,
    pub updated: Vec<u64>,
    pub deactivated: Vec<u64>,
    pub lost: Vec<u64>,
    pub killed: Vec<u64>,
    /// `(retired, pivot)` pairs.
    pub merged: Vec<(u64, u64)>,
    /// Sorted by identity.
    pub outputs: Vec<IdentityOutput>,
}

/// Graph weights of one frame, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct FrameGraph {
    /// Track identities, in node order; detection nodes follow them.
    pub track_ids: Vec<u64>,
    /// Indices into the step's detection slice.
    pub detection_idx: Vec<usize>,
    pub graph: WeightedGraph,
    pub infeasible: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    num_cameras: usize,
    tracks: BTreeMap<u64, Track>,
    next_identity: u64,
    frame: Option<i64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig, num_cameras: usize) -> Self {
        Tracker {
            config,
            num_cameras,
            tracks: BTreeMap::new(),
            next_identity: 1,
            frame: None,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    /// Frame the next call to [`Tracker::step`] must carry.
    pub fn frame(&self) -> Option<i64> {
        self.frame
    }

    pub fn tracks(&self) -> &BTreeMap<u64, Track> {
        &self.tracks
    }

    fn validate(&self, frame: i64, detections: &[Detection]) -> Result<(), TrackerError> {
        if let Some(expected) = self.frame {
            if frame != expected {
                return Err(TrackerError::FrameMismatch { expected, got: frame });
            }
        }
        for d in detections {
            if d.frame != frame {
                return Err(TrackerError::FrameMismatch {
                    expected: frame,
                    got: d.frame,
                });
            }
            if d.camera >= self.num_cameras {
                return Err(TrackerError::CameraOutOfRange {
                    camera: d.camera,
                    num_cameras: self.num_cameras,
                });
            }
        }
        Ok(())
    }

    /// Assemble the weighted graph for this frame without mutating state.
    pub fn build_graph(&self, frame: i64, detections: &[Detection]) -> Result<FrameGraph, TrackerError> {
        self.validate(frame, detections)?;
        let cfg = &self.config;
        let detection_idx: Vec<usize> = detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.confidence >= cfg.min_confidence)
            .map(|(i, _)| i)
            .collect();
        let track_ids: Vec<u64> = self.tracks.keys().copied().collect();

        let det_reps: Vec<SuperBox> = detection_idx
            .iter()
            .map(|&i| SuperBox::single(self.num_cameras, &detections[i]).fill_missing())
            .collect();
        let det_evidence: Vec<Evidence> = detection_idx
            .iter()
            .map(|&i| Evidence::from([(frame, detections[i].camera)]))
            .collect();

        let mut views: Vec<NodeView<'_>> = Vec::with_capacity(track_ids.len() + detection_idx.len());
        for t in self.tracks.values() {
            views.push(NodeView {
                rep: &t.rep,
                bev: t.rep.centroid(),
                evidence: &t.evidence,
                lost_for: t.lost_for(),
            });
        }
        for (k, &i) in detection_idx.iter().enumerate() {
            views.push(NodeView {
                rep: &det_reps[k],
                bev: detections[i].pos_bev,
                evidence: &det_evidence[k],
                lost_for: None,
            });
        }
        let n = views.len();
        let num_tracks = track_ids.len();

        // each unordered pair is evaluated once
        let rows: Vec<Vec<(usize, f64, bool)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| {
                        let w = base_weight(&views[i], &views[j], cfg);
                        let inf = mark_infeasible(&views[i], &views[j], cfg);
                        (j, w, inf)
                    })
                    .collect()
            })
            .collect();

        let track_boxes: Vec<Vec<Option<BBox>>> =
            self.tracks.values().map(|t| t.rep.pos_2d.clone()).collect();
        let det_boxes: Vec<(usize, BBox)> = detection_idx
            .iter()
            .map(|&i| (detections[i].camera, detections[i].bbox))
            .collect();
        let pre = prematch_bias(&track_boxes, &det_boxes, self.num_cameras, cfg);

        let mut edges = Vec::new();
        let mut infeasible = BTreeSet::new();
        for (i, row) in rows.into_iter().enumerate() {
            for (j, mut w, inf) in row {
                if i < num_tracks && j >= num_tracks {
                    let key = (i, j - num_tracks);
                    if pre.bonus.contains(&key) {
                        w += cfg.iou_bias;
                    } else if pre.pruned.contains(&key) {
                        w = 0.0;
                    }
                }
                let e = finalize_weight(w, inf, cfg);
                if !e.value.is_finite() {
                    return Err(TrackerError::NonFiniteWeight(i, j));
                }
                if e.infeasible {
                    infeasible.insert((i, j));
                }
                if e.value != 0.0 {
                    edges.push((i, j, e.value));
                }
            }
        }
        let graph = WeightedGraph::new(n, edges)?;
        Ok(FrameGraph {
            track_ids,
            detection_idx,
            graph,
            infeasible,
        })
    }

    /// Process all detections of one frame.
    pub fn step(&mut self, frame: i64, detections: &[Detection]) -> Result<FrameResult, TrackerError> {
        let fg = self.build_graph(frame, detections)?;
        let partition = solve_heuristic(&fg.graph);
        self.apply(frame, detections, &fg, &partition)
    }

    /// Turn a partition of this frame's graph into identity decisions and
    /// advance the tracker to the next frame.
    pub fn apply(
        &mut self,
        frame: i64,
        detections: &[Detection],
        fg: &FrameGraph,
        partition: &Partition,
    ) -> Result<FrameResult, TrackerError> {
        let num_tracks = fg.track_ids.len();
        let gamma = self.config.ema_gamma;
        let mut result = FrameResult {
            frame,
            assignments: vec![None; detections.len()],
            ..FrameResult::default()
        };
        let mut matched: BTreeSet<u64> = BTreeSet::new();
        let mut retired: BTreeSet<u64> = BTreeSet::new();

        for cluster in clusters_of(partition) {
            for group in split_infeasible(&cluster, &fg.infeasible) {
                let tracks: Vec<u64> = group
                    .iter()
                    .filter(|&&v| v < num_tracks)
                    .map(|&v| fg.track_ids[v])
                    .collect();
                let det_ids: Vec<usize> = group
                    .iter()
                    .filter(|&&v| v >= num_tracks)
                    .map(|&v| fg.detection_idx[v - num_tracks])
                    .collect();
                let dets: Vec<&Detection> = det_ids.iter().map(|&i| &detections[i]).collect();

                let identity = if tracks.is_empty() {
                    let id = self.next_identity;
                    self.next_identity += 1;
                    let track = Track::birth(id, &dets, self.num_cameras)?;
                    self.tracks.insert(id, track);
                    matched.insert(id);
                    result.born.push(id);
                    id
                } else {
                    let pivot = *tracks
                        .iter()
                        .max_by_key(|id| (self.tracks[id].last_seen, std::cmp::Reverse(**id)))
                        .expect("non-empty");
                    for &other in tracks.iter().filter(|&&t| t != pivot) {
                        let absorbed = self.tracks.remove(&other).expect("live track");
                        self.tracks
                            .get_mut(&pivot)
                            .expect("live track")
                            .absorb_track(&absorbed);
                        retired.insert(other);
                        result.merged.push((other, pivot));
                    }
                    if dets.is_empty() {
                        continue;
                    }
                    self.tracks
                        .get_mut(&pivot)
                        .expect("live track")
                        .absorb_detections(&dets, gamma)?;
                    matched.insert(pivot);
                    result.updated.push(pivot);
                    pivot
                };

                for &i in &det_ids {
                    result.assignments[i] = Some(identity);
                }
                let bev = GroundPoint::mean(dets.iter().map(|d| &d.pos_bev)).unwrap_or_default();
                let mut boxes: Vec<CameraBox> = dets
                    .iter()
                    .map(|d| CameraBox {
                        camera: d.camera,
                        bbox: d.bbox,
                        confidence: d.confidence,
                    })
                    .collect();
                boxes.sort_by_key(|b| b.camera);
                result.outputs.push(IdentityOutput { identity, bev, boxes });
            }
        }

        self.update_lifecycle(&matched, &mut result);

        let window = i64::from(self.config.memory) + i64::from(self.config.patience) + 1;
        for t in self.tracks.values_mut() {
            t.prune_evidence(frame, window);
            t.project_forward();
        }
        result.outputs.sort_by_key(|o| o.identity);
        result.born.sort_unstable();
        result.updated.sort_unstable();
        self.frame = Some(frame + 1);
        Ok(result)
    }

    fn update_lifecycle(&mut self, matched: &BTreeSet<u64>, result: &mut FrameResult) {
        let (patience, memory) = (self.config.patience, self.config.memory);
        let mut dead = Vec::new();
        for (&id, t) in self.tracks.iter_mut() {
            if matched.contains(&id) {
                t.state = TrackState::Active;
                continue;
            }
            let before = t.state;
            match next_unmatched_state(before, patience, memory) {
                None => dead.push(id),
                Some(next) => {
                    if before == TrackState::Active {
                        result.deactivated.push(id);
                    }
                    if matches!(next, TrackState::Lost(1)) {
                        result.lost.push(id);
                    }
                    t.state = next;
                }
            }
        }
        for id in dead {
            self.tracks.remove(&id);
            result.killed.push(id);
        }
    }
}

/// Split a solver cluster so that no group contains an infeasible pair.
/// Nodes are admitted greedily in index order into the first compatible
/// group. A no-op whenever the penalty dominates, which is the normal case.
fn split_infeasible(cluster: &[usize], infeasible: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &v in cluster {
        let slot = groups.iter().position(|g| {
            g.iter()
                .all(|&u| !infeasible.contains(&(u.min(v), u.max(v))))
        });
        match slot {
            Some(k) => groups[k].push(v),
            None => groups.push(vec![v]),
        }
    }
    if groups.len() > 1 {
        debug!("split a cluster of {} nodes into {} feasible groups", cluster.len(), groups.len());
    }
    groups
}
