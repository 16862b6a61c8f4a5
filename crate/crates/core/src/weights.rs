//! Edge weights between graph nodes (detections and tracks).
//!
//! A weight mixes a rescaled appearance similarity with a positional
//! similarity. Pairs that share same-camera same-frame evidence, or that are
//! too far apart on the ground, are infeasible and receive the penalty `rho`.

use crate::config::TrackerConfig;
use crate::geometry::GroundPoint;
use crate::model::{cosine, Evidence, SuperBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeWeight {
    pub value: f64,
    pub infeasible: bool,
}

/// Read-only view of a node for weight computation.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    /// Filled superbox (a single-slot detection or a track aggregate).
    pub rep: &'a SuperBox,
    /// Ground position used for distances (motion-predicted for tracks).
    pub bev: GroundPoint,
    pub evidence: &'a Evidence,
    /// Frames lost, for lost tracks.
    pub lost_for: Option<u32>,
}

/// Mean per-camera cosine, mapped piecewise-linearly so that `theta` goes to
/// 0, 1 stays 1 and -1 stays -1.
pub fn scaled_feature_similarity(a: &SuperBox, b: &SuperBox, theta_feat: f64) -> f64 {
    let m = a.num_cameras();
    debug_assert_eq!(m, b.num_cameras());
    if m == 0 {
        return 0.0;
    }
    let raw = (0..m).map(|i| cosine(a.feat_row(i), b.feat_row(i))).sum::<f64>() / m as f64;
    rescale_similarity(raw, theta_feat)
}

pub fn rescale_similarity(raw: f64, theta: f64) -> f64 {
    let raw = raw.clamp(-1.0, 1.0);
    if raw >= theta {
        (raw - theta) / (1.0 - theta)
    } else {
        (raw - theta) / (1.0 + theta)
    }
}

/// `1 - dist / theta_pos`, clamped below at -1.
pub fn positional_similarity(p: &GroundPoint, q: &GroundPoint, theta_pos: f64) -> f64 {
    (1.0 - p.distance(q) / theta_pos).max(-1.0)
}

pub fn combine(feat_sim: f64, pos_sim: f64, lambda: f64) -> f64 {
    lambda * feat_sim + (1.0 - lambda) * pos_sim
}

/// Geometric down-weighting of a lost track's appearance similarity.
pub fn decay_similarity(raw_sim: f64, lost_for: u32, beta: f64) -> f64 {
    beta.powi(lost_for as i32) * raw_sim
}

/// Same-camera same-frame co-occurrence, or a ground distance beyond the
/// gate when neither node is lost.
pub fn mark_infeasible(a: &NodeView<'_>, b: &NodeView<'_>, config: &TrackerConfig) -> bool {
    if shares_evidence(a.evidence, b.evidence) {
        return true;
    }
    a.lost_for.is_none() && b.lost_for.is_none() && a.bev.distance(&b.bev) > config.delta_pos()
}

fn shares_evidence(a: &Evidence, b: &Evidence) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|e| large.contains(e))
}

/// Combined similarity before bias and penalties, with decay applied to the
/// appearance term of every lost endpoint.
pub fn base_weight(a: &NodeView<'_>, b: &NodeView<'_>, config: &TrackerConfig) -> f64 {
    let mut feat = scaled_feature_similarity(a.rep, b.rep, config.theta_feat);
    if config.enable_decay && (a.lost_for.is_some() || b.lost_for.is_some()) {
        // one power of the summed exponent keeps the pair order irrelevant
        let frames = a.lost_for.unwrap_or(0) + b.lost_for.unwrap_or(0);
        feat = decay_similarity(feat, frames, config.beta_decay);
    }
    let involves_lost = a.lost_for.is_some() || b.lost_for.is_some();
    let pos = if involves_lost && !config.lost_position_term {
        0.0
    } else {
        positional_similarity(&a.bev, &b.bev, config.theta_pos)
    };
    combine(feat, pos, config.lambda)
}

pub fn finalize_weight(value: f64, infeasible: bool, config: &TrackerConfig) -> EdgeWeight {
    EdgeWeight {
        value: if infeasible { config.rho } else { value },
        infeasible,
    }
}

/// Full pipeline for one unordered pair, without pre-matching adjustments.
pub fn edge_weight(a: &NodeView<'_>, b: &NodeView<'_>, config: &TrackerConfig) -> EdgeWeight {
    let infeasible = mark_infeasible(a, b, config);
    finalize_weight(base_weight(a, b, config), infeasible, config)
}
