//! Measurements, superboxes and tracks.
//!
//! A [`SuperBox`] holds one optional measurement per camera. Filling replaces
//! the missing appearance and ground-plane rows by the mean of the present
//! ones, so a single-camera detection and a long multi-camera track can be
//! compared slot by slot. A [`Track`] keeps one superbox as its temporal
//! aggregate.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::{BBox, Delta, GroundPoint};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("superbox dimension mismatch: {0}")]
    Dimension(String),
    #[error("superbox has no measurement")]
    Empty,
}

/// One camera-frame observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub camera: usize,
    pub frame: i64,
    pub bbox: BBox,
    pub confidence: f64,
    /// Unit-norm appearance embedding.
    pub feat: Vec<f64>,
    pub pos_bev: GroundPoint,
}

/// `(frame, camera)` pairs at which a node has evidence.
pub type Evidence = BTreeSet<(i64, usize)>;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale to unit length. A zero vector stays zero.
pub fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cross-camera slot array. Before [`SuperBox::fill_missing`] absent slots
/// carry `None`; afterwards every feature and ground row is set, and only
/// `pos_2d` may remain `None` (no same-camera evidence).
#[derive(Debug, Clone, PartialEq)]
pub struct SuperBox {
    pub frame: i64,
    /// Raw evidence mask: `present[m]` iff camera `m` contributed a measurement.
    pub present: Vec<bool>,
    pub feat: Vec<Option<Vec<f64>>>,
    pub pos_bev: Vec<Option<GroundPoint>>,
    pub pos_2d: Vec<Option<BBox>>,
}

impl SuperBox {
    pub fn empty(num_cameras: usize, frame: i64) -> Self {
        SuperBox {
            frame,
            present: vec![false; num_cameras],
            feat: vec![None; num_cameras],
            pos_bev: vec![None; num_cameras],
            pos_2d: vec![None; num_cameras],
        }
    }

    /// Slot-wise placement of same-frame detections from distinct cameras.
    pub fn from_detections<'a, I>(num_cameras: usize, frame: i64, dets: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a Detection>,
    {
        let mut sb = SuperBox::empty(num_cameras, frame);
        for d in dets {
            if d.camera >= num_cameras {
                return Err(ModelError::Dimension(format!(
                    "camera {} out of range for {num_cameras} cameras",
                    d.camera
                )));
            }
            if sb.present[d.camera] {
                return Err(ModelError::Dimension(format!(
                    "two measurements for camera {}",
                    d.camera
                )));
            }
            sb.insert(d);
        }
        if !sb.present.iter().any(|&p| p) {
            return Err(ModelError::Empty);
        }
        Ok(sb)
    }

    pub fn single(num_cameras: usize, det: &Detection) -> Self {
        let mut sb = SuperBox::empty(num_cameras, det.frame);
        sb.insert(det);
        sb
    }

    fn insert(&mut self, d: &Detection) {
        let m = d.camera;
        self.present[m] = true;
        self.feat[m] = Some(d.feat.clone());
        self.pos_bev[m] = Some(d.pos_bev);
        self.pos_2d[m] = Some(d.bbox);
    }

    pub fn num_cameras(&self) -> usize {
        self.present.len()
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.feat.iter().flatten().map(Vec::len).next()
    }

    pub fn is_filled(&self) -> bool {
        self.feat.iter().all(Option::is_some) && self.pos_bev.iter().all(Option::is_some)
    }

    /// Filled appearance row of camera `m`.
    pub fn feat_row(&self, m: usize) -> &[f64] {
        self.feat[m].as_deref().expect("superbox must be filled")
    }

    pub fn bev_row(&self, m: usize) -> GroundPoint {
        self.pos_bev[m].expect("superbox must be filled")
    }

    /// Ground-plane position of the whole superbox: mean over all filled rows.
    pub fn centroid(&self) -> GroundPoint {
        GroundPoint::mean(self.pos_bev.iter().flatten()).unwrap_or_default()
    }

    /// Replace absent appearance rows by the renormalized mean of the present
    /// rows and absent ground rows by the mean present position. Present
    /// rows and 2D boxes are left untouched.
    pub fn fill_missing(&self) -> SuperBox {
        let mut out = self.clone();
        let present_feats: Vec<&Vec<f64>> = self.feat.iter().flatten().collect();
        if let Some(first) = present_feats.first() {
            let mut mean = vec![0.0; first.len()];
            for f in &present_feats {
                for (acc, x) in mean.iter_mut().zip(f.iter()) {
                    *acc += x;
                }
            }
            let k = present_feats.len() as f64;
            mean.iter_mut().for_each(|x| *x /= k);
            normalize(&mut mean);
            for row in out.feat.iter_mut().filter(|r| r.is_none()) {
                *row = Some(mean.clone());
            }
        }
        if let Some(mean) = GroundPoint::mean(self.pos_bev.iter().flatten()) {
            for row in out.pos_bev.iter_mut().filter(|r| r.is_none()) {
                *row = Some(mean);
            }
        }
        out
    }

    /// Per-slot exponential moving average of `self` (old aggregate) and `new`.
    /// Features are renormalized; positions are not. A 2D slot without fresh
    /// evidence keeps the old same-camera box.
    pub fn ema_merge(&self, new: &SuperBox, ema_gamma: f64) -> Result<SuperBox, ModelError> {
        if self.num_cameras() != new.num_cameras() {
            return Err(ModelError::Dimension(format!(
                "{} vs {} cameras",
                self.num_cameras(),
                new.num_cameras()
            )));
        }
        if !self.is_filled() || !new.is_filled() {
            return Err(ModelError::Dimension("ema_merge needs filled superboxes".into()));
        }
        if self.feat_dim() != new.feat_dim() {
            return Err(ModelError::Dimension(format!(
                "feature dimension {:?} vs {:?}",
                self.feat_dim(),
                new.feat_dim()
            )));
        }
        let g = ema_gamma;
        let mut out = SuperBox::empty(self.num_cameras(), new.frame);
        out.present = new.present.clone();
        for m in 0..self.num_cameras() {
            let old_f = self.feat_row(m);
            let new_f = new.feat_row(m);
            let mut f: Vec<f64> = old_f
                .iter()
                .zip(new_f)
                .map(|(a, b)| g * a + (1.0 - g) * b)
                .collect();
            normalize(&mut f);
            out.feat[m] = Some(f);

            let (a, b) = (self.bev_row(m), new.bev_row(m));
            out.pos_bev[m] = Some(GroundPoint::new(
                g * a.x + (1.0 - g) * b.x,
                g * a.y + (1.0 - g) * b.y,
            ));

            out.pos_2d[m] = match (self.pos_2d[m], new.pos_2d[m]) {
                (Some(a), Some(b)) => Some(BBox {
                    l: g * a.l + (1.0 - g) * b.l,
                    t: g * a.t + (1.0 - g) * b.t,
                    w: g * a.w + (1.0 - g) * b.w,
                    h: g * a.h + (1.0 - g) * b.h,
                }),
                (None, b) => b,
                (a, None) => a,
            };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    /// Unmatched for this many consecutive frames, at most `patience`.
    Inactive(u32),
    /// Lost for this many frames, at most `memory`.
    Lost(u32),
}

/// Lifecycle position after one more unmatched frame, or `None` when killed.
pub fn next_unmatched_state(state: TrackState, patience: u32, memory: u32) -> Option<TrackState> {
    let unmatched = match state {
        TrackState::Active => 1,
        TrackState::Inactive(k) => k + 1,
        TrackState::Lost(k) => patience + k + 1,
    };
    if unmatched <= patience {
        Some(TrackState::Inactive(unmatched))
    } else {
        let lost = unmatched - patience;
        (lost <= memory).then_some(TrackState::Lost(lost))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub identity: u64,
    /// Filled temporal aggregate, motion-projected to the next frame.
    pub rep: SuperBox,
    pub velo_bev: Delta,
    pub velo_2d: Vec<Delta>,
    pub state: TrackState,
    pub last_seen: i64,
    pub per_camera_last_seen: Vec<Option<i64>>,
    /// Windowed `(frame, camera)` evidence history.
    pub evidence: Evidence,
    /// Last raw ground observation (centroid of the matched detections).
    pub last_obs_bev: (i64, GroundPoint),
    /// Last raw box per camera.
    pub last_obs_2d: Vec<Option<(i64, BBox)>>,
}

impl Track {
    /// Start a track from a cluster of same-frame detections.
    pub fn birth(identity: u64, detections: &[&Detection], num_cameras: usize) -> Result<Track, ModelError> {
        let frame = detections.first().ok_or(ModelError::Empty)?.frame;
        let sb = SuperBox::from_detections(num_cameras, frame, detections.iter().copied())?;
        let obs = GroundPoint::mean(detections.iter().map(|d| &d.pos_bev)).unwrap_or_default();
        let mut per_camera_last_seen = vec![None; num_cameras];
        let mut last_obs_2d = vec![None; num_cameras];
        let mut evidence = Evidence::new();
        for d in detections {
            per_camera_last_seen[d.camera] = Some(frame);
            last_obs_2d[d.camera] = Some((frame, d.bbox));
            evidence.insert((frame, d.camera));
        }
        Ok(Track {
            identity,
            rep: sb.fill_missing(),
            velo_bev: Delta::ZERO,
            velo_2d: vec![Delta::ZERO; num_cameras],
            state: TrackState::Active,
            last_seen: frame,
            per_camera_last_seen,
            evidence,
            last_obs_bev: (frame, obs),
            last_obs_2d,
        })
    }

    pub fn lost_for(&self) -> Option<u32> {
        match self.state {
            TrackState::Lost(k) => Some(k),
            _ => None,
        }
    }

    /// Fold a cluster of same-frame detections into this track.
    pub fn absorb_detections(&mut self, detections: &[&Detection], ema_gamma: f64) -> Result<(), ModelError> {
        let frame = detections.first().ok_or(ModelError::Empty)?.frame;
        let num_cameras = self.rep.num_cameras();
        let sb = SuperBox::from_detections(num_cameras, frame, detections.iter().copied())?.fill_missing();
        self.rep = self.rep.ema_merge(&sb, ema_gamma)?;

        let obs = GroundPoint::mean(detections.iter().map(|d| &d.pos_bev)).unwrap_or_default();
        let (prev_frame, prev_obs) = self.last_obs_bev;
        if frame > prev_frame {
            let delta = (obs - prev_obs) * (1.0 / (frame - prev_frame) as f64);
            self.velo_bev = crate::geometry::update_velocity(self.velo_bev, delta, ema_gamma);
        }
        self.last_obs_bev = (frame, obs);

        for d in detections {
            let m = d.camera;
            if let Some((f0, b0)) = self.last_obs_2d[m] {
                if frame > f0 {
                    let k = 1.0 / (frame - f0) as f64;
                    let delta = Delta::new((d.bbox.l - b0.l) * k, (d.bbox.t - b0.t) * k);
                    self.velo_2d[m] = crate::geometry::update_velocity(self.velo_2d[m], delta, ema_gamma);
                }
            }
            self.last_obs_2d[m] = Some((frame, d.bbox));
            self.per_camera_last_seen[m] = Some(frame);
            self.evidence.insert((frame, m));
        }
        self.last_seen = frame;
        self.state = TrackState::Active;
        Ok(())
    }

    /// Take over history of a track that is being retired into this one.
    pub fn absorb_track(&mut self, other: &Track) {
        self.evidence.extend(other.evidence.iter().copied());
        for m in 0..self.rep.num_cameras() {
            self.per_camera_last_seen[m] = self.per_camera_last_seen[m].max(other.per_camera_last_seen[m]);
            if self.rep.pos_2d[m].is_none() && other.rep.pos_2d[m].is_some() {
                self.rep.pos_2d[m] = other.rep.pos_2d[m];
                self.velo_2d[m] = other.velo_2d[m];
                self.last_obs_2d[m] = other.last_obs_2d[m];
            }
        }
    }

    /// Drop evidence older than `window` frames before `now`.
    pub fn prune_evidence(&mut self, now: i64, window: i64) {
        let cutoff = now - window;
        self.evidence.retain(|&(f, _)| f >= cutoff);
    }

    /// Linear motion step of every ground row and every known 2D box.
    pub fn project_forward(&mut self) {
        use crate::geometry::Advance;
        for row in self.rep.pos_bev.iter_mut().flatten() {
            *row = row.advance(self.velo_bev);
        }
        for (m, row) in self.rep.pos_2d.iter_mut().enumerate() {
            if let Some(b) = row {
                *b = b.advance(self.velo_2d[m]);
            }
        }
    }
}
