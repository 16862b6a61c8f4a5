//! Seeded synthetic scenes: pinhole cameras around a square ground area,
//! vehicles on piecewise-linear paths, and noisy per-camera detection
//! streams with matching ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, CameraCalibration, GeometryError, GroundPoint, Homography};
use crate::io::DetectionRecord;
use crate::metrics::{Position, TrajectorySet, View};
use crate::model::normalize;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("could not place vehicle {0} with the required separation")]
    Placement(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub drop_prob: f64,
    /// Probability of one false positive per camera and frame.
    pub fp_rate: f64,
    pub bbox_jitter_px: f64,
    pub embed_noise: f64,
    /// Camera `m` at stream frame `t` shows the scene at time `t - frame_offset[m]`.
    /// Empty means all zero.
    pub frame_offset: Vec<i64>,
    /// Std-dev (meters) of the camera position error baked into the emitted calibration.
    pub calib_jitter: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            drop_prob: 0.0,
            fp_rate: 0.0,
            bbox_jitter_px: 0.0,
            embed_noise: 0.0,
            frame_offset: Vec::new(),
            calib_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub num_cameras: usize,
    pub num_vehicles: usize,
    pub num_frames: usize,
    /// Side of the square area, centered at the origin, that vehicles keep
    /// returning to (they may briefly leave it while turning), meters.
    pub extent: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub focal_px: f64,
    pub camera_height: f64,
    /// Horizontal distance of every camera from the scene center.
    pub camera_distance: f64,
    pub feat_dim: usize,
    pub vehicle_width: f64,
    pub vehicle_height: f64,
    /// Meters per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub min_separation: f64,
    /// Largest heading change at a waypoint, degrees.
    pub max_turn_deg: f64,
    pub noise: NoiseSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            num_cameras: 3,
            num_vehicles: 10,
            num_frames: 200,
            extent: 40.0,
            image_width: 1280.0,
            image_height: 720.0,
            focal_px: 1000.0,
            camera_height: 15.0,
            camera_distance: 25.0,
            feat_dim: 16,
            vehicle_width: 2.0,
            vehicle_height: 1.5,
            speed_min: 0.15,
            speed_max: 0.35,
            min_separation: 2.0,
            max_turn_deg: 30.0,
            noise: NoiseSpec::default(),
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Invalid { field, reason: reason.into() }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_cameras < 2 {
            return Err(invalid("num_cameras", "need at least 2 cameras"));
        }
        if self.num_frames == 0 {
            return Err(invalid("num_frames", "must be positive"));
        }
        if self.feat_dim == 0 {
            return Err(invalid("feat_dim", "must be positive"));
        }
        let positive = [
            ("extent", self.extent),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("focal_px", self.focal_px),
            ("camera_height", self.camera_height),
            ("camera_distance", self.camera_distance),
            ("vehicle_width", self.vehicle_width),
            ("vehicle_height", self.vehicle_height),
            ("speed_min", self.speed_min),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.speed_max.is_finite() && self.speed_max >= self.speed_min) {
            return Err(invalid("speed_max", "must be at least speed_min"));
        }
        if !(0.0..=180.0).contains(&self.max_turn_deg) {
            return Err(invalid("max_turn_deg", "must be in [0, 180]"));
        }
        if !(self.min_separation >= 0.0) {
            return Err(invalid("min_separation", "must be non-negative"));
        }
        let n = &self.noise;
        for (field, p) in [("noise.drop_prob", n.drop_prob), ("noise.fp_rate", n.fp_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(field, format!("probability {p} outside [0, 1]")));
            }
        }
        for (field, s) in [
            ("noise.bbox_jitter_px", n.bbox_jitter_px),
            ("noise.embed_noise", n.embed_noise),
            ("noise.calib_jitter", n.calib_jitter),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid(field, format!("sigma must be non-negative, got {s}")));
            }
        }
        if !n.frame_offset.is_empty() && n.frame_offset.len() != self.num_cameras {
            return Err(invalid(
                "noise.frame_offset",
                format!("expected {} entries, got {}", self.num_cameras, n.frame_offset.len()),
            ));
        }
        Ok(())
    }

    pub fn offset(&self, camera: usize) -> i64 {
        self.noise.frame_offset.get(camera).copied().unwrap_or(0)
    }
}

/// A simulated pinhole camera looking at the scene center.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCamera {
    pub camera_id: String,
    /// Ground to image (true pose).
    pub ground_to_image: Homography,
    pub width: f64,
    pub height: f64,
    /// Image corners on the ground, clockwise from top-left.
    pub fov: Vec<GroundPoint>,
}

impl SimCamera {
    /// Image position of a ground point and its depth, if in front of the camera.
    pub fn project(&self, p: GroundPoint) -> Option<(f64, f64, f64)> {
        let [u, v, z] = self.ground_to_image.apply_homogeneous(p.x, p.y);
        (z > 1e-9).then(|| (u / z, v / z, z))
    }

    pub fn sees(&self, p: GroundPoint) -> bool {
        self.project(p)
            .is_some_and(|(u, v, _)| (0.0..self.width).contains(&u) && (0.0..self.height).contains(&v))
    }
}

/// Noise-free observation of one vehicle in one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTruth {
    pub camera: usize,
    pub frame: i64,
    pub identity: u64,
    pub bbox: BBox,
    /// Where the vehicle actually stands at the time the camera shows.
    pub ground: GroundPoint,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub cameras: Vec<SimCamera>,
    /// Image to ground, as emitted (includes calibration jitter).
    pub calibrations: Vec<CameraCalibration>,
    /// Sorted by frame, then camera.
    pub detections: Vec<DetectionRecord>,
    pub image_truth: Vec<ImageTruth>,
    /// Camera views hold boxes, the ground view holds true positions.
    pub gt: TrajectorySet,
}

fn camera_ground_to_image(spec: &ScenarioSpec, angle: f64, shift: [f64; 3]) -> Homography {
    let c = [
        spec.camera_distance * angle.cos() + shift[0],
        spec.camera_distance * angle.sin() + shift[1],
        spec.camera_height + shift[2],
    ];
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let unit = |a: [f64; 3]| {
        let n = dot(a, a).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    // aim at the true center even when the position is perturbed
    let fwd = unit(sub([0.0, 0.0, 0.0], c));
    let right = unit(cross(fwd, [0.0, 0.0, 1.0]));
    let down = cross(fwd, right);
    let rows = [right, down, fwd];
    let mut ext = [[0.0; 3]; 3];
    for (i, r) in rows.iter().enumerate() {
        ext[i] = [r[0], r[1], -dot(*r, c)];
    }
    let f = spec.focal_px;
    let k = Homography([
        [f, 0.0, spec.image_width / 2.0],
        [0.0, f, spec.image_height / 2.0],
        [0.0, 0.0, 1.0],
    ]);
    k.mul(&Homography(ext))
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI
}

/// Next waypoint. The heading turns by at most `max_turn_deg`; near the area
/// boundary the turn is biased toward the center and segments get shorter,
/// so vehicles curve back instead of reversing.
fn next_waypoint(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, pos: GroundPoint, heading: f64) -> GroundPoint {
    let half = spec.extent / 2.0;
    let max_turn = spec.max_turn_deg.to_radians();
    let edge = (pos.x.abs().max(pos.y.abs()) / half).min(1.0);
    let w = ((edge - 0.5) / 0.5).clamp(0.0, 1.0);
    let to_center = wrap_angle((-pos.y).atan2(-pos.x) - heading);
    let random = if max_turn > 0.0 { rng.gen_range(-max_turn..=max_turn) } else { 0.0 };
    let turn = (w * to_center + (1.0 - w) * random).clamp(-max_turn, max_turn);
    let h = heading + turn;
    let len = rng.gen_range(spec.extent / 6.0..=spec.extent / 3.0) * (1.0 - 0.6 * w);
    GroundPoint::new(pos.x + len * h.cos(), pos.y + len * h.sin())
}

/// Piecewise-linear constant-speed path sampled at consecutive integer times.
fn sample_path(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, len: usize) -> Vec<GroundPoint> {
    let half = 0.8 * spec.extent / 2.0;
    let mut pos = GroundPoint::new(rng.gen_range(-half..=half), rng.gen_range(-half..=half));
    let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut target = next_waypoint(rng, spec, pos, heading);
    let speed = if spec.speed_max > spec.speed_min {
        rng.gen_range(spec.speed_min..=spec.speed_max)
    } else {
        spec.speed_min
    };
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(pos);
        let mut budget = speed;
        loop {
            let d = pos.distance(&target);
            if d > budget {
                pos = GroundPoint::new(
                    pos.x + (target.x - pos.x) * budget / d,
                    pos.y + (target.y - pos.y) * budget / d,
                );
                break;
            }
            budget -= d;
            pos = target;
            target = next_waypoint(rng, spec, pos, heading);
            heading = (target.y - pos.y).atan2(target.x - pos.x);
        }
    }
    out
}

const MAX_PLACEMENT_TRIES: usize = 5000;

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m_cams = spec.num_cameras;
    let t_len = spec.num_frames as i64;

    let mut cameras = Vec::with_capacity(m_cams);
    let mut calibrations = Vec::with_capacity(m_cams);
    let jitter = Normal::new(0.0, spec.noise.calib_jitter.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for m in 0..m_cams {
        let angle = std::f64::consts::TAU * m as f64 / m_cams as f64 + 0.3;
        let g = camera_ground_to_image(spec, angle, [0.0; 3]);
        let shift = if spec.noise.calib_jitter > 0.0 {
            [jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng)]
        } else {
            [0.0; 3]
        };
        let emitted = camera_ground_to_image(spec, angle, shift).inverse()?;
        let to_ground = g.inverse()?;
        let (w, h) = (spec.image_width, spec.image_height);
        let fov = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            .iter()
            .filter_map(|&(u, v)| to_ground.apply(u, v).ok().map(|(x, y)| GroundPoint::new(x, y)))
            .collect();
        let camera_id = format!("c{m}");
        calibrations.push(CameraCalibration::new(camera_id.clone(), emitted)?);
        cameras.push(SimCamera { camera_id, ground_to_image: g, width: w, height: h, fov });
    }

    // world time range covering every camera's shifted view and the true time
    let offsets: Vec<i64> = (0..m_cams).map(|m| spec.offset(m)).collect();
    let t_lo = offsets.iter().map(|o| -o).min().unwrap_or(0).min(0);
    let t_hi = offsets.iter().map(|o| t_len - 1 - o).max().unwrap_or(0).max(t_len - 1);
    let world_len = (t_hi - t_lo + 1) as usize;

    let mut paths: Vec<Vec<GroundPoint>> = Vec::with_capacity(spec.num_vehicles);
    for v in 0..spec.num_vehicles {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let cand = sample_path(&mut rng, spec, world_len);
            let clear = paths.iter().all(|other| {
                other
                    .iter()
                    .zip(&cand)
                    .all(|(a, b)| a.distance(b) >= spec.min_separation)
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        paths.push(placed.ok_or(SimError::Placement(v))?);
    }
    let at = |v: usize, t: i64| -> Option<GroundPoint> {
        (t_lo..=t_hi).contains(&t).then(|| paths[v][(t - t_lo) as usize])
    };

    let f = spec.feat_dim;
    let identity_feats: Vec<Vec<f64>> = (0..spec.num_vehicles)
        .map(|_| {
            let mut e: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut e);
            e
        })
        .collect();

    let noise = &spec.noise;
    let mut detections = Vec::new();
    let mut image_truth = Vec::new();
    let mut gt = TrajectorySet::new();
    for t in 0..t_len {
        let mut visible_somewhere = vec![false; spec.num_vehicles];
        for (m, cam) in cameras.iter().enumerate() {
            let shown = t - offsets[m];
            let mut frame_dets = Vec::new();
            for v in 0..spec.num_vehicles {
                let Some(p) = at(v, shown) else { continue };
                if !cam.sees(p) {
                    continue;
                }
                visible_somewhere[v] = true;
                let (u, y, z) = cam.project(p).expect("visible point is in front");
                let w = spec.focal_px * spec.vehicle_width / z;
                let h = spec.focal_px * spec.vehicle_height / z;
                let bbox = BBox::new(u - w / 2.0, y - h, w, h)?;
                let identity = v as u64 + 1;
                gt.insert(identity, t, View::Camera(cam.camera_id.clone()), Position::Box(bbox));
                image_truth.push(ImageTruth { camera: m, frame: t, identity, bbox, ground: p });

                if noise.drop_prob > 0.0 && rng.gen_bool(noise.drop_prob) {
                    continue;
                }
                let observed = jitter_box(&mut rng, bbox, noise.bbox_jitter_px);
                let mut emb: Vec<f64> = identity_feats[v]
                    .iter()
                    .map(|x| x + noise.embed_noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalize(&mut emb);
                frame_dets.push(DetectionRecord {
                    camera_id: cam.camera_id.clone(),
                    frame: t,
                    bbox: [observed.l, observed.t, observed.w, observed.h],
                    confidence: 1.0,
                    embedding: emb,
                });
            }
            if noise.fp_rate > 0.0 && rng.gen_bool(noise.fp_rate) {
                let h = rng.gen_range(20.0..80.0);
                let w = h * spec.vehicle_width / spec.vehicle_height;
                let mut emb: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
                normalize(&mut emb);
                frame_dets.push(DetectionRecord {
                    camera_id: cam.camera_id.clone(),
                    frame: t,
                    bbox: [
                        rng.gen_range(0.0..spec.image_width - w),
                        rng.gen_range(0.0..spec.image_height - h),
                        w,
                        h,
                    ],
                    confidence: rng.gen_range(0.3..1.0),
                    embedding: emb,
                });
            }
            frame_dets.shuffle(&mut rng);
            detections.extend(frame_dets);
        }
        for (v, seen) in visible_somewhere.iter().enumerate() {
            if *seen {
                let p = at(v, t).expect("true time in range");
                gt.insert(v as u64 + 1, t, View::Ground, Position::Point(p));
            }
        }
    }

    Ok(Scenario {
        spec: spec.clone(),
        cameras,
        calibrations,
        detections,
        image_truth,
        gt,
    })
}

fn jitter_box(rng: &mut ChaCha8Rng, b: BBox, sigma: f64) -> BBox {
    if sigma == 0.0 {
        return b;
    }
    let mut n = || sigma * rng.sample::<f64, _>(StandardNormal);
    let (dl, dt, dw, dh) = (n(), n(), n(), n());
    BBox {
        l: b.l + dl,
        t: b.t + dt,
        w: (b.w + dw).max(1.0),
        h: (b.h + dh).max(1.0),
    }
}
