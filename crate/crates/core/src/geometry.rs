//! Image boxes, ground-plane points, homography projection and the linear
//! motion model.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("bounding box must have positive extent, got w={w}, h={h}")]
    EmptyBox { w: f64, h: f64 },
    #[error("homography is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("homography must have 9 entries, got {0}")]
    BadShape(usize),
    #[error("degenerate projection: homogeneous scale {0:e} is at or beyond the horizon")]
    Degenerate(f64),
    #[error("alpha_proj {0} outside [0, 1]")]
    Alpha(f64),
}

/// Axis-aligned image box: top-left corner `(l, t)` and extent `(w, h)`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub l: f64,
    pub t: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(l: f64, t: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(w > 0.0 && h > 0.0) {
            return Err(GeometryError::EmptyBox { w, h });
        }
        Ok(BBox { l, t, w, h })
    }

    pub fn right(&self) -> f64 {
        self.l + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.t + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Image point at the horizontal center, `alpha` of the way down the box.
    pub fn anchor(&self, alpha: f64) -> (f64, f64) {
        (self.l + 0.5 * self.w, self.t + alpha * self.h)
    }
}

/// Point on the common ground plane, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl GroundPoint {
    pub fn new(x: f64, y: f64) -> Self {
        GroundPoint { x, y }
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Arithmetic mean of a non-empty set of points.
    pub fn mean<'a, I>(points: I) -> Option<GroundPoint>
    where
        I: IntoIterator<Item = &'a GroundPoint>,
    {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for p in points {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
        (n > 0).then(|| GroundPoint::new(sx / n as f64, sy / n as f64))
    }
}

/// A per-frame displacement, either on the ground plane or of a box corner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
}

impl Delta {
    pub const ZERO: Delta = Delta { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Delta { dx, dy }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

impl Add for Delta {
    type Output = Delta;
    fn add(self, rhs: Delta) -> Delta {
        Delta::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

impl Mul<f64> for Delta {
    type Output = Delta;
    fn mul(self, k: f64) -> Delta {
        Delta::new(self.dx * k, self.dy * k)
    }
}

impl Sub for GroundPoint {
    type Output = Delta;
    fn sub(self, rhs: GroundPoint) -> Delta {
        Delta::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Linear motion: advance a position by one step of velocity.
pub trait Advance {
    fn advance(&self, velo: Delta) -> Self;
}

impl Advance for GroundPoint {
    fn advance(&self, velo: Delta) -> Self {
        GroundPoint::new(self.x + velo.dx, self.y + velo.dy)
    }
}

impl Advance for BBox {
    /// Moves the top-left corner; the extent is carried unchanged.
    fn advance(&self, velo: Delta) -> Self {
        BBox {
            l: self.l + velo.dx,
            t: self.t + velo.dy,
            ..*self
        }
    }
}

pub fn predict_linear<P: Advance>(pos: &P, velo: Delta) -> P {
    pos.advance(velo)
}

/// Exponential smoothing of a velocity estimate with a fresh per-frame delta.
pub fn update_velocity(old: Delta, new_delta: Delta, ema_gamma: f64) -> Delta {
    Delta::new(
        ema_gamma * old.dx + (1.0 - ema_gamma) * new_delta.dx,
        ema_gamma * old.dy + (1.0 - ema_gamma) * new_delta.dy,
    )
}

/// 3×3 projective transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub const IDENTITY: Homography =
        Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 9 {
            return Err(GeometryError::BadShape(values.len()));
        }
        let mut m = [[0.0; 3]; 3];
        for (i, v) in values.iter().enumerate() {
            m[i / 3][i % 3] = *v;
        }
        Ok(Homography(m))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        let d = self.det();
        if !(d.abs() > 1e-12) {
            return Err(GeometryError::Singular(d.abs()));
        }
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / d;
            }
        }
        Ok(Homography(inv))
    }

    pub fn mul(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[r][k] * other.0[k][c]).sum();
            }
        }
        Homography(out)
    }

    /// Homogeneous image of `(x, y, 1)`.
    pub fn apply_homogeneous(&self, x: f64, y: f64) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
            m[2][0] * x + m[2][1] * y + m[2][2],
        ]
    }

    /// Dehomogenized image of `(x, y)`; fails when the scale is ~0.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64), GeometryError> {
        let [hx, hy, hz] = self.apply_homogeneous(x, y);
        if !(hz.abs() >= 1e-9) {
            return Err(GeometryError::Degenerate(hz));
        }
        Ok((hx / hz, hy / hz))
    }
}

/// Pixel-to-ground homography of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: String,
    pub homography: Homography,
}

impl CameraCalibration {
    pub fn new(camera_id: impl Into<String>, homography: Homography) -> Result<Self, GeometryError> {
        let d = homography.det();
        if !(d.abs() > 1e-12) {
            return Err(GeometryError::Singular(d.abs()));
        }
        Ok(CameraCalibration {
            camera_id: camera_id.into(),
            homography,
        })
    }

    /// Map a ground point back into this camera's image.
    pub fn ground_to_image(&self, p: GroundPoint) -> Result<(f64, f64), GeometryError> {
        self.homography.inverse()?.apply(p.x, p.y)
    }
}

/// Ground position of a box: the homography applied to the point at the
/// horizontal center and `alpha_proj` of the box height.
pub fn project_to_ground(
    b: &BBox,
    cal: &CameraCalibration,
    alpha_proj: f64,
) -> Result<GroundPoint, GeometryError> {
    if !(0.0..=1.0).contains(&alpha_proj) {
        return Err(GeometryError::Alpha(alpha_proj));
    }
    let (u, v) = b.anchor(alpha_proj);
    let (x, y) = cal.homography.apply(u, v)?;
    Ok(GroundPoint::new(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box() -> BBox {
        BBox::new(0.0, 0.0, 2.0, 2.0).unwrap()
    }

    fn cal(h: Homography) -> CameraCalibration {
        CameraCalibration::new("c0", h).unwrap()
    }

    #[test]
    fn projection_examples() {
        let id = cal(Homography::IDENTITY);
        assert_eq!(project_to_ground(&unit_box(), &id, 0.85).unwrap(), GroundPoint::new(1.0, 1.7));
        assert_eq!(project_to_ground(&unit_box(), &id, 1.0).unwrap(), GroundPoint::new(1.0, 2.0));
        let scale = cal(Homography([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]));
        assert_eq!(project_to_ground(&unit_box(), &scale, 0.85).unwrap(), GroundPoint::new(2.0, 3.4));
    }

    #[test]
    fn horizon_is_rejected() {
        // third row sends every point with v = 2 to infinity
        let h = Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, -2.0]]);
        let err = project_to_ground(&unit_box(), &cal(h), 1.0).unwrap_err();
        assert!(matches!(err, GeometryError::Degenerate(_)));
        assert!(project_to_ground(&unit_box(), &cal(Homography::IDENTITY), 1.2).is_err());
    }

    #[test]
    fn singular_calibration_rejected() {
        let h = Homography([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(CameraCalibration::new("x", h).is_err());
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn linear_prediction() {
        let p = GroundPoint::new(3.0, 4.0);
        assert_eq!(predict_linear(&p, Delta::ZERO), p);
        assert_eq!(predict_linear(&p, Delta::new(1.0, -2.0)), GroundPoint::new(4.0, 2.0));
        let b = BBox::new(10.0, 10.0, 5.0, 5.0).unwrap();
        assert_eq!(predict_linear(&b, Delta::new(2.0, 0.0)), BBox::new(12.0, 10.0, 5.0, 5.0).unwrap());
    }

    #[test]
    fn velocity_smoothing() {
        let v = update_velocity(Delta::ZERO, Delta::new(2.0, 2.0), 0.9);
        assert!((v.dx - 0.2).abs() < 1e-12 && (v.dy - 0.2).abs() < 1e-12);
        for g in [0.0, 0.3, 1.0] {
            assert_eq!(update_velocity(Delta::new(1.0, 1.0), Delta::new(1.0, 1.0), g), Delta::new(1.0, 1.0));
        }
        assert_eq!(update_velocity(Delta::new(4.0, 0.0), Delta::ZERO, 0.5), Delta::new(2.0, 0.0));
    }

    fn well_conditioned() -> impl Strategy<Value = Homography> {
        proptest::array::uniform9(-1.0f64..1.0).prop_filter_map("ill-conditioned", |v| {
            let mut m = Homography::from_row_major(&v).unwrap();
            for i in 0..3 {
                m.0[i][i] += 2.0;
            }
            (m.det().abs() > 0.5).then_some(m)
        })
    }

    proptest! {
        #[test]
        fn inverse_recovers_anchor(h in well_conditioned(), l in 0.0f64..50.0, t in 0.0f64..50.0,
                                   w in 1.0f64..20.0, hh in 1.0f64..20.0, alpha in 0.0f64..=1.0) {
            let c = cal(h);
            let b = BBox::new(l, t, w, hh).unwrap();
            if let Ok(p) = project_to_ground(&b, &c, alpha) {
                if let Ok((u, v)) = c.ground_to_image(p) {
                    let (u0, v0) = b.anchor(alpha);
                    let scale = u0.abs().max(v0.abs()).max(1.0);
                    prop_assert!((u - u0).abs() <= 1e-6 * scale);
                    prop_assert!((v - v0).abs() <= 1e-6 * scale);
                }
            }
        }

        #[test]
        fn prediction_is_additive(x in -1e3f64..1e3, y in -1e3f64..1e3, dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
            let p = GroundPoint::new(x, y);
            let v = Delta::new(dx, dy);
            let twice = predict_linear(&predict_linear(&p, v), v);
            let once = predict_linear(&p, v * 2.0);
            prop_assert!((twice.x - once.x).abs() <= 1e-9 && (twice.y - once.y).abs() <= 1e-9);
        }
    }
}
