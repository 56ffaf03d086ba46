//! Exact geometry for 9-DoF oriented boxes.
//!
//! Axis convention, fixed here and used everywhere in the crate:
//!
//! * the longitudinal axis is the first coordinate (`x`), carrying the box length `l`;
//! * the lateral axis is the second coordinate (`y`), carrying the width `w`;
//! * the vertical axis is the third coordinate (`z`), carrying the height `h`.
//!
//! Yaw rotates about the vertical axis, pitch about the lateral axis and roll about the
//! longitudinal axis. The rotations are intrinsic and applied yaw, then pitch, then roll,
//! which gives `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

mod camera;
mod oracle;
mod polytope;

pub use camera::{project_point, PinholeCamera, Projection};
pub use oracle::mc_iou_oracle;
pub use polytope::ConvexPolytope;

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vertices within this distance of a clipping plane count as lying on it.
pub const PLANE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("box size must be finite and strictly positive, got {0:?}")]
    InvalidSize([f64; 3]),
    #[error("box {what} must be finite, got {value:?}")]
    NonFinite { what: &'static str, value: [f64; 3] },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Wraps an angle into `(-pi, pi]`. Angles already in range are returned unchanged.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Rotation matrix for intrinsic yaw-pitch-roll angles (see the module docs for axes).
pub fn rotation_matrix(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}

/// A 9-DoF oriented box: center, size `(l, w, h)` and rotation `(yaw, pitch, roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Box9 {
    center: Vector3<f64>,
    size: Vector3<f64>,
    rotation: Vector3<f64>,
}

impl Box9 {
    pub fn new(center: [f64; 3], size: [f64; 3], rotation: [f64; 3]) -> Result<Self, GeomError> {
        if center.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite {
                what: "center",
                value: center,
            });
        }
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite {
                what: "rotation",
                value: rotation,
            });
        }
        if size.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(GeomError::InvalidSize(size));
        }
        Ok(Self {
            center: Vector3::from(center),
            size: Vector3::from(size),
            rotation: Vector3::new(
                normalize_angle(rotation[0]),
                normalize_angle(rotation[1]),
                normalize_angle(rotation[2]),
            ),
        })
    }

    /// Axis-aligned box (zero rotation).
    pub fn axis_aligned(center: [f64; 3], size: [f64; 3]) -> Result<Self, GeomError> {
        Self::new(center, size, [0.0; 3])
    }

    /// Builds a box from the document order `(x, y, z, l, w, h, yaw, pitch, roll)`.
    pub fn from_array(values: [f64; 9]) -> Result<Self, GeomError> {
        Self::new(
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        )
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.x,
            self.size.y,
            self.size.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
        ]
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn size(&self) -> Vector3<f64> {
        self.size
    }

    /// `(yaw, pitch, roll)` in radians, each in `(-pi, pi]`.
    pub fn rotation(&self) -> Vector3<f64> {
        self.rotation
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.x
    }

    pub fn pitch(&self) -> f64 {
        self.rotation.y
    }

    pub fn roll(&self) -> f64 {
        self.rotation.z
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.size.norm()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.rotation.x, self.rotation.y, self.rotation.z)
    }

    /// Copy with pitch and roll set to zero.
    pub fn with_zero_pitch_roll(&self) -> Self {
        Self {
            rotation: Vector3::new(self.rotation.x, 0.0, 0.0),
            ..*self
        }
    }

    /// Copy translated by `offset`.
    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self {
            center: self.center + offset,
            ..*self
        }
    }

    /// Corners in a fixed order: corner `i` uses sign `+` on local axis `k` iff bit `k`
    /// of `i` is set (bit 0 = length, bit 1 = width, bit 2 = height).
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let r = self.rotation_matrix();
        let half = self.size * 0.5;
        std::array::from_fn(|i| {
            let local = Vector3::new(
                if i & 1 != 0 { half.x } else { -half.x },
                if i & 2 != 0 { half.y } else { -half.y },
                if i & 4 != 0 { half.z } else { -half.z },
            );
            Point3::from(self.center + r * local)
        })
    }

    /// Point membership via the six half-space tests, in the box's local frame.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.rotation_matrix().transpose() * (p.coords - self.center);
        let half = self.size * 0.5;
        local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z
    }

    /// Outward half-spaces `n . x <= d` bounding the box.
    pub fn half_spaces(&self) -> [(Vector3<f64>, f64); 6] {
        let r = self.rotation_matrix();
        let half = self.size * 0.5;
        std::array::from_fn(|i| {
            let axis = i / 2;
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            let normal: Vector3<f64> = r.column(axis) * sign;
            (normal, normal.dot(&self.center) + half[axis])
        })
    }

    /// Axis-aligned bounds `(min, max)` of the corners.
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        aabb_of(self.corners().iter())
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.to_array(), other.to_array());
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl TryFrom<[f64; 9]> for Box9 {
    type Error = GeomError;

    fn try_from(values: [f64; 9]) -> Result<Self, Self::Error> {
        Self::from_array(values)
    }
}

impl From<Box9> for [f64; 9] {
    fn from(b: Box9) -> Self {
        b.to_array()
    }
}

/// Axis-aligned workspace bounds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub const fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.max[k] - self.min[k])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

impl Default for Workspace {
    /// `[0, 10] x [-2, 2] x [-1, 1]` meters.
    fn default() -> Self {
        Self::new([0.0, -2.0, -1.0], [10.0, 2.0, 1.0])
    }
}

pub(crate) fn aabb_of<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Volume of `a ∩ b` by clipping one box's polytope against the other's six half-spaces.
///
/// The pair is ordered canonically first so the result does not depend on argument order.
pub fn intersection_volume(a: &Box9, b: &Box9) -> f64 {
    if a == b {
        return a.volume();
    }
    let (first, second) = match a.canonical_cmp(b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    if (first.center - second.center).norm() > first.half_diagonal() + second.half_diagonal() {
        return 0.0;
    }
    let mut poly = ConvexPolytope::from_box(first);
    for (normal, offset) in second.half_spaces() {
        poly = poly.clip(&normal, offset);
        if poly.is_empty() {
            return 0.0;
        }
    }
    poly.volume().clamp(0.0, first.volume().min(second.volume()))
}

/// 3D IoU of two oriented boxes.
pub fn iou3d(a: &Box9, b: &Box9) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU on the 7-DoF boxes obtained by zeroing pitch and roll.
///
/// The enclosing volume is the bird's-eye convex hull of both footprints extruded over
/// the joint vertical extent; it coincides with the axis-aligned hull for yaw-free boxes.
pub fn giou7(a: &Box9, b: &Box9) -> f64 {
    let a = a.with_zero_pitch_roll();
    let b = b.with_zero_pitch_roll();
    let inter = if a == b {
        a.volume()
    } else {
        intersection_volume(&a, &b)
    };
    let union = a.volume() + b.volume() - inter;
    let iou = (inter / union).clamp(0.0, 1.0);
    let corners: Vec<Point3<f64>> = a.corners().into_iter().chain(b.corners()).collect();
    let (lo, hi) = aabb_of(corners.iter());
    let footprint: Vec<[f64; 2]> = corners.iter().map(|c| [c.x, c.y]).collect();
    let hull = convex_hull_area(footprint) * (hi.z - lo.z);
    // The hull always contains the union; clamp the penalty against rounding.
    iou - ((hull - union) / hull).max(0.0)
}

/// Area of the 2D convex hull (monotone chain).
fn convex_hull_area(mut points: Vec<[f64; 2]>) -> f64 {
    points.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    points.dedup();
    if points.len() < 3 {
        return 0.0;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * points.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(points.iter())
        } else {
            Box::new(points.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (hull[i], hull[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}
