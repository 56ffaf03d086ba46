use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeomError;

/// Pinhole camera with a world-to-camera pose.
///
/// The camera frame is `x` right, `y` down, `z` forward; `depth` is the camera-frame `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// False for points on or behind the image plane; `u`, `v` are meaningless then.
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

impl PinholeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeomError::InvalidCamera(format!(
                "focal lengths ({fx}, {fy}) must be positive"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidCamera(format!(
                "image size {width}x{height} is empty"
            )));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeomError::InvalidCamera(
                "pose rotation is not a proper rotation".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidCamera("translation must be finite".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera at `position` whose optical axis is the world `+x` axis, image right is world
    /// `-y` and image down is world `-z`.
    pub fn looking_along_x(
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        position: Vector3<f64>,
    ) -> Result<Self, GeomError> {
        let rotation = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let translation = -(rotation * position);
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.fx, self.fy)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p_cam - self.translation))
    }

    pub fn project(&self, p: &Point3<f64>) -> Projection {
        let c = self.to_camera(p);
        Projection {
            u: self.cx + self.fx * c.x / c.z,
            v: self.cy + self.fy * c.y / c.z,
            depth: c.z,
        }
    }

    /// World point at camera-frame depth `depth` on the ray through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        let c = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.to_world(&c)
    }

    pub fn in_image(&self, proj: &Projection) -> bool {
        proj.in_front() && proj.u >= 0.0 && proj.u < self.width as f64 && proj.v >= 0.0 && proj.v < self.height as f64
    }
}

/// Projects a world point; the result carries the camera-frame depth so callers can tell
/// points behind the camera apart.
pub fn project_point(camera: &PinholeCamera, p: &Point3<f64>) -> Projection {
    camera.project(p)
}
