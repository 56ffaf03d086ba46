//! Reference forwards of the 2D/3D fusion and correspondence operators at desk scale.
//!
//! Feature maps are `H x W x C` token grids; token `(i, j)` covers image row band `i` and
//! column band `j`. Feature volumes are `D x H x W x C` grids over axis-aligned bounds with
//! depth along world `x`, height along `y` and width along `z`.

mod attention;
mod ops;

pub use attention::{mha, AttentionMask, AttentionOutput, AttentionParams, FeedForward, FusionBlock};
pub use ops::{
    daf_fuse, gaf_fuse, lift, paf_fuse, roi_crop3d, sttx, stx, DepthEncoding, FusionOutput, Lifted, RoiFeature,
    WeightRow,
};

use nalgebra::{DMatrix, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geom::{PinholeCamera, Workspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap2D {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap2D {
    /// `values` is row-major over `(i, j, c)`.
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self, FusionError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(FusionError::Shape(format!(
                "empty feature map {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(FusionError::Shape(format!(
                "{} values for a {height}x{width}x{channels} map",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFinite("feature map".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: &[f64]) -> Result<Self, FusionError> {
        Self::new(height, width, value.len(), value.repeat(height * width))
    }

    /// Standard normal entries from a seeded stream.
    pub fn random(height: usize, width: usize, channels: usize, seed: u64) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..height * width * channels)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.width + j) * self.channels;
        &self.values[at..at + self.channels]
    }

    /// One row per token, row-major.
    pub fn tokens(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.height * self.width, self.channels, &self.values)
    }

    /// Pixel coordinates of the center of token `(i, j)` on `camera`'s image.
    pub fn token_pixel(&self, camera: &PinholeCamera, i: usize, j: usize) -> (f64, f64) {
        let u = (j as f64 + 0.5) * camera.width() as f64 / self.width as f64;
        let v = (i as f64 + 0.5) * camera.height() as f64 / self.height as f64;
        (u, v)
    }

    /// Continuous token coordinates `(x, y)` of a pixel; token centers sit at integers.
    pub fn pixel_to_token(&self, camera: &PinholeCamera, u: f64, v: f64) -> (f64, f64) {
        let x = u * self.width as f64 / camera.width() as f64 - 0.5;
        let y = v * self.height as f64 / camera.height() as f64 - 0.5;
        (x, y)
    }

    /// Bilinear interpolation at token coordinates, clamped to the outermost token centers.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Vec<f64> {
        let (x0, x1, fx) = lerp_cell(x, self.width);
        let (y0, y1, fy) = lerp_cell(y, self.height);
        (0..self.channels)
            .map(|c| {
                let at = |i: usize, j: usize| self.token(i, j)[c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                top * (1.0 - fy) + bottom * fy
            })
            .collect()
    }
}

/// Neighbouring lattice indices and the fractional weight of the upper one, after clamping
/// `x` into `[0, n - 1]`.
fn lerp_cell(x: f64, n: usize) -> (usize, usize, f64) {
    let x = x.clamp(0.0, (n - 1) as f64);
    // world-to-lattice rounding can miss a lattice point by a few ulps
    let x = if (x - x.round()).abs() <= 1e-12 { x.round() } else { x };
    let lo = (x.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, x - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume3D {
    dims: [usize; 3],
    channels: usize,
    bounds: Workspace,
    values: Vec<f64>,
}

impl FeatureVolume3D {
    /// `values` is row-major over `(d, h, w, c)`.
    pub fn new(dims: [usize; 3], channels: usize, bounds: Workspace, values: Vec<f64>) -> Result<Self, FusionError> {
        if dims.contains(&0) || channels == 0 {
            return Err(FusionError::Shape(format!("empty volume {dims:?}x{channels}")));
        }
        if values.len() != dims.iter().product::<usize>() * channels {
            return Err(FusionError::Shape(format!(
                "{} values for a {dims:?}x{channels} volume",
                values.len()
            )));
        }
        if (0..3).any(|k| bounds.min[k].is_nan() || bounds.max[k].is_nan() || bounds.max[k] <= bounds.min[k]) {
            return Err(FusionError::InvalidArgument(format!(
                "degenerate volume bounds {bounds:?}"
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFinite("feature volume".into()));
        }
        Ok(Self {
            dims,
            channels,
            bounds,
            values,
        })
    }

    pub fn zeros(dims: [usize; 3], channels: usize, bounds: Workspace) -> Result<Self, FusionError> {
        Self::new(
            dims,
            channels,
            bounds,
            vec![0.0; dims.iter().product::<usize>() * channels],
        )
    }

    pub fn random(dims: [usize; 3], channels: usize, bounds: Workspace, seed: u64) -> Result<Self, FusionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..dims.iter().product::<usize>() * channels)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self::new(dims, channels, bounds, values)
    }

    /// Fills every voxel from `f(center)`.
    pub fn from_fn(
        dims: [usize; 3],
        channels: usize,
        bounds: Workspace,
        f: impl Fn(&Vector3<f64>) -> Vec<f64>,
    ) -> Result<Self, FusionError> {
        let mut v = Self::zeros(dims, channels, bounds)?;
        for n in 0..v.num_voxels() {
            let value = f(&v.voxel_center(n));
            if value.len() != channels {
                return Err(FusionError::Shape(format!(
                    "{} channels from fill function",
                    value.len()
                )));
            }
            v.voxel_mut(n).copy_from_slice(&value);
        }
        if !v.values.iter().all(|x| x.is_finite()) {
            return Err(FusionError::NonFinite("feature volume".into()));
        }
        Ok(v)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bounds(&self) -> &Workspace {
        &self.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn coords(&self, n: usize) -> [usize; 3] {
        let w = n % self.dims[2];
        let h = (n / self.dims[2]) % self.dims[1];
        [n / (self.dims[1] * self.dims[2]), h, w]
    }

    pub fn voxel(&self, n: usize) -> &[f64] {
        &self.values[n * self.channels..(n + 1) * self.channels]
    }

    pub fn voxel_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.values[n * self.channels..(n + 1) * self.channels]
    }

    pub fn spacing(&self) -> [f64; 3] {
        let e = self.bounds.extent();
        std::array::from_fn(|k| e[k] / self.dims[k] as f64)
    }

    pub fn voxel_center(&self, n: usize) -> Vector3<f64> {
        let idx = self.coords(n);
        let s = self.spacing();
        Vector3::from_fn(|k, _| self.bounds.min[k] + (idx[k] as f64 + 0.5) * s[k])
    }

    pub fn voxel_centers(&self) -> Vec<Vector3<f64>> {
        (0..self.num_voxels()).map(|n| self.voxel_center(n)).collect()
    }

    /// Depth slice holding world coordinate `x`; the upper bound belongs to the last slice.
    pub fn slice_of(&self, x: f64) -> Option<usize> {
        let (lo, hi) = (self.bounds.min[0], self.bounds.max[0]);
        if !(x >= lo && x <= hi) {
            return None;
        }
        let k = ((x - lo) / self.spacing()[0]).floor() as usize;
        Some(k.min(self.dims[0] - 1))
    }

    /// One row per voxel.
    pub fn tokens(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_voxels(), self.channels, &self.values)
    }

    /// Sum of every value in each depth slice.
    pub fn slice_checksums(&self) -> Vec<f64> {
        let per_slice = self.dims[1] * self.dims[2] * self.channels;
        self.values.chunks(per_slice).map(|s| s.iter().sum()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }

    /// Continuous voxel-lattice coordinates of a world point; voxel centers sit at integers.
    pub fn world_to_lattice(&self, p: &Vector3<f64>) -> [f64; 3] {
        let s = self.spacing();
        std::array::from_fn(|k| (p[k] - self.bounds.min[k]) / s[k] - 0.5)
    }

    /// Trilinear interpolation at a world point, clamped to the outermost voxel centers.
    pub fn sample_trilinear(&self, p: &Vector3<f64>) -> Vec<f64> {
        let g = self.world_to_lattice(p);
        let cells: [(usize, usize, f64); 3] = std::array::from_fn(|k| lerp_cell(g[k], self.dims[k]));
        let mut out = vec![0.0; self.channels];
        for corner in 0..8 {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for k in 0..3 {
                let (lo, hi, f) = cells[k];
                if corner >> k & 1 == 1 {
                    idx[k] = hi;
                    weight *= f;
                } else {
                    idx[k] = lo;
                    weight *= 1.0 - f;
                }
            }
            if weight == 0.0 {
                continue;
            }
            let v = self.voxel(self.index(idx[0], idx[1], idx[2]));
            out.iter_mut().zip(v).for_each(|(o, x)| *o += weight * x);
        }
        out
    }
}

/// Voxels whose centers project inside the image in front of the camera.
pub fn frustum_mask(camera: &PinholeCamera, volume: &FeatureVolume3D) -> Vec<bool> {
    (0..volume.num_voxels())
        .map(|n| camera.in_image(&camera.project(&Point3::from(volume.voxel_center(n)))))
        .collect()
}

/// Element-wise sum of two volumes of equal shape.
pub fn add_fuse(volume: &FeatureVolume3D, aligned: &FeatureVolume3D) -> Result<FeatureVolume3D, FusionError> {
    if !volume.same_shape(aligned) {
        return Err(FusionError::Shape(format!(
            "{:?}x{} vs {:?}x{}",
            volume.dims, volume.channels, aligned.dims, aligned.channels
        )));
    }
    let values = volume.values.iter().zip(&aligned.values).map(|(a, b)| a + b).collect();
    FeatureVolume3D::new(volume.dims, volume.channels, volume.bounds, values)
}

/// Samples the 2D map at the projection of every in-frustum voxel center into a volume
/// shaped like `like`; voxels outside the frustum get zeros.
pub fn align_2d_to_volume(
    map: &FeatureMap2D,
    camera: &PinholeCamera,
    like: &FeatureVolume3D,
) -> Result<FeatureVolume3D, FusionError> {
    let mut out = FeatureVolume3D::zeros(like.dims, map.channels, like.bounds)?;
    for n in 0..out.num_voxels() {
        let proj = camera.project(&Point3::from(out.voxel_center(n)));
        if camera.in_image(&proj) {
            let (x, y) = map.pixel_to_token(camera, proj.u, proj.v);
            out.voxel_mut(n).copy_from_slice(&map.sample_bilinear(x, y));
        }
    }
    Ok(out)
}

/// Nearest-neighbour resampling onto a `dims` grid over the same bounds.
pub fn upsample_nearest(volume: &FeatureVolume3D, dims: [usize; 3]) -> Result<FeatureVolume3D, FusionError> {
    let mut out = FeatureVolume3D::zeros(dims, volume.channels, volume.bounds)?;
    for n in 0..out.num_voxels() {
        let c = out.coords(n);
        let src: [usize; 3] = std::array::from_fn(|k| c[k] * volume.dims[k] / dims[k]);
        let from = volume.index(src[0], src[1], src[2]);
        out.voxel_mut(n).copy_from_slice(volume.voxel(from));
    }
    Ok(out)
}
