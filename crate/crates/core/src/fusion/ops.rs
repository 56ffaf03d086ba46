use nalgebra::{DMatrix, Point3};
use rayon::prelude::*;

use super::{
    frustum_mask, mha, AttentionOutput, AttentionParams, FeatureMap2D, FeatureVolume3D, FusionBlock, FusionError,
};
use crate::geom::{Box9, PinholeCamera};

/// 2D tokens replicated along their viewing rays.
///
/// Sample `s` of token `(i, j)` is row `((i * W + j) * samples + s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub features: DMatrix<f64>,
    pub positions: Vec<Point3<f64>>,
    /// Camera-frame depth of each sample.
    pub depths: Vec<f64>,
    /// Pixel each sample was cast through.
    pub pixels: Vec<(f64, f64)>,
}

/// Casts a ray through every token center and places `samples` copies of the token at
/// evenly spaced camera depths in `[near, far]`; a single sample sits at `near`.
pub fn lift(
    map: &FeatureMap2D,
    camera: &PinholeCamera,
    samples: usize,
    near: f64,
    far: f64,
) -> Result<Lifted, FusionError> {
    if samples == 0 {
        return Err(FusionError::InvalidArgument(
            "at least one depth sample is required".into(),
        ));
    }
    if !(near > 0.0 && far >= near && far.is_finite()) {
        return Err(FusionError::InvalidArgument(format!("depth range [{near}, {far}]")));
    }
    let step = if samples > 1 {
        (far - near) / (samples - 1) as f64
    } else {
        0.0
    };
    let n = map.height() * map.width() * samples;
    let mut features = DMatrix::zeros(n, map.channels());
    let mut positions = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n);
    let mut row = 0;
    for i in 0..map.height() {
        for j in 0..map.width() {
            let (u, v) = map.token_pixel(camera, i, j);
            for s in 0..samples {
                let depth = near + s as f64 * step;
                for (c, x) in map.token(i, j).iter().enumerate() {
                    features[(row, c)] = *x;
                }
                positions.push(camera.back_project(u, v, depth));
                depths.push(depth);
                pixels.push((u, v));
                row += 1;
            }
        }
    }
    Ok(Lifted {
        features,
        positions,
        depths,
        pixels,
    })
}

/// Softmax weights one query voxel placed on its keys under one head.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub voxel: usize,
    pub head: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub volume: FeatureVolume3D,
    /// Every attention row that was evaluated, in voxel order within each group.
    pub weights: Vec<WeightRow>,
    /// Voxels that kept their input because nothing was available to attend to.
    pub passed_through: usize,
}

struct GroupResult {
    voxels: Vec<usize>,
    attention: AttentionOutput,
}

fn check_dims(volume: &FeatureVolume3D, channels: usize, block: &FusionBlock) -> Result<(), FusionError> {
    if volume.channels() != channels || block.dim() != channels {
        return Err(FusionError::Shape(format!(
            "volume has {} channels, 2D features {channels}, attention width {}",
            volume.channels(),
            block.dim()
        )));
    }
    Ok(())
}

fn rows_of(volume: &FeatureVolume3D, voxels: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(voxels.len(), volume.channels(), |r, c| volume.voxel(voxels[r])[c])
}

/// Writes group outputs into a copy of `volume` in group order.
fn assemble(volume: &FeatureVolume3D, groups: Vec<Option<GroupResult>>) -> FusionOutput {
    let mut out = volume.clone();
    let mut weights = Vec::new();
    let mut updated = 0;
    for g in groups.into_iter().flatten() {
        for (r, &n) in g.voxels.iter().enumerate() {
            if g.attention.empty_rows.binary_search(&r).is_ok() {
                continue;
            }
            updated += 1;
            for (c, v) in out.voxel_mut(n).iter_mut().enumerate() {
                *v = g.attention.output[(r, c)];
            }
            for (h, w) in g.attention.weights.iter().enumerate() {
                weights.push(WeightRow {
                    voxel: n,
                    head: h,
                    weights: w.row(r).iter().copied().collect(),
                });
            }
        }
    }
    FusionOutput {
        passed_through: volume.num_voxels() - updated,
        volume: out,
        weights,
    }
}

/// Depth-slice attention: in each slice along world `x`, the in-frustum voxels attend to
/// the lifted samples whose positions fall inside that slice.
///
/// Voxels outside the frustum, and slices without samples, keep their input features.
pub fn daf_fuse(
    volume: &FeatureVolume3D,
    lifted: &Lifted,
    camera: &PinholeCamera,
    block: &FusionBlock,
) -> Result<FusionOutput, FusionError> {
    check_dims(volume, lifted.features.ncols(), block)?;
    let mask = frustum_mask(camera, volume);
    let [depth, height, width] = volume.dims();
    let mut slice_keys = vec![Vec::new(); depth];
    for (r, p) in lifted.positions.iter().enumerate() {
        if let Some(k) = volume.slice_of(p.x) {
            slice_keys[k].push(r);
        }
    }
    let groups = (0..depth)
        .into_par_iter()
        .map(|d| {
            let keys = &slice_keys[d];
            let voxels: Vec<usize> = (d * height * width..(d + 1) * height * width)
                .filter(|&n| mask[n])
                .collect();
            if keys.is_empty() || voxels.is_empty() {
                return Ok(None);
            }
            let q = rows_of(volume, &voxels);
            let kv = DMatrix::from_fn(keys.len(), lifted.features.ncols(), |r, c| {
                lifted.features[(keys[r], c)]
            });
            let attention = block.forward(&q, &q, &kv, &kv, None)?;
            Ok(Some(GroupResult { voxels, attention }))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok(assemble(volume, groups))
}

/// Per-depth positional encoding added to voxel queries.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEncoding {
    table: DMatrix<f64>,
}

impl DepthEncoding {
    /// Row `d` is the encoding of depth index `d`.
    pub fn new(table: DMatrix<f64>) -> Result<Self, FusionError> {
        if !table.iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFinite("depth encoding".into()));
        }
        Ok(Self { table })
    }

    pub fn zeros(depth: usize, channels: usize) -> Self {
        Self {
            table: DMatrix::zeros(depth, channels),
        }
    }

    /// `sin(d / 10000^(2i/C))` in even channels and the matching cosine in odd ones.
    pub fn sinusoidal(depth: usize, channels: usize) -> Self {
        let table = DMatrix::from_fn(depth, channels, |d, c| {
            let rate = 10000f64.powf((c - c % 2) as f64 / channels as f64);
            let angle = d as f64 / rate;
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        });
        Self { table }
    }

    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }
}

/// Cross-attention from every in-frustum voxel, offset by its depth encoding, to all 2D
/// tokens. The residual path carries the unencoded voxel feature; voxels outside the
/// frustum keep their input.
pub fn gaf_fuse(
    volume: &FeatureVolume3D,
    map: &FeatureMap2D,
    encoding: &DepthEncoding,
    camera: &PinholeCamera,
    block: &FusionBlock,
) -> Result<FusionOutput, FusionError> {
    check_dims(volume, map.channels(), block)?;
    let [depth, height, width] = volume.dims();
    if encoding.table.shape() != (depth, volume.channels()) {
        return Err(FusionError::Shape(format!(
            "depth encoding is {:?}, volume needs ({depth}, {})",
            encoding.table.shape(),
            volume.channels()
        )));
    }
    let mask = frustum_mask(camera, volume);
    let tokens = map.tokens();
    let groups = (0..depth)
        .into_par_iter()
        .map(|d| {
            let voxels: Vec<usize> = (d * height * width..(d + 1) * height * width)
                .filter(|&n| mask[n])
                .collect();
            if voxels.is_empty() {
                return Ok(None);
            }
            let base = rows_of(volume, &voxels);
            let mut q = base.clone();
            for mut row in q.row_iter_mut() {
                row += encoding.table.row(d);
            }
            let attention = block.forward(&q, &base, &tokens, &tokens, None)?;
            Ok(Some(GroupResult { voxels, attention }))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok(assemble(volume, groups))
}

/// Projects each in-frustum voxel center, samples the 2D map bilinearly there, then lets
/// the voxels of every `(h, w)` depth column attend to the samples of that column.
pub fn paf_fuse(
    volume: &FeatureVolume3D,
    map: &FeatureMap2D,
    camera: &PinholeCamera,
    block: &FusionBlock,
) -> Result<FusionOutput, FusionError> {
    check_dims(volume, map.channels(), block)?;
    let [depth, height, width] = volume.dims();
    let sampled: Vec<Option<Vec<f64>>> = (0..volume.num_voxels())
        .map(|n| {
            let proj = camera.project(&Point3::from(volume.voxel_center(n)));
            camera.in_image(&proj).then(|| {
                let (x, y) = map.pixel_to_token(camera, proj.u, proj.v);
                map.sample_bilinear(x, y)
            })
        })
        .collect();
    let groups = (0..height * width)
        .into_par_iter()
        .map(|col| {
            let (h, w) = (col / width, col % width);
            let voxels: Vec<usize> = (0..depth)
                .map(|d| volume.index(d, h, w))
                .filter(|&n| sampled[n].is_some())
                .collect();
            if voxels.is_empty() {
                return Ok(None);
            }
            let q = rows_of(volume, &voxels);
            let kv = DMatrix::from_fn(voxels.len(), volume.channels(), |r, c| {
                sampled[voxels[r]].as_ref().expect("filtered")[c]
            });
            let attention = block.forward(&q, &q, &kv, &kv, None)?;
            Ok(Some(GroupResult { voxels, attention }))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok(assemble(volume, groups))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeature {
    /// `pool^3` rows ordered x-major, then y, then z.
    pub features: DMatrix<f64>,
    /// Set when the box misses the volume bounds entirely; the features are then zero.
    pub outside: bool,
}

/// Pools the volume over the axis-aligned bound of `b` with a `pool^3` lattice of cell
/// midpoints, interpolating trilinearly.
pub fn roi_crop3d(volume: &FeatureVolume3D, b: &Box9, pool: usize) -> Result<RoiFeature, FusionError> {
    if pool == 0 {
        return Err(FusionError::InvalidArgument("pool size must be positive".into()));
    }
    let rows = pool * pool * pool;
    let (lo, hi) = b.aabb();
    let bounds = volume.bounds();
    if (0..3).any(|k| hi[k] < bounds.min[k] || lo[k] > bounds.max[k]) {
        return Ok(RoiFeature {
            features: DMatrix::zeros(rows, volume.channels()),
            outside: true,
        });
    }
    let mut features = DMatrix::zeros(rows, volume.channels());
    for r in 0..rows {
        let idx = [r / (pool * pool), (r / pool) % pool, r % pool];
        let p = nalgebra::Vector3::from_fn(|k, _| lo[k] + (idx[k] as f64 + 0.5) / pool as f64 * (hi[k] - lo[k]));
        for (c, v) in volume.sample_trilinear(&p).into_iter().enumerate() {
            features[(r, c)] = v;
        }
    }
    Ok(RoiFeature {
        features,
        outside: false,
    })
}

/// Query tokens attend to all tokens of one frame.
pub fn stx(query: &DMatrix<f64>, frame: &DMatrix<f64>, params: &AttentionParams) -> Result<DMatrix<f64>, FusionError> {
    Ok(mha(query, frame, frame, None, params)?.output)
}

/// Self-attention over all tokens of a clip where a token of frame `t` sees only tokens
/// of frames `t'` with `|t - t'| <= window`.
pub fn sttx(
    frames: &[DMatrix<f64>],
    window: usize,
    params: &AttentionParams,
) -> Result<Vec<DMatrix<f64>>, FusionError> {
    if frames.is_empty() {
        return Err(FusionError::InvalidArgument("clip has no frames".into()));
    }
    let dim = params.dim();
    let mut frame_of = Vec::new();
    for (t, f) in frames.iter().enumerate() {
        if f.ncols() != dim {
            return Err(FusionError::Shape(format!(
                "frame {t} has width {}, expected {dim}",
                f.ncols()
            )));
        }
        frame_of.extend(std::iter::repeat_n(t, f.nrows()));
    }
    let all = DMatrix::from_fn(frame_of.len(), dim, |r, c| {
        let t = frame_of[r];
        let offset: usize = frames[..t].iter().map(|f| f.nrows()).sum();
        frames[t][(r - offset, c)]
    });
    let mask = |i: usize, j: usize| frame_of[i].abs_diff(frame_of[j]) <= window;
    let out = mha(&all, &all, &all, Some(&mask), params)?.output;
    let mut result = Vec::with_capacity(frames.len());
    let mut start = 0;
    for f in frames {
        result.push(out.rows(start, f.nrows()).into_owned());
        start += f.nrows();
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::geom::Workspace;

    fn rig() -> PinholeCamera {
        PinholeCamera::looking_along_x(40.0, 40.0, 64, 64, Vector3::new(-1.0, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn single_sample_lift_copies_tokens() {
        let map = FeatureMap2D::random(3, 4, 2, 5).unwrap();
        let lifted = lift(&map, &rig(), 1, 2.0, 9.0).unwrap();
        assert_eq!(lifted.features, map.tokens());
        assert!(lifted.depths.iter().all(|d| *d == 2.0));
    }

    #[test]
    fn lifted_samples_reproject() {
        let map = FeatureMap2D::random(3, 4, 2, 5).unwrap();
        let cam = rig();
        let lifted = lift(&map, &cam, 5, 1.0, 9.0).unwrap();
        assert_eq!(lifted.positions.len(), 60);
        for ((p, (u, v)), d) in lifted.positions.iter().zip(&lifted.pixels).zip(&lifted.depths) {
            let proj = cam.project(p);
            assert!((proj.u - u).abs() <= 1e-6 && (proj.v - v).abs() <= 1e-6);
            assert!((proj.depth - d).abs() <= 1e-9);
        }
        assert_eq!(&lifted.depths[..5], &[1.0, 3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn lift_rejects_bad_ranges() {
        let map = FeatureMap2D::random(1, 1, 1, 5).unwrap();
        assert!(lift(&map, &rig(), 0, 1.0, 2.0).is_err());
        assert!(lift(&map, &rig(), 2, 0.0, 2.0).is_err());
        assert!(lift(&map, &rig(), 2, 3.0, 2.0).is_err());
    }

    #[test]
    fn daf_single_key_per_slice() {
        let bounds = Workspace::new([0.0, -1.0, -1.0], [2.0, 1.0, 1.0]);
        let volume = FeatureVolume3D::random([2, 2, 2], 2, bounds, 3).unwrap();
        // one token lifted to depths 1.5 and 2.5, i.e. world x 0.5 and 1.5
        let map = FeatureMap2D::new(1, 1, 2, vec![7.0, -7.0]).unwrap();
        let lifted = lift(&map, &rig(), 2, 1.5, 2.5).unwrap();
        let out = daf_fuse(&volume, &lifted, &rig(), &FusionBlock::plain(2).unwrap()).unwrap();
        assert_eq!(out.passed_through, 0);
        for n in 0..8 {
            assert_eq!(out.volume.voxel(n), &[7.0, -7.0]);
        }
    }

    #[test]
    fn daf_passes_through_when_out_of_view() {
        let bounds = Workspace::new([0.0, -1.0, -1.0], [2.0, 1.0, 1.0]);
        let volume = FeatureVolume3D::random([2, 2, 2], 2, bounds, 3).unwrap();
        let behind = PinholeCamera::looking_along_x(40.0, 40.0, 64, 64, Vector3::new(5.0, 0.0, 0.0)).unwrap();
        let map = FeatureMap2D::random(2, 2, 2, 1).unwrap();
        let lifted = lift(&map, &behind, 3, 1.0, 3.0).unwrap();
        let out = daf_fuse(&volume, &lifted, &behind, &FusionBlock::seeded(2, 1, 4).unwrap()).unwrap();
        assert_eq!(out.volume, volume);
        assert_eq!(out.passed_through, 8);
    }

    #[test]
    fn gaf_single_token() {
        let volume = FeatureVolume3D::random([3, 2, 2], 2, Workspace::default(), 8).unwrap();
        let map = FeatureMap2D::new(1, 1, 2, vec![0.25, 4.0]).unwrap();
        let wide = PinholeCamera::looking_along_x(10.0, 10.0, 64, 64, Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let block = FusionBlock::plain(2).unwrap();
        let out = gaf_fuse(&volume, &map, &DepthEncoding::zeros(3, 2), &wide, &block).unwrap();
        assert_eq!(out.passed_through, 0);
        assert!(out.volume.values().chunks(2).all(|v| v == [0.25, 4.0]));
        assert!(gaf_fuse(&volume, &map, &DepthEncoding::zeros(2, 2), &wide, &block).is_err());
        let behind = PinholeCamera::looking_along_x(10.0, 10.0, 64, 64, Vector3::new(20.0, 0.0, 0.0)).unwrap();
        let out = gaf_fuse(&volume, &map, &DepthEncoding::zeros(3, 2), &behind, &block).unwrap();
        assert_eq!(out.volume, volume);
    }

    #[test]
    fn sinusoidal_first_row() {
        let e = DepthEncoding::sinusoidal(4, 4);
        assert_eq!(
            e.table().row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0, 1.0]
        );
        assert_eq!(e.table()[(1, 0)], 1f64.sin());
        assert_eq!(e.table()[(1, 2)], (1.0 / 100.0f64).sin());
    }

    #[test]
    fn paf_constant_map() {
        let bounds = Workspace::new([0.0, -1.0, -1.0], [2.0, 1.0, 1.0]);
        let volume = FeatureVolume3D::random([2, 3, 3], 2, bounds, 3).unwrap();
        let map = FeatureMap2D::constant(4, 4, &[1.5, -0.5]).unwrap();
        let out = paf_fuse(&volume, &map, &rig(), &FusionBlock::plain(2).unwrap()).unwrap();
        let mask = frustum_mask(&rig(), &volume);
        for (n, inside) in mask.iter().enumerate() {
            if *inside {
                assert_eq!(out.volume.voxel(n), &[1.5, -0.5]);
            } else {
                assert_eq!(out.volume.voxel(n), volume.voxel(n));
            }
        }
    }

    #[test]
    fn roi_pool_one_samples_center() {
        let volume = FeatureVolume3D::from_fn([4, 4, 4], 1, Workspace::default(), |p| vec![p.x + p.y * p.z]).unwrap();
        let b = Box9::new([5.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.7, 0.0, 0.0]).unwrap();
        let roi = roi_crop3d(&volume, &b, 1).unwrap();
        assert_eq!(
            roi.features.row(0).iter().copied().collect::<Vec<_>>(),
            volume.sample_trilinear(&b.center())
        );
        let far = Box9::axis_aligned([50.0, 0.0, 0.0], [1.0; 3]).unwrap();
        let roi = roi_crop3d(&volume, &far, 5).unwrap();
        assert!(roi.outside);
        assert_eq!(roi.features.shape(), (125, 1));
        assert!(roi.features.iter().all(|v| *v == 0.0));
        assert!(roi_crop3d(&volume, &b, 0).is_err());
    }

    #[test]
    fn stx_single_frame_token() {
        let p = AttentionParams::identity(2, 1).unwrap();
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let frame = DMatrix::from_row_slice(1, 2, &[0.5, 0.25]);
        let out = stx(&q, &frame, &p).unwrap();
        assert_eq!(out.shape(), (3, 2));
        assert!(out.row_iter().all(|r| r == frame.row(0)));
    }

    #[test]
    fn sttx_window_zero_is_per_frame() {
        let p = AttentionParams::random(4, 2, 11).unwrap();
        let frames: Vec<DMatrix<f64>> = (0..3)
            .map(|t| FeatureMap2D::random(2, 2, 4, t).unwrap().tokens())
            .collect();
        let out = sttx(&frames, 0, &p).unwrap();
        for (f, o) in frames.iter().zip(&out) {
            assert_eq!(&mha(f, f, f, None, &p).unwrap().output, o);
        }
    }
}
