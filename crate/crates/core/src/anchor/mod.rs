//! Anchor lattice over the workspace, per-frame decoding, positive-anchor assignment
//! and the training loss.

mod gradcheck;
mod loss;

pub use gradcheck::{finite_difference_check, gradient_check, GradCheckReport};
pub use loss::{
    focal_loss, focal_loss_grad, loss, loss_with_gradient, FocalParams, HeadGradient, LossBreakdown, LossComponent,
    LossConfig, LossWeights, RegressionLoss,
};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box9, GeomError, Workspace};
use crate::metrics::{ResponseTrack, TemporalInterval};

/// Radius around the ground-truth center inside which anchors may be positive.
pub const POSITIVE_RADIUS: f64 = 0.3;
/// At most this many nearest anchors are positive per frame.
pub const POSITIVE_TOP_K: usize = 5;
pub const DEFAULT_COUNTS: [usize; 3] = [16, 16, 16];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("anchor counts must be positive, got {0:?}")]
    ZeroCount([usize; 3]),
    #[error("workspace axis {axis} has non-positive extent")]
    DegenerateWorkspace { axis: usize },
    #[error("frame {frame}: expected {expected} anchors, got {actual}")]
    AnchorCount {
        frame: usize,
        expected: usize,
        actual: usize,
    },
    #[error("frame {frame}, anchor {anchor}: presence {value} outside [0, 1]")]
    Presence { frame: usize, anchor: usize, value: f64 },
    #[error("frame {frame}, anchor {anchor}: regression index out of range")]
    RegressionIndex { frame: usize, anchor: usize },
    #[error("frame {frame}: {source}")]
    Box { frame: usize, source: GeomError },
    #[error("head covers {head} frames but {targets} targets were given")]
    FrameCount { head: usize, targets: usize },
    #[error("parameter vector has length {actual}, expected {expected}")]
    ParamLength { expected: usize, actual: usize },
}

/// Uniform lattice of anchor centers at the cell midpoints of the workspace subdivision.
///
/// Anchor `n` sits at cell `(ix, iy, iz)` with `n = (ix * ny + iy) * nz + iz`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    workspace: Workspace,
    counts: [usize; 3],
    spacing: [f64; 3],
    centers: Vec<Vector3<f64>>,
}

impl AnchorGrid {
    pub fn new(workspace: Workspace, counts: [usize; 3]) -> Result<Self, AnchorError> {
        if counts.contains(&0) {
            return Err(AnchorError::ZeroCount(counts));
        }
        let extent = workspace.extent();
        if let Some(axis) = (0..3).find(|&k| !(extent[k] > 0.0 && extent[k].is_finite())) {
            return Err(AnchorError::DegenerateWorkspace { axis });
        }
        let spacing: [f64; 3] = std::array::from_fn(|k| extent[k] / counts[k] as f64);
        let mut centers = Vec::with_capacity(counts.iter().product());
        for ix in 0..counts[0] {
            for iy in 0..counts[1] {
                for iz in 0..counts[2] {
                    let idx = [ix, iy, iz];
                    centers.push(Vector3::from_fn(|k, _| {
                        workspace.min[k] + (idx[k] as f64 + 0.5) * spacing[k]
                    }));
                }
            }
        }
        Ok(Self {
            workspace,
            counts,
            spacing,
            centers,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vector3<f64>] {
        &self.centers
    }

    pub fn center(&self, n: usize) -> Vector3<f64> {
        self.centers[n]
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.counts[1] + iy) * self.counts[2] + iz
    }

    /// Anchor whose cell contains `p`, clamped to the grid; for points inside the workspace
    /// this is the nearest anchor.
    pub fn nearest(&self, p: &Vector3<f64>) -> usize {
        let idx: [usize; 3] = std::array::from_fn(|k| {
            let cell = ((p[k] - self.workspace.min[k]) / self.spacing[k]).floor();
            cell.clamp(0.0, (self.counts[k] - 1) as f64) as usize
        });
        self.index(idx[0], idx[1], idx[2])
    }

    /// Positive anchors for a ground-truth center: within [`POSITIVE_RADIUS`] and among
    /// the [`POSITIVE_TOP_K`] nearest, nearest first, distance ties broken by index.
    pub fn assign_positives(&self, gt_center: &Vector3<f64>) -> Vec<usize> {
        // Only cells whose index range can reach the radius are scanned.
        let mut ranges = [(0usize, 0usize); 3];
        for k in 0..3 {
            let rel = (gt_center[k] - self.workspace.min[k]) / self.spacing[k] - 0.5;
            let reach = POSITIVE_RADIUS / self.spacing[k];
            let lo = (rel - reach).floor() - 1.0;
            let hi = (rel + reach).ceil() + 1.0;
            let max = (self.counts[k] - 1) as f64;
            if hi < 0.0 || lo > max || !rel.is_finite() {
                return Vec::new();
            }
            ranges[k] = (lo.max(0.0) as usize, hi.min(max) as usize);
        }
        let mut candidates = Vec::new();
        for ix in ranges[0].0..=ranges[0].1 {
            for iy in ranges[1].0..=ranges[1].1 {
                for iz in ranges[2].0..=ranges[2].1 {
                    let n = self.index(ix, iy, iz);
                    let d = anchor_distance(&self.centers[n], gt_center);
                    if d <= POSITIVE_RADIUS {
                        candidates.push((d, n));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(POSITIVE_TOP_K);
        candidates.into_iter().map(|(_, n)| n).collect()
    }
}

impl Default for AnchorGrid {
    fn default() -> Self {
        Self::new(Workspace::default(), DEFAULT_COUNTS).expect("default grid is valid")
    }
}

/// Euclidean distance used by the assignment rules.
pub fn anchor_distance(anchor: &Vector3<f64>, point: &Vector3<f64>) -> f64 {
    (anchor - point).norm()
}

/// Box parameters regressed at one anchor: center offset, size and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub offset: [f64; 3],
    pub size: [f64; 3],
    pub rotation: [f64; 3],
}

impl Regression {
    /// Unit box at the anchor; stands in for anchors a head output does not list.
    pub const NEUTRAL: Regression = Regression {
        offset: [0.0; 3],
        size: [1.0; 3],
        rotation: [0.0; 3],
    };

    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(&self.offset);
        out[3..6].copy_from_slice(&self.size);
        out[6..].copy_from_slice(&self.rotation);
        out
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            offset: [v[0], v[1], v[2]],
            size: [v[3], v[4], v[5]],
            rotation: [v[6], v[7], v[8]],
        }
    }
}

/// Head prediction for one frame: a presence probability for every anchor and the box
/// regression for the anchors it lists. Unlisted anchors regress [`Regression::NEUTRAL`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameHead {
    pub presence: Vec<f64>,
    pub regression: BTreeMap<usize, Regression>,
}

impl FrameHead {
    /// All-zero presence, no regression entries.
    pub fn empty(num_anchors: usize) -> Self {
        Self {
            presence: vec![0.0; num_anchors],
            regression: BTreeMap::new(),
        }
    }

    pub fn regression_at(&self, n: usize) -> Regression {
        self.regression.get(&n).copied().unwrap_or(Regression::NEUTRAL)
    }

    /// Presence from logits through the logistic function.
    pub fn from_logits(logits: &[f64], regression: BTreeMap<usize, Regression>) -> Self {
        Self {
            presence: logits.iter().map(|x| sigmoid(*x)).collect(),
            regression,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Head output over a clip of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    num_anchors: usize,
    frames: Vec<FrameHead>,
}

impl HeadOutput {
    pub fn new(num_anchors: usize, frames: Vec<FrameHead>) -> Result<Self, AnchorError> {
        for (t, f) in frames.iter().enumerate() {
            if f.presence.len() != num_anchors {
                return Err(AnchorError::AnchorCount {
                    frame: t,
                    expected: num_anchors,
                    actual: f.presence.len(),
                });
            }
            if let Some((n, p)) = f.presence.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(AnchorError::Presence {
                    frame: t,
                    anchor: n,
                    value: *p,
                });
            }
            for (&n, r) in &f.regression {
                if n >= num_anchors {
                    return Err(AnchorError::RegressionIndex { frame: t, anchor: n });
                }
                // size positivity and finiteness share the box checks
                Box9::new(r.offset, r.size, r.rotation).map_err(|source| AnchorError::Box { frame: t, source })?;
            }
        }
        Ok(Self { num_anchors, frames })
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn frames(&self) -> &[FrameHead] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flattens presence values, then every listed regression entry, frame by frame.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for f in &self.frames {
            out.extend_from_slice(&f.presence);
            for r in f.regression.values() {
                out.extend_from_slice(&r.to_array());
            }
        }
        out
    }

    /// Inverse of [`HeadOutput::to_params`] on the same layout, without validation so
    /// finite-difference probes may step anywhere.
    pub fn with_params(&self, params: &[f64]) -> Result<Self, AnchorError> {
        let expected = self
            .frames
            .iter()
            .map(|f| f.presence.len() + 9 * f.regression.len())
            .sum();
        if params.len() != expected {
            return Err(AnchorError::ParamLength {
                expected,
                actual: params.len(),
            });
        }
        let mut cursor = 0;
        let mut frames = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            let presence = params[cursor..cursor + f.presence.len()].to_vec();
            cursor += f.presence.len();
            let regression = f
                .regression
                .keys()
                .map(|&n| {
                    let mut v = [0.0; 9];
                    v.copy_from_slice(&params[cursor..cursor + 9]);
                    cursor += 9;
                    (n, Regression::from_array(v))
                })
                .collect();
            frames.push(FrameHead { presence, regression });
        }
        Ok(Self {
            num_anchors: self.num_anchors,
            frames,
        })
    }
}

/// Regression target placing anchor `n` onto `gt`.
pub fn encode(grid: &AnchorGrid, gt: &Box9, n: usize) -> Regression {
    let offset = gt.center() - grid.center(n);
    let rot = gt.rotation();
    let size = gt.size();
    Regression {
        offset: [offset.x, offset.y, offset.z],
        size: [size.x, size.y, size.z],
        rotation: [rot.x, rot.y, rot.z],
    }
}

/// Index of the highest presence score; the lowest index wins ties.
pub fn select_anchor(presence: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (n, p) in presence.iter().enumerate() {
        match best {
            Some(b) if *p <= presence[b] => {}
            _ => best = Some(n),
        }
    }
    best
}

/// Decodes the frame's Top-1 box: the anchor with the highest presence plus its
/// regressed offset, with the regressed size and angles. Returns the box and its presence.
pub fn decode(grid: &AnchorGrid, frame: &FrameHead) -> Result<(Box9, f64), AnchorError> {
    if frame.presence.len() != grid.len() || grid.is_empty() {
        return Err(AnchorError::AnchorCount {
            frame: 0,
            expected: grid.len(),
            actual: frame.presence.len(),
        });
    }
    let n = select_anchor(&frame.presence).expect("non-empty presence");
    let r = frame.regression_at(n);
    let center = grid.center(n) + Vector3::from(r.offset);
    let b = Box9::new([center.x, center.y, center.z], r.size, r.rotation)
        .map_err(|source| AnchorError::Box { frame: 0, source })?;
    Ok((b, frame.presence[n]))
}

/// How per-frame presence is folded into a track confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceAggregation {
    #[default]
    Mean,
    Max,
}

/// Rule turning per-frame decodes into one response track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackAssembly {
    /// Frames whose Top-1 presence is at least this value are candidates.
    pub presence_threshold: f64,
    pub aggregation: ConfidenceAggregation,
}

impl Default for TrackAssembly {
    fn default() -> Self {
        Self {
            presence_threshold: 0.5,
            aggregation: ConfidenceAggregation::Mean,
        }
    }
}

/// Decodes every frame and keeps the longest contiguous run of frames at or above the
/// presence threshold. Among equally long runs the latest one wins, since the query asks
/// for the most recent occurrence. Returns `None` when no frame qualifies.
pub fn assemble_track(
    query_id: &str,
    grid: &AnchorGrid,
    head: &HeadOutput,
    rule: &TrackAssembly,
) -> Result<Option<ResponseTrack>, AnchorError> {
    let decoded = head
        .frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            decode(grid, f).map_err(|e| match e {
                AnchorError::Box { source, .. } => AnchorError::Box { frame: t, source },
                AnchorError::AnchorCount { expected, actual, .. } => AnchorError::AnchorCount {
                    frame: t,
                    expected,
                    actual,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<(usize, usize)> = None;
    let mut run_start: Option<usize> = None;
    for t in 0..=decoded.len() {
        let on = t < decoded.len() && decoded[t].1 >= rule.presence_threshold;
        match (on, run_start) {
            (true, None) => run_start = Some(t),
            (false, Some(s)) => {
                let len = t - s;
                if best.is_none_or(|(bs, be)| len > be - bs) {
                    best = Some((s, t - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let Some((start, end)) = best else {
        return Ok(None);
    };
    let run = &decoded[start..=end];
    let scores = run.iter().map(|(_, p)| *p);
    let confidence = match rule.aggregation {
        ConfidenceAggregation::Mean => scores.sum::<f64>() / run.len() as f64,
        ConfidenceAggregation::Max => scores.fold(0.0, f64::max),
    }
    .clamp(0.0, 1.0);
    let interval = TemporalInterval::new(start, end).expect("ordered run");
    let boxes = run.iter().map(|(b, _)| *b).collect();
    Ok(Some(
        ResponseTrack::new(query_id, interval, boxes, confidence).expect("validated track parts"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_layout() {
        let g = AnchorGrid::default();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.spacing(), [0.625, 0.25, 0.125]);
        assert_eq!(g.center(0), Vector3::new(0.3125, -1.875, -0.9375));
        // z varies fastest
        assert_eq!(g.center(1), Vector3::new(0.3125, -1.875, -0.8125));
        assert_eq!(g.center(16), Vector3::new(0.3125, -1.625, -0.9375));
        for c in g.centers() {
            assert!(g.workspace().contains(c));
        }
    }

    #[test]
    fn single_cell_grid_sits_at_midpoint() {
        let g = AnchorGrid::new(Workspace::default(), [1, 1, 1]).unwrap();
        assert_eq!(g.center(0), Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_grids() {
        assert_eq!(
            AnchorGrid::new(Workspace::default(), [0, 4, 4]),
            Err(AnchorError::ZeroCount([0, 4, 4]))
        );
        let flat = Workspace::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]);
        assert_eq!(
            AnchorGrid::new(flat, [2, 2, 2]),
            Err(AnchorError::DegenerateWorkspace { axis: 1 })
        );
    }

    fn one_hot(grid: &AnchorGrid, n: usize, r: Regression) -> FrameHead {
        let mut f = FrameHead::empty(grid.len());
        f.presence[n] = 0.9;
        f.regression.insert(n, r);
        f
    }

    #[test]
    fn zero_offset_decode() {
        let g = AnchorGrid::new(Workspace::default(), [1, 1, 1]).unwrap();
        let (b, p) = decode(&g, &one_hot(&g, 0, Regression::NEUTRAL)).unwrap();
        assert_eq!(b, Box9::axis_aligned([5.0, 0.0, 0.0], [1.0; 3]).unwrap());
        assert_eq!(p, 0.9);
    }

    #[test]
    fn encode_decode_round_trip() {
        let g = AnchorGrid::default();
        let gt = Box9::new([3.3, -0.2, 0.4], [0.5, 0.8, 1.2], [0.4, -0.1, 2.9]).unwrap();
        let n = g.assign_positives(&gt.center())[0];
        let (b, _) = decode(&g, &one_hot(&g, n, encode(&g, &gt, n))).unwrap();
        for (x, y) in b.to_array().iter().zip(gt.to_array()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn encode_on_anchor_center_gives_zero_offset() {
        let g = AnchorGrid::default();
        let c = g.center(1234);
        let gt = Box9::axis_aligned([c.x, c.y, c.z], [1.0; 3]).unwrap();
        assert_eq!(encode(&g, &gt, 1234).offset, [0.0; 3]);
        // outside the workspace the offset is plain subtraction
        let far = Box9::axis_aligned([50.0, 0.0, 0.0], [1.0; 3]).unwrap();
        assert_eq!(encode(&g, &far, 0).offset[0], 50.0 - 0.3125);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(select_anchor(&[0.1, 0.7, 0.7, 0.2]), Some(1));
        assert_eq!(select_anchor(&[0.0; 4]), Some(0));
        assert_eq!(select_anchor(&[]), None);
    }

    #[test]
    fn assignment_rules() {
        let g = AnchorGrid::default();
        let c = g.center(2000);
        let pos = g.assign_positives(&c);
        assert_eq!(pos[0], 2000);
        assert!(pos.len() <= POSITIVE_TOP_K);
        assert!(g.assign_positives(&Vector3::new(-5.0, 0.0, 0.0)).is_empty());
        assert!(g.assign_positives(&Vector3::new(5.0, 0.0, 1.35)).is_empty());
    }

    #[test]
    fn head_validation() {
        assert!(HeadOutput::new(3, vec![FrameHead::empty(2)]).is_err());
        let mut f = FrameHead::empty(2);
        f.presence[0] = 1.5;
        assert!(HeadOutput::new(2, vec![f]).is_err());
        let mut f = FrameHead::empty(2);
        f.regression.insert(
            1,
            Regression {
                size: [1.0, 0.0, 1.0],
                ..Regression::NEUTRAL
            },
        );
        assert!(HeadOutput::new(2, vec![f]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let g = AnchorGrid::new(Workspace::default(), [2, 2, 2]).unwrap();
        let head = HeadOutput::new(8, vec![one_hot(&g, 3, Regression::NEUTRAL), FrameHead::empty(8)]).unwrap();
        let params = head.to_params();
        assert_eq!(params.len(), 8 + 9 + 8);
        assert_eq!(head.with_params(&params).unwrap(), head);
        assert!(head.with_params(&params[1..]).is_err());
    }

    #[test]
    fn track_assembly_takes_longest_run() {
        let g = AnchorGrid::new(Workspace::default(), [1, 1, 2]).unwrap();
        let ps = [0.9, 0.2, 0.6, 0.7, 0.8, 0.1, 0.9, 0.95, 0.99];
        let frames = ps
            .iter()
            .map(|p| FrameHead {
                presence: vec![*p, 0.0],
                regression: BTreeMap::new(),
            })
            .collect();
        let head = HeadOutput::new(2, frames).unwrap();
        let track = assemble_track("q", &g, &head, &TrackAssembly::default())
            .unwrap()
            .unwrap();
        // runs [2,4] and [6,8] tie in length; the later one wins
        assert_eq!(track.interval(), TemporalInterval::new(6, 8).unwrap());
        assert!((track.confidence() - (0.9 + 0.95 + 0.99) / 3.0).abs() <= 1e-12);
        let max_rule = TrackAssembly {
            aggregation: ConfidenceAggregation::Max,
            ..TrackAssembly::default()
        };
        let track = assemble_track("q", &g, &head, &max_rule).unwrap().unwrap();
        assert_eq!(track.confidence(), 0.99);
    }

    #[test]
    fn silent_head_gives_no_track() {
        let g = AnchorGrid::new(Workspace::default(), [1, 1, 2]).unwrap();
        let head = HeadOutput::new(2, vec![FrameHead::empty(2); 5]).unwrap();
        assert!(assemble_track("q", &g, &head, &TrackAssembly::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn threshold_sweep_moves_boundaries_at_crossings() {
        // presence ramps 0.0, 0.1, ..., 1.0 up and back down
        let g = AnchorGrid::new(Workspace::default(), [1, 1, 1]).unwrap();
        let ramp: Vec<f64> = (0..=10).chain((0..10).rev()).map(|k| k as f64 / 10.0).collect();
        let frames = ramp
            .iter()
            .map(|p| FrameHead {
                presence: vec![*p],
                regression: BTreeMap::new(),
            })
            .collect();
        let head = HeadOutput::new(1, frames).unwrap();
        for k in 1..=10 {
            let rule = TrackAssembly {
                presence_threshold: k as f64 / 10.0,
                ..TrackAssembly::default()
            };
            let track = assemble_track("q", &g, &head, &rule).unwrap().unwrap();
            assert_eq!(
                track.interval(),
                TemporalInterval::new(k, 20 - k).unwrap(),
                "threshold {k}"
            );
        }
    }
}
