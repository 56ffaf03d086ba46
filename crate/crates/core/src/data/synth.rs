use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, HeadFrame, HeadRecord, Modalities, PresenceEntries, Query, Segment, SequenceAnnotation};
use crate::anchor::{encode, AnchorGrid};
use crate::geom::{normalize_angle, Box9, Workspace};
use crate::metrics::{ResponseTrack, TemporalInterval};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer of the SplitMix64 generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sequence `index`: output `index` of a SplitMix64 stream started at `master`.
pub fn sequence_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Perturbations applied to the degraded predictions. Each knob scales a fixed set of
/// per-frame standard normal draws, so raising one knob never reshuffles the others.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the center offset, meters.
    pub center_jitter: f64,
    /// Standard deviation of the log-scale size factor.
    pub size_jitter: f64,
    /// Standard deviation added to each Euler angle, radians.
    pub angle_jitter: f64,
    /// Frames the predicted interval is moved by; positive is later. Clamped to the sequence.
    pub temporal_shift: i64,
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Per-query confidence, drawn independently of the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceModel {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel::Uniform { low: 0.5, high: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_sequences: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Upper bound of the sampled separation distance, frames.
    pub max_sep: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub fps: f64,
    pub workspace: Workspace,
    pub noise: NoiseConfig,
    pub confidence: ConfidenceModel,
    /// Anchor counts for head tensors encoding the ground truth; `None` skips them.
    pub head_grid: Option<[usize; 3]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sequences: 20,
            min_frames: 40,
            max_frames: 390,
            min_segments: 1,
            max_segments: 5,
            max_sep: 100,
            min_size: 0.2,
            max_size: 0.8,
            fps: 20.0,
            workspace: Workspace::default(),
            noise: NoiseConfig::default(),
            confidence: ConfidenceModel::default(),
            head_grid: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.num_sequences == 0 {
            return fail("num_sequences must be positive".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail(format!("frame range [{}, {}]", self.min_frames, self.max_frames));
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return fail(format!("segment range [{}, {}]", self.min_segments, self.max_segments));
        }
        if 2 * self.max_segments - 1 > self.min_frames {
            return fail(format!(
                "{} disjoint segments need at least {} frames, min_frames is {}",
                self.max_segments,
                2 * self.max_segments - 1,
                self.min_frames
            ));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return fail(format!("size range [{}, {}]", self.min_size, self.max_size));
        }
        let reach = self.max_size * 3f64.sqrt();
        let extent = self.workspace.extent();
        if let Some(k) = (0..3).find(|&k| extent[k].is_nan() || extent[k] <= reach) {
            return fail(format!(
                "workspace axis {k} cannot hold a box of size {}",
                self.max_size
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail(format!("fps {}", self.fps));
        }
        let n = self.noise;
        for (name, v) in [
            ("center", n.center_jitter),
            ("size", n.size_jitter),
            ("angle", n.angle_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} jitter {v} must be finite and non-negative"));
            }
        }
        let ok = match self.confidence {
            ConfidenceModel::Constant { value } => (0.0..=1.0).contains(&value),
            ConfidenceModel::Uniform { low, high } => 0.0 <= low && low <= high && high <= 1.0,
        };
        if !ok {
            return fail(format!("confidence model {:?} leaves [0, 1]", self.confidence));
        }
        if let Some(counts) = self.head_grid {
            AnchorGrid::new(self.workspace, counts).map_err(|e| DataError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub annotations: Vec<SequenceAnnotation>,
    /// Exact copies of the ground-truth tracks.
    pub oracle: Vec<ResponseTrack>,
    /// Tracks after the configured noise.
    pub degraded: Vec<ResponseTrack>,
    /// Separation distance sampled for each sequence.
    pub sep_distances: Vec<usize>,
    /// Sparse head tensors encoding the most recent segment of each sequence.
    pub heads: Option<Vec<HeadRecord>>,
}

/// Smooth motion kept inside the workspace shrunk by the box's half-diagonal.
struct Trajectory {
    size: [f64; 3],
    base: [f64; 3],
    amplitude: [f64; 3],
    omega: [f64; 3],
    phase: [f64; 3],
    yaw0: f64,
    yaw_rate: f64,
    pitch: f64,
    roll: f64,
}

impl Trajectory {
    fn sample(rng: &mut ChaCha8Rng, config: &SynthConfig) -> Self {
        let size: [f64; 3] = std::array::from_fn(|_| rng.random_range(config.min_size..=config.max_size));
        let reach = 0.5 * size.iter().map(|s| s * s).sum::<f64>().sqrt();
        let ws = &config.workspace;
        let mut base = [0.0; 3];
        let mut amplitude = [0.0; 3];
        let mut omega = [0.0; 3];
        let mut phase = [0.0; 3];
        for k in 0..3 {
            let (lo, hi) = (ws.min[k] + reach, ws.max[k] - reach);
            base[k] = rng.random_range(lo..=hi);
            amplitude[k] = rng.random_range(0.0..=1.0) * (base[k] - lo).min(hi - base[k]);
            omega[k] = rng.random_range(0.005..0.05);
            phase[k] = rng.random_range(0.0..TAU);
        }
        Self {
            size,
            base,
            amplitude,
            omega,
            phase,
            yaw0: rng.random_range(-PI..PI),
            yaw_rate: rng.random_range(-0.02..0.02),
            pitch: rng.random_range(-0.2..0.2),
            roll: rng.random_range(-0.2..0.2),
        }
    }

    fn center(&self, t: usize) -> [f64; 3] {
        std::array::from_fn(|k| self.base[k] + self.amplitude[k] * (self.omega[k] * t as f64 + self.phase[k]).sin())
    }

    fn rotation(&self, t: usize) -> [f64; 3] {
        [
            normalize_angle(self.yaw0 + self.yaw_rate * t as f64),
            self.pitch,
            self.roll,
        ]
    }

    fn box_at(&self, t: usize) -> Box9 {
        Box9::new(self.center(t), self.size, self.rotation(t)).expect("trajectory boxes are valid")
    }
}

struct Sequence {
    annotation: SequenceAnnotation,
    oracle: ResponseTrack,
    degraded: ResponseTrack,
    sep: usize,
    head: Option<HeadRecord>,
}

fn normals(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

fn generate_sequence(index: usize, seed: u64, config: &SynthConfig, grid: Option<&AnchorGrid>) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = rng.clone();
    noise_rng.set_stream(1);
    let mut conf_rng = rng.clone();
    conf_rng.set_stream(2);

    let frames = rng.random_range(config.min_frames..=config.max_frames);
    let k = rng.random_range(config.min_segments..=config.max_segments);
    let sep = rng.random_range(0..=config.max_sep.min(frames - (2 * k - 1)));
    let visible_span = frames - sep;
    let extra = visible_span - (2 * k - 1);
    let mut cuts: Vec<usize> = (0..2 * k - 1).map(|_| rng.random_range(0..=extra)).collect();
    cuts.sort_unstable();
    cuts.push(extra);
    let pieces: Vec<usize> = cuts
        .iter()
        .scan(0, |prev, &c| {
            let piece = c - *prev;
            *prev = c;
            Some(piece)
        })
        .collect();
    let trajectory = Trajectory::sample(&mut rng, config);

    let mut cursor = pieces[0];
    let mut segments = Vec::with_capacity(k);
    for s in 0..k {
        let len = 1 + pieces[1 + 2 * s];
        let interval = TemporalInterval::new(cursor, cursor + len - 1).expect("ordered");
        let boxes = interval.frames().map(|t| trajectory.box_at(t)).collect();
        segments.push(Segment::new(interval, boxes).expect("one box per frame"));
        cursor += len;
        if s + 1 < k {
            cursor += 1 + pieces[2 + 2 * s];
        }
    }
    let most_recent = cursor - 1;
    let first = segments[0].interval().start();
    let query = Query {
        source: format!("frame:{first}"),
        box9: trajectory.box_at(first),
    };
    let id = format!("seq_{index:05}");
    let annotation = SequenceAnnotation::new(
        id.clone(),
        config.fps,
        frames,
        query,
        segments,
        most_recent,
        Modalities::default(),
    )
    .expect("generated annotations are valid");

    let confidence = match config.confidence {
        ConfidenceModel::Constant { value } => value,
        ConfidenceModel::Uniform { low, high } if low == high => low,
        ConfidenceModel::Uniform { low, high } => conf_rng.random_range(low..=high),
    };
    let gt = annotation.response_track();
    let oracle = gt.clone().with_confidence(confidence).expect("confidence in range");

    let draws: Vec<[[f64; 3]; 3]> = (0..frames)
        .map(|_| {
            [
                normals(&mut noise_rng),
                normals(&mut noise_rng),
                normals(&mut noise_rng),
            ]
        })
        .collect();
    let n = config.noise;
    let last = (frames - 1) as i64;
    let shift = |f: usize| (f as i64 + n.temporal_shift).clamp(0, last) as usize;
    let interval = TemporalInterval::new(shift(gt.interval().start()), shift(gt.interval().end())).expect("ordered");
    let boxes = interval
        .frames()
        .map(|t| {
            let [zc, zs, za] = draws[t];
            let c = trajectory.center(t);
            let r = trajectory.rotation(t);
            Box9::new(
                std::array::from_fn(|k| c[k] + n.center_jitter * zc[k]),
                std::array::from_fn(|k| trajectory.size[k] * (n.size_jitter * zs[k]).exp()),
                std::array::from_fn(|k| normalize_angle(r[k] + n.angle_jitter * za[k])),
            )
            .expect("perturbed boxes stay valid")
        })
        .collect();
    let degraded = ResponseTrack::new(id.clone(), interval, boxes, confidence).expect("aligned track");

    let head = grid.map(|grid| encode_head(&id, frames, &gt, grid));
    Sequence {
        annotation,
        oracle,
        degraded,
        sep,
        head,
    }
}

/// Presence 1 on the positive anchors of every ground-truth frame, or on the nearest anchor
/// when none is in range, with regression targets that decode back to the box.
fn encode_head(id: &str, frames: usize, gt: &ResponseTrack, grid: &AnchorGrid) -> HeadRecord {
    let active = gt
        .frames()
        .map(|(t, b)| {
            let center: Vector3<f64> = b.center();
            let mut anchors = grid.assign_positives(&center);
            if anchors.is_empty() {
                anchors.push(grid.nearest(&center));
            }
            anchors.sort_unstable();
            HeadFrame {
                frame: t,
                presence: PresenceEntries::Sparse(anchors.iter().map(|&a| (a, 1.0)).collect()),
                regression: anchors.iter().map(|&a| (a, encode(grid, b, a).to_array())).collect(),
            }
        })
        .collect();
    HeadRecord {
        sequence_id: id.to_owned(),
        frames,
        active,
    }
}

/// Deterministic synthetic split: sequence `i` depends only on `(seed, i, config)`.
pub fn generate_synthetic(seed: u64, config: &SynthConfig) -> Result<GeneratedData, DataError> {
    config.validate()?;
    let grid = config
        .head_grid
        .map(|counts| AnchorGrid::new(config.workspace, counts).expect("validated grid"));
    let sequences: Vec<Sequence> = (0..config.num_sequences)
        .into_par_iter()
        .map(|i| generate_sequence(i, sequence_seed(seed, i), config, grid.as_ref()))
        .collect();
    let mut out = GeneratedData {
        annotations: Vec::with_capacity(sequences.len()),
        oracle: Vec::with_capacity(sequences.len()),
        degraded: Vec::with_capacity(sequences.len()),
        sep_distances: Vec::with_capacity(sequences.len()),
        heads: grid.as_ref().map(|_| Vec::with_capacity(sequences.len())),
    };
    for s in sequences {
        out.annotations.push(s.annotation);
        out.oracle.push(s.oracle);
        out.degraded.push(s.degraded);
        out.sep_distances.push(s.sep);
        if let (Some(heads), Some(h)) = (out.heads.as_mut(), s.head) {
            heads.push(h);
        }
    }
    Ok(out)
}
