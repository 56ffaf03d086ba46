//! Evaluation protocol: temporal IoU, spatio-temporal IoU, all-points AP over
//! confidence-ranked Top-1 predictions, the tAP/stAP threshold suites, Success and
//! Recovery%.
//!
//! Each query has exactly one ground-truth response track (the most recent occurrence)
//! and at most one predicted track. Queries without a prediction still count toward the
//! recall denominator of every AP.

mod ap;
mod report;

pub use ap::average_precision;
pub use report::{score, EvalConfig, MetricReport, QueryEval, ThresholdSuite, REPORT_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{iou3d, Box9};

pub const TEMPORAL_THRESHOLDS: [f64; 4] = [0.25, 0.50, 0.75, 0.95];
pub const SPATIOTEMPORAL_THRESHOLDS: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];
/// stIoU a query needs to count as a success.
pub const SUCCESS_THRESHOLD: f64 = 0.05;
/// Per-frame 3D IoU a frame needs to count as recovered.
pub const RECOVERY_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: usize, end: usize },
    #[error("track {query_id}: interval covers {expected} frames but {actual} boxes were given")]
    BoxCount {
        query_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("track {query_id}: confidence {confidence} outside [0, 1]")]
    Confidence { query_id: String, confidence: f64 },
    #[error("predictions reference unknown queries: {}", .0.join(", "))]
    UnknownQueries(Vec<String>),
    #[error("more than one prediction for queries: {}", .0.join(", "))]
    DuplicateQueries(Vec<String>),
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalInterval {
    start: usize,
    end: usize,
}

impl TemporalInterval {
    pub fn new(start: usize, end: usize) -> Result<Self, MetricsError> {
        if start > end {
            return Err(MetricsError::InvalidInterval { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of frames, counting both ends.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame <= self.end
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn overlap(&self, other: &Self) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if hi >= lo {
            hi - lo + 1
        } else {
            0
        }
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.overlap(other) > 0
    }
}

/// Temporal IoU with inclusive frame counting.
pub fn tiou(pred: &TemporalInterval, gt: &TemporalInterval) -> f64 {
    let inter = pred.overlap(gt);
    let union = pred.len() + gt.len() - inter;
    inter as f64 / union as f64
}

/// One query's response track: an interval with a box on every frame and a confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTrack {
    query_id: String,
    interval: TemporalInterval,
    boxes: Vec<Box9>,
    confidence: f64,
}

impl ResponseTrack {
    /// `boxes[i]` belongs to frame `interval.start() + i`.
    pub fn new(
        query_id: impl Into<String>,
        interval: TemporalInterval,
        boxes: Vec<Box9>,
        confidence: f64,
    ) -> Result<Self, MetricsError> {
        let query_id = query_id.into();
        if boxes.len() != interval.len() {
            return Err(MetricsError::BoxCount {
                query_id,
                expected: interval.len(),
                actual: boxes.len(),
            });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::Confidence { query_id, confidence });
        }
        Ok(Self {
            query_id,
            interval,
            boxes,
            confidence,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn interval(&self) -> TemporalInterval {
        self.interval
    }

    pub fn boxes(&self) -> &[Box9] {
        &self.boxes
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn box_at(&self, frame: usize) -> Option<&Box9> {
        if self.interval.contains(frame) {
            self.boxes.get(frame - self.interval.start)
        } else {
            None
        }
    }

    /// Iterates `(frame, box)` pairs.
    pub fn frames(&self) -> impl Iterator<Item = (usize, &Box9)> {
        self.interval.frames().zip(self.boxes.iter())
    }

    /// Copy restricted to `[start, end]`, or `None` when that leaves no frames.
    pub fn trimmed(&self, start: usize, end: usize) -> Option<Self> {
        let start = start.max(self.interval.start);
        let end = end.min(self.interval.end);
        if start > end {
            return None;
        }
        let boxes = self.boxes[start - self.interval.start..=end - self.interval.start].to_vec();
        Some(Self {
            query_id: self.query_id.clone(),
            interval: TemporalInterval { start, end },
            boxes,
            confidence: self.confidence,
        })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::Confidence {
                query_id: self.query_id,
                confidence,
            });
        }
        self.confidence = confidence;
        Ok(self)
    }
}

/// Per-frame 3D IoU over the ground-truth frames; frames without a predicted box give 0.
pub fn frame_ious(pred: Option<&ResponseTrack>, gt: &ResponseTrack) -> Vec<f64> {
    gt.frames()
        .map(|(t, gt_box)| {
            pred.and_then(|p| p.box_at(t))
                .map_or(0.0, |pred_box| iou3d(pred_box, gt_box))
        })
        .collect()
}

/// Spatio-temporal IoU: mean per-frame 3D IoU over the ground-truth frames.
///
/// Predicted frames outside the ground-truth interval are ignored.
pub fn stiou(pred: &ResponseTrack, gt: &ResponseTrack) -> f64 {
    mean(&frame_ious(Some(pred), gt))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Percentage of queries whose stIoU reaches [`SUCCESS_THRESHOLD`].
pub fn success_rate(preds: &[ResponseTrack], gts: &[ResponseTrack]) -> Result<f64, MetricsError> {
    Ok(score(preds, gts, &EvalConfig::default())?.success)
}

/// Percentage of ground-truth frames, pooled over all queries, recovered at
/// [`RECOVERY_IOU`].
pub fn recovery_rate(preds: &[ResponseTrack], gts: &[ResponseTrack]) -> Result<f64, MetricsError> {
    Ok(score(preds, gts, &EvalConfig::default())?.recovery)
}

/// Per-threshold tAP plus the mean.
pub fn compute_tap(preds: &[ResponseTrack], gts: &[ResponseTrack]) -> Result<ThresholdSuite, MetricsError> {
    Ok(score(preds, gts, &EvalConfig::default())?.tap)
}

/// Per-threshold stAP plus the mean.
pub fn compute_stap(preds: &[ResponseTrack], gts: &[ResponseTrack]) -> Result<ThresholdSuite, MetricsError> {
    Ok(score(preds, gts, &EvalConfig::default())?.stap)
}
