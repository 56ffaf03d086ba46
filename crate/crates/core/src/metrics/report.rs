use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    average_precision, frame_ious, mean, tiou, MetricsError, ResponseTrack, RECOVERY_IOU, SPATIOTEMPORAL_THRESHOLDS,
    SUCCESS_THRESHOLD, TEMPORAL_THRESHOLDS,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub temporal_thresholds: Vec<f64>,
    pub spatiotemporal_thresholds: Vec<f64>,
    pub success_threshold: f64,
    pub recovery_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temporal_thresholds: TEMPORAL_THRESHOLDS.to_vec(),
            spatiotemporal_thresholds: SPATIOTEMPORAL_THRESHOLDS.to_vec(),
            success_threshold: SUCCESS_THRESHOLD,
            recovery_iou: RECOVERY_IOU,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        self.temporal_thresholds
            .iter()
            .chain(&self.spatiotemporal_thresholds)
            .chain([&self.success_threshold, &self.recovery_iou])
            .find(|t| !(**t > 0.0 && **t <= 1.0))
            .map_or(Ok(()), |t| Err(MetricsError::Threshold(*t)))
    }
}

/// AP at each threshold and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSuite {
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
    pub mean: f64,
}

impl ThresholdSuite {
    /// AP at `threshold`, if it is part of the suite.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| *t == threshold).map(|i| self.ap[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub predicted: bool,
    pub confidence: Option<f64>,
    pub tiou: f64,
    pub stiou: f64,
    pub recovered_frames: usize,
    pub gt_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub num_queries: usize,
    pub num_predictions: usize,
    pub tap: ThresholdSuite,
    pub stap: ThresholdSuite,
    /// Percent of queries with stIoU at or above `success_threshold`.
    pub success: f64,
    pub success_threshold: f64,
    /// Percent of ground-truth frames recovered, pooled over all queries.
    pub recovery: f64,
    /// Per-query recovery percentages averaged over queries.
    pub recovery_macro: f64,
    pub recovery_iou: f64,
    pub per_query: Vec<QueryEval>,
}

fn evaluate_query(pred: Option<&ResponseTrack>, gt: &ResponseTrack, recovery_iou: f64) -> QueryEval {
    let ious = frame_ious(pred, gt);
    QueryEval {
        query_id: gt.query_id().to_string(),
        predicted: pred.is_some(),
        confidence: pred.map(|p| p.confidence()),
        tiou: pred.map_or(0.0, |p| tiou(&p.interval(), &gt.interval())),
        stiou: mean(&ious),
        recovered_frames: ious.iter().filter(|v| **v >= recovery_iou).count(),
        gt_frames: ious.len(),
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id.to_string());
        }
    }
    dup.into_iter().collect()
}

fn suite(evals: &[QueryEval], thresholds: &[f64], value: impl Fn(&QueryEval) -> f64) -> ThresholdSuite {
    let ap: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let ranked: Vec<(f64, bool)> = evals
                .iter()
                .filter_map(|e| e.confidence.map(|c| (c, value(e) >= t)))
                .collect();
            average_precision(&ranked, evals.len())
        })
        .collect();
    ThresholdSuite {
        thresholds: thresholds.to_vec(),
        mean: mean(&ap),
        ap,
    }
}

/// Scores Top-1 predictions against ground-truth tracks (one per query).
///
/// Queries are processed in query-id order so the report does not depend on input order
/// or on how many worker threads evaluate the per-query terms.
pub fn score(
    preds: &[ResponseTrack],
    gts: &[ResponseTrack],
    config: &EvalConfig,
) -> Result<MetricReport, MetricsError> {
    config.validate()?;
    let dup_gt = duplicates(gts.iter().map(|g| g.query_id()));
    if !dup_gt.is_empty() {
        return Err(MetricsError::DuplicateQueries(dup_gt));
    }
    let dup_pred = duplicates(preds.iter().map(|p| p.query_id()));
    if !dup_pred.is_empty() {
        return Err(MetricsError::DuplicateQueries(dup_pred));
    }
    let gt_by_id: BTreeMap<&str, &ResponseTrack> = gts.iter().map(|g| (g.query_id(), g)).collect();
    let mut unknown: Vec<String> = preds
        .iter()
        .filter(|p| !gt_by_id.contains_key(p.query_id()))
        .map(|p| p.query_id().to_string())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(MetricsError::UnknownQueries(unknown));
    }
    let pred_by_id: BTreeMap<&str, &ResponseTrack> = preds.iter().map(|p| (p.query_id(), p)).collect();

    let ordered: Vec<&ResponseTrack> = gt_by_id.values().copied().collect();
    let evals: Vec<QueryEval> = ordered
        .par_iter()
        .map(|gt| evaluate_query(pred_by_id.get(gt.query_id()).copied(), gt, config.recovery_iou))
        .collect();

    let tap = suite(&evals, &config.temporal_thresholds, |e| e.tiou);
    let stap = suite(&evals, &config.spatiotemporal_thresholds, |e| e.stiou);
    let num_queries = evals.len();
    let percent = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let successes = evals.iter().filter(|e| e.stiou >= config.success_threshold).count();
    let recovered: usize = evals.iter().map(|e| e.recovered_frames).sum();
    let gt_frames: usize = evals.iter().map(|e| e.gt_frames).sum();
    let per_query_recovery: Vec<f64> = evals.iter().map(|e| percent(e.recovered_frames, e.gt_frames)).collect();

    Ok(MetricReport {
        version: REPORT_VERSION,
        num_queries,
        num_predictions: preds.len(),
        tap,
        stap,
        success: percent(successes, num_queries),
        success_threshold: config.success_threshold,
        recovery: percent(recovered, gt_frames),
        recovery_macro: mean(&per_query_recovery),
        recovery_iou: config.recovery_iou,
        per_query: evals,
    })
}
