use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnchorError, AnchorGrid, HeadOutput};
use crate::geom::{normalize_angle, Box9};

/// Probability clamp applied before any logarithm.
pub const FOCAL_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Binary focal loss; exactly zero when `p` already equals the target.
///
/// The positive term is weighted by `alpha`, the negative term by `1 - alpha`.
pub fn focal_loss(p: f64, target: bool, params: FocalParams) -> f64 {
    if p == if target { 1.0 } else { 0.0 } {
        return 0.0;
    }
    let p = p.clamp(FOCAL_EPSILON, 1.0 - FOCAL_EPSILON);
    let FocalParams { alpha, gamma } = params;
    if target {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_loss`] with respect to `p`; zero wherever the clamp is active.
pub fn focal_loss_grad(p: f64, target: bool, params: FocalParams) -> f64 {
    if p == if target { 1.0 } else { 0.0 } || p <= FOCAL_EPSILON || p >= 1.0 - FOCAL_EPSILON {
        return 0.0;
    }
    let FocalParams { alpha, gamma } = params;
    if target {
        let q = 1.0 - p;
        alpha * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p)
    } else {
        let q = 1.0 - p;
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q)
    }
}

/// Per-coordinate penalty on regression residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionLoss {
    #[default]
    L1,
    SmoothL1 {
        beta: f64,
    },
}

impl RegressionLoss {
    fn value(&self, x: f64) -> f64 {
        match *self {
            RegressionLoss::L1 => x.abs(),
            RegressionLoss::SmoothL1 { beta } if x.abs() < beta => 0.5 * x * x / beta,
            RegressionLoss::SmoothL1 { beta } => x.abs() - 0.5 * beta,
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            RegressionLoss::SmoothL1 { beta } if x.abs() < beta => x / beta,
            _ if x == 0.0 => 0.0,
            _ => x.signum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossComponent {
    Center,
    Size,
    Rotation,
    Classification,
    Distance,
}

impl LossComponent {
    pub const ALL: [LossComponent; 5] = [
        LossComponent::Center,
        LossComponent::Size,
        LossComponent::Rotation,
        LossComponent::Classification,
        LossComponent::Distance,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub center: f64,
    pub size: f64,
    pub rotation: f64,
    pub classification: f64,
    pub distance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            center: 1.0,
            size: 1.0,
            rotation: 0.1,
            classification: 100.0,
            distance: 0.3,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        center: 0.0,
        size: 0.0,
        rotation: 0.0,
        classification: 0.0,
        distance: 0.0,
    };

    /// Unit weight on one component, zero elsewhere.
    pub fn only(component: LossComponent) -> Self {
        let mut w = Self::ZERO;
        *w.get_mut(component) = 1.0;
        w
    }

    pub fn get(&self, component: LossComponent) -> f64 {
        match component {
            LossComponent::Center => self.center,
            LossComponent::Size => self.size,
            LossComponent::Rotation => self.rotation,
            LossComponent::Classification => self.classification,
            LossComponent::Distance => self.distance,
        }
    }

    pub fn get_mut(&mut self, component: LossComponent) -> &mut f64 {
        match component {
            LossComponent::Center => &mut self.center,
            LossComponent::Size => &mut self.size,
            LossComponent::Rotation => &mut self.rotation,
            LossComponent::Classification => &mut self.classification,
            LossComponent::Distance => &mut self.distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub regression: RegressionLoss,
}

/// Unweighted components, their weighted total and the positive count they were
/// normalized by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub center: f64,
    pub size: f64,
    pub rotation: f64,
    pub classification: f64,
    pub distance: f64,
    pub total: f64,
    pub num_positives: usize,
}

impl LossBreakdown {
    pub fn get(&self, component: LossComponent) -> f64 {
        match component {
            LossComponent::Center => self.center,
            LossComponent::Size => self.size,
            LossComponent::Rotation => self.rotation,
            LossComponent::Classification => self.classification,
            LossComponent::Distance => self.distance,
        }
    }
}

/// Gradient of the weighted total, laid out like the head: one entry per presence value
/// and one 9-vector per listed regression entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub presence: Vec<Vec<f64>>,
    pub regression: Vec<BTreeMap<usize, [f64; 9]>>,
}

impl HeadGradient {
    /// Same order as [`HeadOutput::to_params`].
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (p, r) in self.presence.iter().zip(&self.regression) {
            out.extend_from_slice(p);
            for g in r.values() {
                out.extend_from_slice(g);
            }
        }
        out
    }

    /// Chain rule through the logistic activation: gradient with respect to presence logits.
    pub fn presence_logit_gradient(&self, head: &HeadOutput) -> Vec<Vec<f64>> {
        self.presence
            .iter()
            .zip(head.frames())
            .map(|(g, f)| g.iter().zip(&f.presence).map(|(g, p)| g * p * (1.0 - p)).collect())
            .collect()
    }
}

/// Unnormalized per-frame sums.
#[derive(Default)]
struct FrameSums {
    center: f64,
    size: f64,
    rotation: f64,
    classification: f64,
    distance: f64,
    positives: usize,
    presence_grad: Vec<f64>,
    // raw derivative pieces per listed entry, before normalization
    center_grad: BTreeMap<usize, [f64; 3]>,
    size_grad: BTreeMap<usize, [f64; 3]>,
    rotation_grad: BTreeMap<usize, [f64; 3]>,
    distance_grad: BTreeMap<usize, [f64; 3]>,
}

fn frame_sums(
    grid: &AnchorGrid,
    frame: &super::FrameHead,
    target: Option<&Box9>,
    config: &LossConfig,
    with_grad: bool,
) -> FrameSums {
    let positives = target.map_or_else(Vec::new, |gt| grid.assign_positives(&gt.center()));
    let mut is_positive = vec![false; frame.presence.len()];
    for &n in &positives {
        is_positive[n] = true;
    }
    let mut sums = FrameSums {
        positives: positives.len(),
        ..FrameSums::default()
    };
    for (n, &p) in frame.presence.iter().enumerate() {
        sums.classification += focal_loss(p, is_positive[n], config.focal);
    }
    if with_grad {
        sums.presence_grad = frame
            .presence
            .iter()
            .zip(&is_positive)
            .map(|(&p, &t)| focal_loss_grad(p, t, config.focal))
            .collect();
    }
    let Some(gt) = target else {
        return sums;
    };
    let gt_center = gt.center();
    let gt_size = gt.size();
    let gt_rot = gt.rotation();
    let rl = config.regression;
    for &n in &positives {
        let r = frame.regression_at(n);
        let anchor = grid.center(n);
        let (mut gc, mut gs, mut gr) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        for k in 0..3 {
            let dc = r.offset[k] - (gt_center[k] - anchor[k]);
            let ds = r.size[k] - gt_size[k];
            let dr = normalize_angle(r.rotation[k] - gt_rot[k]);
            sums.center += rl.value(dc);
            sums.size += rl.value(ds);
            sums.rotation += dr.abs();
            gc[k] = rl.derivative(dc);
            gs[k] = rl.derivative(ds);
            gr[k] = if dr == 0.0 { 0.0 } else { dr.signum() };
        }
        // residual against the encoded target, so an exact encoding gives exactly zero
        let v = Vector3::from(r.offset) - (gt_center - anchor);
        let dist = v.norm();
        sums.distance += dist;
        if with_grad && frame.regression.contains_key(&n) {
            sums.center_grad.insert(n, gc);
            sums.size_grad.insert(n, gs);
            sums.rotation_grad.insert(n, gr);
            let gd = if dist > 0.0 { v / dist } else { Vector3::zeros() };
            sums.distance_grad.insert(n, [gd.x, gd.y, gd.z]);
        }
    }
    sums
}

fn check_inputs(grid: &AnchorGrid, head: &HeadOutput, targets: &[Option<Box9>]) -> Result<(), AnchorError> {
    if head.len() != targets.len() {
        return Err(AnchorError::FrameCount {
            head: head.len(),
            targets: targets.len(),
        });
    }
    if head.num_anchors() != grid.len() {
        return Err(AnchorError::AnchorCount {
            frame: 0,
            expected: grid.len(),
            actual: head.num_anchors(),
        });
    }
    for (t, f) in head.frames().iter().enumerate() {
        if f.presence.len() != grid.len() {
            return Err(AnchorError::AnchorCount {
                frame: t,
                expected: grid.len(),
                actual: f.presence.len(),
            });
        }
    }
    Ok(())
}

fn evaluate(
    grid: &AnchorGrid,
    head: &HeadOutput,
    targets: &[Option<Box9>],
    config: &LossConfig,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<HeadGradient>), AnchorError> {
    check_inputs(grid, head, targets)?;
    let per_frame: Vec<FrameSums> = head
        .frames()
        .par_iter()
        .zip(targets.par_iter())
        .map(|(f, t)| frame_sums(grid, f, t.as_ref(), config, with_grad))
        .collect();

    // sums run in frame order so the result does not depend on scheduling
    let positives: usize = per_frame.iter().map(|s| s.positives).sum();
    let cls_count = (head.len() * grid.len()).max(1) as f64;
    let coord_norm = if positives > 0 {
        1.0 / (3 * positives) as f64
    } else {
        0.0
    };
    let pos_norm = if positives > 0 { 1.0 / positives as f64 } else { 0.0 };
    let sum = |f: fn(&FrameSums) -> f64| per_frame.iter().map(f).sum::<f64>();
    let center = sum(|s| s.center) * coord_norm;
    let size = sum(|s| s.size) * coord_norm;
    let rotation = sum(|s| s.rotation) * coord_norm;
    let distance = sum(|s| s.distance) * pos_norm;
    let classification = if head.is_empty() {
        0.0
    } else {
        sum(|s| s.classification) / cls_count
    };
    let w = config.weights;
    let total = w.center * center
        + w.size * size
        + w.rotation * rotation
        + w.classification * classification
        + w.distance * distance;
    let breakdown = LossBreakdown {
        center,
        size,
        rotation,
        classification,
        distance,
        total,
        num_positives: positives,
    };
    if !with_grad {
        return Ok((breakdown, None));
    }

    let mut presence = Vec::with_capacity(head.len());
    let mut regression = Vec::with_capacity(head.len());
    for (s, f) in per_frame.iter().zip(head.frames()) {
        presence.push(
            s.presence_grad
                .iter()
                .map(|g| w.classification * g / cls_count)
                .collect(),
        );
        let entries = f
            .regression
            .keys()
            .map(|&n| {
                let mut g = [0.0; 9];
                if let Some(gc) = s.center_grad.get(&n) {
                    let gd = s.distance_grad[&n];
                    let gs = s.size_grad[&n];
                    let gr = s.rotation_grad[&n];
                    for k in 0..3 {
                        g[k] = w.center * coord_norm * gc[k] + w.distance * pos_norm * gd[k];
                        g[3 + k] = w.size * coord_norm * gs[k];
                        g[6 + k] = w.rotation * coord_norm * gr[k];
                    }
                }
                (n, g)
            })
            .collect();
        regression.push(entries);
    }
    Ok((breakdown, Some(HeadGradient { presence, regression })))
}

/// Training loss of a head output against per-frame ground truth (`None` where the object
/// is not visible).
///
/// Regression terms average over every positive of every frame; L_c, L_s and L_r further
/// average over the three coordinates. Classification averages the focal loss over all
/// frames and anchors. With no positives in the clip the regression terms are zero.
pub fn loss(
    grid: &AnchorGrid,
    head: &HeadOutput,
    targets: &[Option<Box9>],
    config: &LossConfig,
) -> Result<LossBreakdown, AnchorError> {
    evaluate(grid, head, targets, config, false).map(|(b, _)| b)
}

/// [`loss`] together with the analytic gradient of the weighted total.
///
/// Non-differentiable points take the zero subgradient.
pub fn loss_with_gradient(
    grid: &AnchorGrid,
    head: &HeadOutput,
    targets: &[Option<Box9>],
    config: &LossConfig,
) -> Result<(LossBreakdown, HeadGradient), AnchorError> {
    evaluate(grid, head, targets, config, true).map(|(b, g)| (b, g.expect("gradient requested")))
}
