use serde::{Deserialize, Serialize};

use super::{sep_distance, DataError, SequenceAnnotation};
use crate::geom::Workspace;

pub const DEFAULT_BINS: usize = 20;

/// Fixed-width histogram. `edges` has one more entry than `counts`; every bin is
/// half-open except the last, which also holds the upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins span `[min, max]` of the samples; a constant sample set gets the single bin
    /// `[v, v + 1]`.
    pub fn from_samples(name: &str, samples: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if samples.is_empty() {
            return Self {
                name: name.to_owned(),
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        if hi == lo {
            return Self {
                name: name.to_owned(),
                edges: vec![lo, lo + 1.0],
                counts: vec![samples.len() as u64],
            };
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
        edges.push(hi);
        let mut counts = vec![0u64; bins];
        for x in samples {
            let k = (((x - lo) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self {
            name: name.to_owned(),
            edges,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        Some((*self.edges.first()?, *self.edges.last()?))
    }

    /// Range covered by non-empty bins.
    pub fn occupied_range(&self) -> Option<(f64, f64)> {
        let first = self.counts.iter().position(|c| *c > 0)?;
        let last = self.counts.iter().rposition(|c| *c > 0)?;
        Some((self.edges[first], self.edges[last + 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sequences: usize,
    pub boxes: usize,
    /// Box centers falling outside the workspace bounds.
    pub centers_outside_workspace: usize,
    pub workspace: Workspace,
    pub histograms: Vec<Histogram>,
}

impl SplitStats {
    pub fn histogram(&self, name: &str) -> Option<&Histogram> {
        self.histograms.iter().find(|h| h.name == name)
    }
}

/// Histograms of separation distance, segment bounds, track lengths, box sizes, angles in
/// degrees and center coordinates over every annotated box.
pub fn compute_stats(
    annotations: &[SequenceAnnotation],
    workspace: &Workspace,
    bins: usize,
) -> Result<SplitStats, DataError> {
    if annotations.is_empty() {
        return Err(DataError::Empty);
    }
    let mut sep = Vec::new();
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut lengths = Vec::new();
    let mut boxes = Vec::new();
    for a in annotations {
        sep.push(sep_distance(a) as f64);
        lengths.push(a.frames() as f64);
        for s in a.segments() {
            starts.push(s.interval().start() as f64);
            ends.push(s.interval().end() as f64);
            boxes.extend_from_slice(s.boxes());
        }
    }
    let column = |f: &dyn Fn(&crate::geom::Box9) -> f64| boxes.iter().map(f).collect::<Vec<f64>>();
    let outside = boxes.iter().filter(|b| !workspace.contains(&b.center())).count();
    let named: Vec<(&str, Vec<f64>)> = vec![
        ("sep_distance", sep),
        ("segment_start", starts),
        ("segment_end", ends),
        ("sequence_frames", lengths),
        ("size_l", column(&|b| b.size().x)),
        ("size_w", column(&|b| b.size().y)),
        ("size_h", column(&|b| b.size().z)),
        ("yaw_deg", column(&|b| b.yaw().to_degrees())),
        ("pitch_deg", column(&|b| b.pitch().to_degrees())),
        ("roll_deg", column(&|b| b.roll().to_degrees())),
        ("center_x", column(&|b| b.center().x)),
        ("center_y", column(&|b| b.center().y)),
        ("center_z", column(&|b| b.center().z)),
    ];
    Ok(SplitStats {
        sequences: annotations.len(),
        boxes: boxes.len(),
        centers_outside_workspace: outside,
        workspace: *workspace,
        histograms: named
            .into_iter()
            .map(|(name, samples)| Histogram::from_samples(name, &samples, bins))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_mass_and_edges() {
        let h = Histogram::from_samples("x", &[0.0, 1.0, 2.0, 3.0, 4.0], 4);
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn constant_samples_single_bin() {
        let h = Histogram::from_samples("x", &[2.5; 7], 10);
        assert_eq!(h.counts, vec![7]);
        assert_eq!(h.support(), Some((2.5, 3.5)));
    }

    #[test]
    fn empty_set_is_an_error() {
        assert_eq!(compute_stats(&[], &Workspace::default(), 10), Err(DataError::Empty));
    }
}
