//! Line-delimited JSON documents for annotations and predictions, dataset statistics and
//! the synthetic sequence generator.
//!
//! Every document is one JSON object per line. An optional first line
//! `{"header": {"kind": ..., "version": 1, ...}}` names the document kind and may echo the
//! configuration that produced it. Boxes are `[x, y, z, l, w, h, yaw, pitch, roll]` in
//! meters and radians.

mod head_doc;
mod stats;
mod synth;

pub use head_doc::{
    parse_head_document, serialize_head_document, HeadDocument, HeadFrame, HeadRecord, PresenceEntries,
};
pub use stats::{compute_stats, Histogram, SplitStats, DEFAULT_BINS};
pub use synth::{
    generate_synthetic, sequence_seed, splitmix64, ConfidenceModel, GeneratedData, NoiseConfig, SynthConfig,
};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geom::Box9;
use crate::metrics::{ResponseTrack, TemporalInterval};

pub const FORMAT_VERSION: u32 = 1;
pub const ANNOTATIONS_KIND: &str = "annotations";
pub const PREDICTIONS_KIND: &str = "predictions";
pub const HEAD_KIND: &str = "head";

/// A problem found while validating a document, located by 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{}", format_issues(.0))]
    Validation(Vec<Issue>),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no annotations to summarize")]
    Empty,
}

fn format_issues(issues: &[Issue]) -> String {
    let lines: Vec<String> = issues.iter().map(Issue::to_string).collect();
    format!("{} validation error(s):\n{}", issues.len(), lines.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

impl Header {
    pub fn new(kind: &str, config: Option<Value>) -> Self {
        Self {
            kind: kind.to_owned(),
            version: FORMAT_VERSION,
            config,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

/// Optional header plus the remaining non-blank lines with their 1-based numbers.
pub(crate) type SplitDocument<'a> = (Option<Header>, Vec<(usize, &'a str)>);

/// Non-blank lines with their 1-based numbers, the header split off when present.
pub(crate) fn split_document<'a>(text: &'a str, kind: &str) -> Result<SplitDocument<'a>, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let mut header = None;
    if let Some(&(line, first)) = lines.peek() {
        let value: Value = serde_json::from_str(first).map_err(|e| DataError::Syntax {
            line,
            message: e.to_string(),
        })?;
        if value.get("header").is_some() {
            let h: HeaderLine = serde_json::from_value(value).map_err(|e| DataError::Syntax {
                line,
                message: format!("bad header: {e}"),
            })?;
            if h.header.kind != kind {
                return Err(DataError::Syntax {
                    line,
                    message: format!("expected a {kind} document, found {}", h.header.kind),
                });
            }
            if h.header.version != FORMAT_VERSION {
                return Err(DataError::Syntax {
                    line,
                    message: format!("unsupported version {}", h.header.version),
                });
            }
            header = Some(h.header);
            lines.next();
        }
    }
    Ok((header, lines.collect()))
}

/// Reads only the header line of a document, if any.
pub fn read_header(text: &str) -> Option<Header> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    serde_json::from_str::<HeaderLine>(first).ok().map(|h| h.header)
}

fn push_header(out: &mut String, header: Option<&Header>) {
    if let Some(h) = header {
        out.push_str(&serde_json::to_string(&HeaderLine { header: h.clone() }).expect("header serializes"));
        out.push('\n');
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub rgb: bool,
    pub point_cloud: bool,
    pub depth: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Self {
            rgb: true,
            point_cloud: true,
            depth: true,
        }
    }
}

/// The visual query: where the template comes from and its box in the template frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub source: String,
    pub box9: Box9,
}

/// A contiguous run of frames where the object is visible, with one box per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    interval: TemporalInterval,
    boxes: Vec<Box9>,
}

impl Segment {
    pub fn new(interval: TemporalInterval, boxes: Vec<Box9>) -> Result<Self, String> {
        if boxes.len() != interval.len() {
            return Err(format!(
                "segment [{}, {}] has {} boxes for {} frames",
                interval.start(),
                interval.end(),
                boxes.len(),
                interval.len()
            ));
        }
        Ok(Self { interval, boxes })
    }

    pub fn interval(&self) -> TemporalInterval {
        self.interval
    }

    pub fn boxes(&self) -> &[Box9] {
        &self.boxes
    }
}

/// Ground truth for one sequence. The query is issued at the last frame; the answer is
/// the last (most recent) segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnnotation {
    sequence_id: String,
    fps: f64,
    frames: usize,
    query: Query,
    segments: Vec<Segment>,
    most_recent_frame: usize,
    modalities: Modalities,
}

impl SequenceAnnotation {
    /// Checks every structural rule and returns all violations at once.
    pub fn new(
        sequence_id: impl Into<String>,
        fps: f64,
        frames: usize,
        query: Query,
        segments: Vec<Segment>,
        most_recent_frame: usize,
        modalities: Modalities,
    ) -> Result<Self, Vec<String>> {
        let mut problems = Vec::new();
        if !(fps > 0.0 && fps.is_finite()) {
            problems.push(format!("fps {fps} must be positive"));
        }
        if frames == 0 {
            problems.push("sequence has no frames".to_owned());
        }
        if segments.is_empty() {
            problems.push("no response segments".to_owned());
        }
        for (k, s) in segments.iter().enumerate() {
            if s.interval.end() >= frames {
                problems.push(format!(
                    "segment {k} ends at frame {} beyond the last frame {}",
                    s.interval.end(),
                    frames.saturating_sub(1)
                ));
            }
            if k > 0 {
                let prev = segments[k - 1].interval;
                if s.interval.overlaps(&prev) {
                    problems.push(format!(
                        "segments [{}, {}] and [{}, {}] overlap",
                        prev.start(),
                        prev.end(),
                        s.interval.start(),
                        s.interval.end()
                    ));
                } else if s.interval.start() < prev.start() {
                    problems.push(format!("segment {k} starts before segment {}", k - 1));
                }
            }
        }
        if let Some(last) = segments.last() {
            if last.interval.end() != most_recent_frame {
                problems.push(format!(
                    "most_recent_frame {most_recent_frame} differs from the last segment end {}",
                    last.interval.end()
                ));
            }
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            fps,
            frames,
            query,
            segments,
            most_recent_frame,
            modalities,
        })
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn most_recent_frame(&self) -> usize {
        self.most_recent_frame
    }

    pub fn modalities(&self) -> Modalities {
        self.modalities
    }

    /// The most recent segment as the query's ground-truth response track.
    pub fn response_track(&self) -> ResponseTrack {
        let last = self.segments.last().expect("validated non-empty");
        ResponseTrack::new(self.sequence_id.clone(), last.interval, last.boxes.clone(), 1.0)
            .expect("segment boxes match its interval")
    }
}

/// Look-back from the query, issued at the last frame, to the end of the most recent
/// segment: `(frames - 1) - most_recent_frame`.
///
/// With 300 frames (indices 0..=299) and the 250th frame (index 249) as the last visible
/// one, the distance is 50.
pub fn sep_distance(a: &SequenceAnnotation) -> usize {
    a.frames - 1 - a.most_recent_frame
}

pub fn response_tracks(annotations: &[SequenceAnnotation]) -> Vec<ResponseTrack> {
    annotations.iter().map(SequenceAnnotation::response_track).collect()
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    source: String,
    box9: [f64; 9],
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    start: usize,
    end: usize,
    boxes: Vec<[f64; 9]>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    sequence_id: String,
    fps: f64,
    frames: usize,
    query: QueryRecord,
    segments: Vec<SegmentRecord>,
    most_recent_frame: usize,
    #[serde(default)]
    modalities: Modalities,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    query_id: String,
    confidence: f64,
    start: usize,
    end: usize,
    boxes: Vec<[f64; 9]>,
}

fn parse_record<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T, DataError> {
    serde_json::from_str(text).map_err(|e| DataError::Syntax {
        line,
        message: e.to_string(),
    })
}

fn parse_boxes(raw: &[[f64; 9]], what: &str, problems: &mut Vec<String>) -> Vec<Box9> {
    raw.iter()
        .enumerate()
        .filter_map(|(i, b)| match Box9::from_array(*b) {
            Ok(b) => Some(b),
            Err(e) => {
                problems.push(format!("{what} box {i}: {e}"));
                None
            }
        })
        .collect()
}

fn annotation_from_record(r: AnnotationRecord) -> Result<SequenceAnnotation, Vec<String>> {
    let mut problems = Vec::new();
    let query_box = Box9::from_array(r.query.box9).map_err(|e| problems.push(format!("query box: {e}")));
    let mut segments = Vec::new();
    for (k, s) in r.segments.iter().enumerate() {
        let what = format!("segment {k}");
        let boxes = parse_boxes(&s.boxes, &what, &mut problems);
        if boxes.len() != s.boxes.len() {
            continue;
        }
        match TemporalInterval::new(s.start, s.end) {
            Ok(interval) => match Segment::new(interval, boxes) {
                Ok(seg) => segments.push(seg),
                Err(e) => problems.push(e),
            },
            Err(e) => problems.push(format!("{what}: {e}")),
        }
    }
    let (Ok(box9), true) = (query_box, problems.is_empty()) else {
        return Err(problems);
    };
    let query = Query {
        source: r.query.source,
        box9,
    };
    SequenceAnnotation::new(
        r.sequence_id,
        r.fps,
        r.frames,
        query,
        segments,
        r.most_recent_frame,
        r.modalities,
    )
}

/// Parses and validates an annotations document, reporting every invalid record.
pub fn parse_annotations(text: &str) -> Result<Vec<SequenceAnnotation>, DataError> {
    let (_, lines) = split_document(text, ANNOTATIONS_KIND)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, text) in lines {
        let record: AnnotationRecord = parse_record(line, text)?;
        let id = record.sequence_id.clone();
        if !seen.insert(id.clone()) {
            issues.push(Issue {
                line,
                id: Some(id),
                message: "duplicate sequence_id".into(),
            });
            continue;
        }
        match annotation_from_record(record) {
            Ok(a) => out.push(a),
            Err(problems) => issues.extend(problems.into_iter().map(|message| Issue {
                line,
                id: Some(id.clone()),
                message,
            })),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(DataError::Validation(issues))
    }
}

pub fn serialize_annotations(annotations: &[SequenceAnnotation], header: Option<&Header>) -> String {
    let mut out = String::new();
    push_header(&mut out, header);
    for a in annotations {
        let record = AnnotationRecord {
            sequence_id: a.sequence_id.clone(),
            fps: a.fps,
            frames: a.frames,
            query: QueryRecord {
                source: a.query.source.clone(),
                box9: a.query.box9.to_array(),
            },
            segments: a
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    start: s.interval.start(),
                    end: s.interval.end(),
                    boxes: s.boxes.iter().map(Box9::to_array).collect(),
                })
                .collect(),
            most_recent_frame: a.most_recent_frame,
            modalities: a.modalities,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses and validates a predictions document: one Top-1 track per query.
pub fn parse_predictions(text: &str) -> Result<Vec<ResponseTrack>, DataError> {
    let (_, lines) = split_document(text, PREDICTIONS_KIND)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, text) in lines {
        let r: PredictionRecord = parse_record(line, text)?;
        let id = r.query_id.clone();
        let issue = |message: String| Issue {
            line,
            id: Some(id.clone()),
            message,
        };
        if !seen.insert(id.clone()) {
            issues.push(issue("duplicate query_id; only one track per query is allowed".into()));
            continue;
        }
        let mut problems = Vec::new();
        let boxes = parse_boxes(&r.boxes, "track", &mut problems);
        if !problems.is_empty() {
            issues.extend(problems.into_iter().map(issue));
            continue;
        }
        let track = TemporalInterval::new(r.start, r.end)
            .and_then(|iv| ResponseTrack::new(r.query_id, iv, boxes, r.confidence));
        match track {
            Ok(t) => out.push(t),
            Err(e) => issues.push(issue(e.to_string())),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(DataError::Validation(issues))
    }
}

pub fn serialize_predictions(tracks: &[ResponseTrack], header: Option<&Header>) -> String {
    let mut out = String::new();
    push_header(&mut out, header);
    for t in tracks {
        let record = PredictionRecord {
            query_id: t.query_id().to_owned(),
            confidence: t.confidence(),
            start: t.interval().start(),
            end: t.interval().end(),
            boxes: t.boxes().iter().map(Box9::to_array).collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}
