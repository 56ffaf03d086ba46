use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_record, push_header, split_document, DataError, Header, Issue, HEAD_KIND};
use crate::anchor::{FrameHead, HeadOutput, Regression};
use crate::geom::Workspace;

/// Presence for one frame, either one value per anchor or `[anchor, value]` pairs with
/// every other anchor at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresenceEntries {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFrame {
    pub frame: usize,
    pub presence: PresenceEntries,
    /// `[anchor, [dx, dy, dz, l, w, h, yaw, pitch, roll]]`; unlisted anchors regress the
    /// unit box at the anchor.
    #[serde(default)]
    pub regression: Vec<(usize, [f64; 9])>,
}

/// Head output for one sequence; frames that are not listed have zero presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub sequence_id: String,
    pub frames: usize,
    pub active: Vec<HeadFrame>,
}

impl HeadRecord {
    /// Sparse record keeping nonzero presence values and every regression entry.
    pub fn from_head_output(sequence_id: &str, head: &HeadOutput) -> Self {
        let active = head
            .frames()
            .iter()
            .enumerate()
            .filter_map(|(t, f)| {
                let presence: Vec<(usize, f64)> = f
                    .presence
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(n, p)| (n, *p))
                    .collect();
                if presence.is_empty() && f.regression.is_empty() {
                    return None;
                }
                Some(HeadFrame {
                    frame: t,
                    presence: PresenceEntries::Sparse(presence),
                    regression: f.regression.iter().map(|(n, r)| (*n, r.to_array())).collect(),
                })
            })
            .collect();
        Self {
            sequence_id: sequence_id.to_owned(),
            frames: head.len(),
            active,
        }
    }

    /// Dense head output over all frames; problems are returned as messages.
    pub fn to_head_output(&self, num_anchors: usize) -> Result<HeadOutput, Vec<String>> {
        let mut problems = Vec::new();
        let mut frames = vec![FrameHead::empty(num_anchors); self.frames];
        let mut seen = BTreeSet::new();
        for hf in &self.active {
            if hf.frame >= self.frames {
                problems.push(format!("frame {} beyond the {} frames", hf.frame, self.frames));
                continue;
            }
            if !seen.insert(hf.frame) {
                problems.push(format!("frame {} listed twice", hf.frame));
                continue;
            }
            let target = &mut frames[hf.frame];
            match &hf.presence {
                PresenceEntries::Dense(values) if values.is_empty() => {}
                PresenceEntries::Dense(values) if values.len() == num_anchors => {
                    target.presence.clone_from(values);
                }
                PresenceEntries::Dense(values) => problems.push(format!(
                    "frame {}: {} presence values for {num_anchors} anchors",
                    hf.frame,
                    values.len()
                )),
                PresenceEntries::Sparse(pairs) => {
                    for &(n, p) in pairs {
                        match target.presence.get_mut(n) {
                            Some(slot) => *slot = p,
                            None => problems.push(format!("frame {}: anchor {n} out of range", hf.frame)),
                        }
                    }
                }
            }
            let mut regression = BTreeMap::new();
            for &(n, r) in &hf.regression {
                if regression.insert(n, Regression::from_array(r)).is_some() {
                    problems.push(format!("frame {}: anchor {n} regressed twice", hf.frame));
                }
            }
            target.regression = regression;
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        HeadOutput::new(num_anchors, frames).map_err(|e| vec![e.to_string()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadDocument {
    pub header: Option<Header>,
    pub records: Vec<HeadRecord>,
}

impl HeadDocument {
    /// Header recording the anchor grid the tensors were produced for.
    pub fn grid_header(workspace: &Workspace, counts: [usize; 3], extra: Option<Value>) -> Header {
        let mut config = json!({ "grid": { "workspace": workspace, "counts": counts } });
        if let Some(extra) = extra {
            config["generator"] = extra;
        }
        Header::new(HEAD_KIND, Some(config))
    }

    /// Grid recorded in the header, if any.
    pub fn grid(&self) -> Option<(Workspace, [usize; 3])> {
        let grid = self.header.as_ref()?.config.as_ref()?.get("grid")?;
        let workspace = serde_json::from_value(grid.get("workspace")?.clone()).ok()?;
        let counts = serde_json::from_value(grid.get("counts")?.clone()).ok()?;
        Some((workspace, counts))
    }
}

pub fn parse_head_document(text: &str) -> Result<HeadDocument, DataError> {
    let (header, lines) = split_document(text, HEAD_KIND)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut seen = BTreeSet::new();
    let mut issues = Vec::new();
    for (line, text) in lines {
        let r: HeadRecord = parse_record(line, text)?;
        if !seen.insert(r.sequence_id.clone()) {
            issues.push(Issue {
                line,
                id: Some(r.sequence_id.clone()),
                message: "duplicate sequence_id".into(),
            });
        }
        records.push(r);
    }
    if !issues.is_empty() {
        return Err(DataError::Validation(issues));
    }
    Ok(HeadDocument { header, records })
}

pub fn serialize_head_document(doc: &HeadDocument) -> String {
    let mut out = String::new();
    push_header(&mut out, doc.header.as_ref());
    for r in &doc.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
