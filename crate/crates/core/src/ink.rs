//! Ink data types and the `.ink.json` document format.
//!
//! A document is a single UTF-8 JSON object:
//!
//! ```text
//! { "points": [[x, y, t, "d" | "u"], ...], "label": "...", "rate": 100 }
//! ```
//!
//! `label` and `rate` are optional. `t` is in seconds and must be strictly
//! increasing. A `"u"` point marks a pen lift between two pen-down strokes.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// File extension used for ink documents.
pub const INK_EXTENSION: &str = ".ink.json";

/// Sampling rate assumed when a trace carries no rate hint and no usable timing.
pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pen {
    #[serde(rename = "d")]
    Down,
    #[serde(rename = "u")]
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InkPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub pen: Pen,
}

impl InkPoint {
    pub fn down(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t, pen: Pen::Down }
    }

    pub fn up(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t, pen: Pen::Up }
    }

    pub fn is_down(&self) -> bool {
        self.pen == Pen::Down
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InkError {
    #[error("malformed ink document: {0}")]
    Malformed(String),
    #[error("timestamps not strictly increasing at point {index}")]
    NonMonotoneTime { index: usize },
    #[error("non-finite value at point {index}")]
    NonFinite { index: usize },
    #[error("trace has {found} points, at least 2 are required")]
    TooFewPoints { found: usize },
    #[error("trace has {found} pen-down points, at least 2 are required")]
    TooFewPenDown { found: usize },
    #[error("two consecutive pen-up markers at point {index}")]
    ConsecutivePenUp { index: usize },
    #[error("sample rate must be positive, got {0}")]
    BadRate(f64),
}

impl InkError {
    /// Whether the document was well formed but describes too little ink to
    /// process (as opposed to being invalid).
    pub fn is_degenerate(&self) -> bool {
        matches!(self, InkError::TooFewPoints { .. } | InkError::TooFewPenDown { .. })
    }
}

/// A validated, timestamped pen trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InkTrace {
    points: Vec<InkPoint>,
    pub label: Option<String>,
    pub sample_rate_hint: Option<f64>,
}

impl InkTrace {
    pub fn new(
        points: Vec<InkPoint>,
        label: Option<String>,
        sample_rate_hint: Option<f64>,
    ) -> Result<Self, InkError> {
        validate_points(&points)?;
        if let Some(rate) = sample_rate_hint {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(InkError::BadRate(rate));
            }
        }
        Ok(Self { points, label, sample_rate_hint })
    }

    pub fn points(&self) -> &[InkPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<InkPoint> {
        self.points
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Index ranges of the maximal pen-down runs, in time order.
    pub fn strokes(&self) -> Vec<Range<usize>> {
        pen_down_runs(&self.points)
    }

    pub fn pen_up_count(&self) -> usize {
        self.points.iter().filter(|p| !p.is_down()).count()
    }

    /// Adds `dt` to every timestamp.
    pub fn shifted_in_time(&self, dt: f64) -> Self {
        let points = self.points.iter().map(|p| InkPoint { t: p.t + dt, ..*p }).collect();
        Self { points, ..self.clone() }
    }

    /// Applies `f` to every coordinate pair.
    pub fn map_xy(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = f(p.x, p.y);
                InkPoint { x, y, ..*p }
            })
            .collect();
        Self { points, ..self.clone() }
    }
}

pub(crate) fn pen_down_runs(points: &[InkPoint]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, p) in points.iter().enumerate() {
        match (p.is_down(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(s..points.len());
    }
    runs
}

fn validate_points(points: &[InkPoint]) -> Result<(), InkError> {
    if points.len() < 2 {
        return Err(InkError::TooFewPoints { found: points.len() });
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.t.is_finite()) {
            return Err(InkError::NonFinite { index: i });
        }
        if i > 0 {
            let prev = &points[i - 1];
            if p.t <= prev.t {
                return Err(InkError::NonMonotoneTime { index: i });
            }
            if !p.is_down() && !prev.is_down() {
                return Err(InkError::ConsecutivePenUp { index: i });
            }
        }
    }
    let downs = points.iter().filter(|p| p.is_down()).count();
    if downs < 2 {
        return Err(InkError::TooFewPenDown { found: downs });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InkDocument {
    points: Vec<(f64, f64, f64, Pen)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
}

/// Parses and validates an ink JSON document.
pub fn parse_ink(bytes: &[u8]) -> Result<InkTrace, InkError> {
    let doc: InkDocument =
        serde_json::from_slice(bytes).map_err(|e| InkError::Malformed(e.to_string()))?;
    from_document(doc)
}

/// Same as [`parse_ink`] for an already-decoded JSON value.
pub fn ink_from_value(value: serde_json::Value) -> Result<InkTrace, InkError> {
    let doc: InkDocument =
        serde_json::from_value(value).map_err(|e| InkError::Malformed(e.to_string()))?;
    from_document(doc)
}

fn from_document(doc: InkDocument) -> Result<InkTrace, InkError> {
    let points = doc
        .points
        .into_iter()
        .map(|(x, y, t, pen)| InkPoint { x, y, t, pen })
        .collect();
    InkTrace::new(points, doc.label, doc.rate)
}

/// Serializes a trace. Floats use the shortest representation that parses
/// back to the identical value.
pub fn write_ink(trace: &InkTrace) -> Vec<u8> {
    serde_json::to_vec(&to_document(trace)).expect("ink documents always serialize")
}

pub fn ink_to_value(trace: &InkTrace) -> serde_json::Value {
    serde_json::to_value(to_document(trace)).expect("ink documents always serialize")
}

fn to_document(trace: &InkTrace) -> InkDocument {
    InkDocument {
        points: trace.points.iter().map(|p| (p.x, p.y, p.t, p.pen)).collect(),
        label: trace.label.clone(),
        rate: trace.sample_rate_hint,
    }
}
