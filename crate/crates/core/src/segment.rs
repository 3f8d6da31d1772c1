//! Curvilinear velocity and velocity-valley segmentation.
//!
//! A pen-down stroke is cut at every velocity minimum that is deep enough
//! relative to its neighbouring peaks; pen lifts are always boundaries. Each
//! resulting segment carries exactly one recorded velocity peak `tc`.

use std::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::NormalizedTrace;

pub const DEFAULT_VALLEY_RATIO: f64 = 0.8;
pub const DEFAULT_MIN_PEAK_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("duplicate timestamp at trace point {index}")]
    DuplicateTimestamp { index: usize },
}

/// Speed samples for the pen-down points of a trace.
///
/// Profile index `i` refers to trace point `source_indices[i]`. Pen-up
/// markers carry no speed and are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    pub v: Vec<f64>,
    pub t: Vec<f64>,
    pub source_indices: Vec<usize>,
    /// Profile index ranges of each pen-down stroke.
    pub strokes: Vec<Range<usize>>,
}

impl VelocityProfile {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Builds a profile directly from per-stroke samples; used with
    /// generator ground truth and in tests. Source indices are sequential.
    pub fn from_strokes(strokes: &[(Vec<f64>, Vec<f64>)]) -> Self {
        let mut profile = VelocityProfile {
            v: Vec::new(),
            t: Vec::new(),
            source_indices: Vec::new(),
            strokes: Vec::new(),
        };
        for (t, v) in strokes {
            let start = profile.v.len();
            profile.t.extend_from_slice(t);
            profile.v.extend_from_slice(v);
            profile.strokes.push(start..profile.v.len());
        }
        profile.source_indices = (0..profile.v.len()).collect();
        profile
    }
}

/// Arc-length rate per pen-down point: central differences inside a stroke,
/// one-sided differences at its ends, zero for single-point strokes.
pub fn curvilinear_velocity(trace: &NormalizedTrace) -> Result<VelocityProfile, SegmentError> {
    let pts = &trace.points;
    let mut profile = VelocityProfile {
        v: Vec::new(),
        t: Vec::new(),
        source_indices: Vec::new(),
        strokes: Vec::new(),
    };
    for run in trace.strokes() {
        let start = profile.v.len();
        let (a, b) = (run.start, run.end);
        for i in run.clone() {
            if i > a && pts[i].t <= pts[i - 1].t {
                return Err(SegmentError::DuplicateTimestamp { index: i });
            }
            let (lo, hi) = if b - a < 2 {
                (i, i)
            } else if i == a {
                (i, i + 1)
            } else if i == b - 1 {
                (i - 1, i)
            } else {
                (i - 1, i + 1)
            };
            let v = if lo == hi {
                0.0
            } else {
                let dx = pts[hi].x - pts[lo].x;
                let dy = pts[hi].y - pts[lo].y;
                dx.hypot(dy) / (pts[hi].t - pts[lo].t)
            };
            profile.v.push(v);
            profile.t.push(pts[i].t);
            profile.source_indices.push(i);
        }
        profile.strokes.push(start..profile.v.len());
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtremumKind {
    Min,
    Max,
    Inflexion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extremum {
    /// Profile index.
    pub index: usize,
    pub kind: ExtremumKind,
}

/// Interior extrema and inflexions of every stroke, in index order.
pub fn detect_extrema(profile: &VelocityProfile) -> Vec<Extremum> {
    let mut out = Vec::new();
    for run in &profile.strokes {
        out.extend(stroke_extrema(&profile.v, run.clone()));
    }
    out
}

fn stroke_extrema(v: &[f64], run: Range<usize>) -> Vec<Extremum> {
    if run.len() < 3 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    let mut i = run.start + 1;
    while i < run.end - 1 {
        // Collapse a plateau `i..=j` to its midpoint.
        let mut j = i;
        while j + 1 < run.end - 1 && v[j + 1] == v[i] {
            j += 1;
        }
        let (before, after) = (v[i - 1], v[j + 1]);
        let index = (i + j) / 2;
        if v[i] > before && v[i] > after {
            peaks.push(Extremum { index, kind: ExtremumKind::Max });
        } else if v[i] < before && v[i] < after {
            peaks.push(Extremum { index, kind: ExtremumKind::Min });
        }
        i = j + 1;
    }

    let second_diff = |k: usize| v[k + 1] - 2.0 * v[k] + v[k - 1];
    let mut out = Vec::with_capacity(peaks.len() * 2);
    for (n, e) in peaks.iter().enumerate() {
        out.push(*e);
        if let Some(next) = peaks.get(n + 1) {
            let mut prev_sign = 0.0;
            for k in e.index..=next.index {
                if k == run.start || k + 1 >= run.end {
                    continue;
                }
                let d = second_diff(k);
                let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                if sign != 0.0 && prev_sign != 0.0 && sign != prev_sign {
                    out.push(Extremum { index: k, kind: ExtremumKind::Inflexion });
                }
                if sign != 0.0 {
                    prev_sign = sign;
                }
            }
        }
    }
    out
}

/// One continuous stroke piece between two velocity valleys or pen events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Inclusive profile index range.
    pub first: usize,
    pub last: usize,
    /// Profile index of the recorded velocity peak.
    pub peak: usize,
    pub t0: f64,
    pub t1: f64,
    pub tc: f64,
    /// Position of the owning pen-down stroke in time order.
    pub stroke: usize,
    pub starts_at_pen_event: bool,
    pub ends_at_pen_event: bool,
    /// Fewer than three points: features fall back to the dot pattern.
    pub degenerate: bool,
    /// Set by the baseline stage.
    pub delayed: bool,
}

impl Segment {
    pub fn span(&self) -> RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn point_count(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConfig {
    /// A valley is a cut only if its speed is below this fraction of the
    /// smaller of its two neighbouring peaks.
    pub valley_ratio: f64,
    /// A piece whose peak speed is below this fraction of its stroke's
    /// maximum is merged into a neighbour. Smoothing turns sharp reversals
    /// into a tiny bump between two valleys, which this removes.
    pub min_peak_ratio: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { valley_ratio: DEFAULT_VALLEY_RATIO, min_peak_ratio: DEFAULT_MIN_PEAK_RATIO }
    }
}

pub fn segment_strokes(profile: &VelocityProfile, cfg: &SegmentConfig) -> Vec<Segment> {
    let extrema = detect_extrema(profile);
    let mut segments = Vec::new();
    for (stroke, run) in profile.strokes.iter().enumerate() {
        if run.is_empty() {
            continue;
        }
        let (a, b) = (run.start, run.end - 1);
        if run.len() < 3 {
            let peak = (a + b) / 2;
            segments.push(make_segment(profile, a, b, peak, stroke, true, true, true));
            continue;
        }
        let minima: Vec<usize> = extrema
            .iter()
            .filter(|e| e.kind == ExtremumKind::Min && run.contains(&e.index))
            .map(|e| e.index)
            .collect();
        let cuts = prune_valleys(&profile.v, a, b, minima, cfg.valley_ratio);
        let cuts = merge_weak_pieces(&profile.v, a, b, cuts, cfg.min_peak_ratio);
        let mut bounds = Vec::with_capacity(cuts.len() + 2);
        bounds.push(a);
        bounds.extend(cuts);
        bounds.push(b);
        let n = bounds.len() - 1;
        for (k, pair) in bounds.windows(2).enumerate() {
            let (s, e) = (pair[0], pair[1]);
            let peak = interior_argmax(&profile.v, s, e);
            segments.push(make_segment(profile, s, e, peak, stroke, k == 0, k + 1 == n, false));
        }
    }
    segments
}

/// Drops the weakest valley until every remaining one is deep enough.
fn prune_valleys(v: &[f64], a: usize, b: usize, mut cuts: Vec<usize>, ratio: f64) -> Vec<usize> {
    loop {
        let mut worst: Option<(usize, f64)> = None;
        for (k, &m) in cuts.iter().enumerate() {
            let left = if k == 0 { a } else { cuts[k - 1] };
            let right = if k + 1 == cuts.len() { b } else { cuts[k + 1] };
            let peak_l = max_between(v, left, m);
            let peak_r = max_between(v, m, right);
            let floor = ratio * peak_l.min(peak_r);
            if v[m] >= floor {
                let score = if floor > 0.0 { v[m] / floor } else { f64::INFINITY };
                if worst.is_none_or(|(_, s)| score > s) {
                    worst = Some((k, score));
                }
            }
        }
        match worst {
            Some((k, _)) => {
                cuts.remove(k);
            }
            None => return cuts,
        }
    }
}

/// Removes, one at a time, the higher bounding valley of the weakest piece
/// until every piece peaks above `ratio` times the stroke maximum.
fn merge_weak_pieces(v: &[f64], a: usize, b: usize, mut cuts: Vec<usize>, ratio: f64) -> Vec<usize> {
    let floor = ratio * v[a..=b].iter().copied().fold(0.0, f64::max);
    while !cuts.is_empty() {
        let mut bounds = Vec::with_capacity(cuts.len() + 2);
        bounds.push(a);
        bounds.extend_from_slice(&cuts);
        bounds.push(b);
        let weakest = bounds
            .windows(2)
            .enumerate()
            .map(|(k, w)| (k, max_between(v, w[0], w[1]).max(v[w[0]]).max(v[w[1]])))
            .filter(|&(_, peak)| peak < floor)
            .min_by(|x, y| x.1.total_cmp(&y.1));
        let Some((k, _)) = weakest else { break };
        // Piece k lies between bounds[k] and bounds[k+1]; cut indices are
        // shifted by one relative to bounds.
        let left = (k > 0).then(|| k - 1);
        let right = (k < cuts.len()).then_some(k);
        let drop = match (left, right) {
            (Some(l), Some(r)) => if v[cuts[l]] >= v[cuts[r]] { l } else { r },
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => break,
        };
        cuts.remove(drop);
    }
    cuts
}

/// Maximum of `v` strictly between `lo` and `hi`.
fn max_between(v: &[f64], lo: usize, hi: usize) -> f64 {
    if hi <= lo + 1 {
        return 0.0;
    }
    v[lo + 1..hi].iter().copied().fold(0.0, f64::max)
}

fn interior_argmax(v: &[f64], s: usize, e: usize) -> usize {
    if e < s + 2 {
        return (s + e) / 2;
    }
    let mut best = s + 1;
    for i in s + 1..e {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn make_segment(
    profile: &VelocityProfile,
    first: usize,
    last: usize,
    peak: usize,
    stroke: usize,
    starts_at_pen_event: bool,
    ends_at_pen_event: bool,
    degenerate: bool,
) -> Segment {
    Segment {
        first,
        last,
        peak,
        t0: profile.t[first],
        t1: profile.t[last],
        tc: profile.t[peak],
        stroke,
        starts_at_pen_event,
        ends_at_pen_event,
        degenerate,
        delayed: false,
    }
}
