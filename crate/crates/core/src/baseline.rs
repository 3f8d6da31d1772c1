//! Virtual baseline, delayed strokes and the eleven baseline features.
//!
//! Stage one proposes lines through pairs of segment valleys (the lowest
//! point of each segment, `y` growing downward) and clusters them; stage two
//! scores every cluster by how many segment peaks fall inside a band around
//! it. Delayed strokes (dots, bars) are kept in the sequence and tied to the
//! main-body segment below or above them.
//!
//! Feature layout, all distances divided by 128 and positive above the line:
//!
//! | slot | value |
//! |------|-------|
//! | 0 | baseline slope |
//! | 1 | baseline height at `x = 0` |
//! | 2..=4 | distance of the segment's start, peak point and end |
//! | 5 | delayed flag |
//! | 6, 7 | anchors of the projected start and end on the receiving segment |
//! | 8, 9 | minimum and maximum point distance |
//! | 10 | fraction of points strictly above the line |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{NormalizedTrace, NORMALIZED_SIZE};
use crate::segment::{Segment, VelocityProfile};

pub const BASELINE_FEATURES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Half-width of the scoring band, normalized units.
    pub band: f64,
    pub cluster_slope_tol: f64,
    /// Height tolerance for clustering, measured at the box centre.
    pub cluster_height_tol: f64,
    /// Strokes shorter than this arc length are dot-like.
    pub dot_arc: f64,
    /// Strokes with at most this many points are dot-like.
    pub dot_points: usize,
    /// Required fraction of a stroke's x-span covered by earlier main body.
    pub overlap: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { band: 12.0, cluster_slope_tol: 0.05, cluster_height_tol: 3.0, dot_arc: 6.0, dot_points: 5, overlap: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub slope: f64,
    pub height: f64,
    pub score: usize,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub slope: f64,
    /// `y` at `x = 0`.
    pub height: f64,
    /// Profile indices of the trajectory points lying within the clustering
    /// tolerance of the line.
    pub support: Vec<usize>,
    pub candidates: Vec<Candidate>,
}

impl BaselineModel {
    pub fn horizontal(y: f64) -> Self {
        Self { slope: 0.0, height: y, support: Vec::new(), candidates: Vec::new() }
    }

    pub fn y_at(&self, x: f64) -> f64 {
        self.height + self.slope * x
    }

    /// Perpendicular distance, positive above the line (smaller `y`).
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (self.y_at(x) - y) / self.slope.hypot(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("no main-body segment to project onto")]
    NoReceiver,
}

fn xy(trace: &NormalizedTrace, profile: &VelocityProfile, i: usize) -> (f64, f64) {
    let p = trace.points[profile.source_indices[i]];
    (p.x, p.y)
}

/// Profile index of the lowest point of the segment.
fn valley(segment: &Segment, profile: &VelocityProfile, trace: &NormalizedTrace) -> usize {
    let mut best = segment.first;
    for i in segment.span() {
        if xy(trace, profile, i).1 > xy(trace, profile, best).1 {
            best = i;
        }
    }
    best
}

pub fn detect_baseline(trace: &NormalizedTrace, profile: &VelocityProfile, segments: &[Segment], cfg: &BaselineConfig) -> BaselineModel {
    if segments.is_empty() {
        return BaselineModel::horizontal(NORMALIZED_SIZE / 2.0);
    }
    let mut valleys: Vec<usize> = segments.iter().map(|s| valley(s, profile, trace)).collect();
    valleys.dedup();
    let vp: Vec<(f64, f64)> = valleys.iter().map(|&i| xy(trace, profile, i)).collect();
    let peaks: Vec<(f64, f64)> = segments.iter().map(|s| xy(trace, profile, s.peak)).collect();
    let centre = NORMALIZED_SIZE / 2.0;

    // Stage one: candidate lines as (slope, height at the box centre).
    let mut lines: Vec<(f64, f64)> = vp.iter().map(|&(_, y)| (0.0, y)).collect();
    for i in 0..vp.len() {
        for j in i + 1..vp.len() {
            let dx = vp[j].0 - vp[i].0;
            if dx == 0.0 {
                continue;
            }
            let slope = (vp[j].1 - vp[i].1) / dx;
            if slope.abs() <= 1.0 {
                lines.push((slope, vp[i].1 + slope * (centre - vp[i].0)));
            }
        }
    }
    let mut clusters: Vec<(f64, f64, usize)> = Vec::new(); // running means and size
    for &(s, h) in &lines {
        match clusters
            .iter_mut()
            .find(|c| (c.0 - s).abs() <= cfg.cluster_slope_tol && (c.1 - h).abs() <= cfg.cluster_height_tol)
        {
            Some(c) => {
                c.2 += 1;
                c.0 += (s - c.0) / c.2 as f64;
                c.1 += (h - c.1) / c.2 as f64;
            }
            None => clusters.push((s, h, 1)),
        }
    }

    // Stage two: least-squares refit on nearby valleys, then band scoring.
    let mut best: Option<(BaselineModel, usize)> = None;
    let mut candidates = Vec::with_capacity(clusters.len());
    for &(s, h, _) in &clusters {
        let seed = BaselineModel::horizontal(h - s * centre);
        let seed = BaselineModel { slope: s, ..seed };
        let members: Vec<usize> = (0..vp.len())
            .filter(|&k| seed.signed_distance(vp[k].0, vp[k].1).abs() <= cfg.cluster_height_tol)
            .collect();
        let (slope, height) = fit_line(&members.iter().map(|&k| vp[k]).collect::<Vec<_>>()).unwrap_or((seed.slope, seed.height));
        let mut line = BaselineModel { slope, height, support: Vec::new(), candidates: Vec::new() };
        line.support = (0..profile.len())
            .filter(|&i| {
                let (x, y) = xy(trace, profile, i);
                line.signed_distance(x, y).abs() <= cfg.cluster_height_tol
            })
            .collect();
        let score = peaks.iter().filter(|&&(x, y)| line.signed_distance(x, y).abs() <= cfg.band).count();
        let support = line.support.len();
        candidates.push(Candidate { slope, height, score, support });
        let better = match &best {
            None => true,
            Some((b, bs)) => {
                (score, support) > (*bs, b.support.len())
                    || ((score, support) == (*bs, b.support.len()) && height > b.height)
            }
        };
        if better {
            best = Some((line, score));
        }
    }
    let (mut model, _) = best.expect("at least one candidate");
    model.candidates = candidates;
    model
}

/// Least-squares line through the points; `None` if the fit is undefined or
/// steeper than 45°.
fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if pts.len() < 2 || sxx <= 1e-12 { 0.0 } else { sxy / sxx };
    (slope.abs() <= 1.0).then_some((slope, my - slope * mx))
}

struct StrokeInfo {
    xmin: f64,
    xmax: f64,
    arc: f64,
    points: usize,
    outside_band: bool,
}

/// Flags the segments of delayed strokes. The longest stroke, by arc length,
/// is always main body; a later stroke is delayed when it sits mostly over
/// earlier main body and is either dot-sized or entirely outside the band.
pub fn classify_delayed(segments: &mut [Segment], profile: &VelocityProfile, trace: &NormalizedTrace, baseline: &BaselineModel, cfg: &BaselineConfig) {
    let info: Vec<StrokeInfo> = profile
        .strokes
        .iter()
        .map(|run| {
            let pts: Vec<(f64, f64)> = run.clone().map(|i| xy(trace, profile, i)).collect();
            let arc = pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
            StrokeInfo {
                xmin: pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
                xmax: pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
                arc,
                points: pts.len(),
                outside_band: pts.iter().all(|&(x, y)| baseline.signed_distance(x, y).abs() > cfg.band),
            }
        })
        .collect();
    let main = (0..info.len()).max_by(|&a, &b| info[a].arc.total_cmp(&info[b].arc).then(b.cmp(&a)));
    let mut delayed = vec![false; info.len()];
    for k in 0..info.len() {
        if Some(k) == main {
            continue;
        }
        let s = &info[k];
        let covered = (0..k).filter(|&e| !delayed[e]).any(|e| {
            let e = &info[e];
            let width = s.xmax - s.xmin;
            if width <= 0.0 {
                e.xmin <= s.xmin && s.xmin <= e.xmax
            } else {
                let overlap = (s.xmax.min(e.xmax) - s.xmin.max(e.xmin)).max(0.0);
                overlap >= cfg.overlap * width
            }
        });
        let small = s.arc < cfg.dot_arc || s.points <= cfg.dot_points;
        delayed[k] = covered && (small || s.outside_band);
    }
    for seg in segments.iter_mut() {
        seg.delayed = delayed[seg.stroke];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub anchor_t0: f64,
    pub anchor_t1: f64,
    /// Index of the receiving segment.
    pub receiver: usize,
}

/// Vertical projection of a delayed segment onto the main body.
pub fn project_delayed(index: usize, segments: &[Segment], profile: &VelocityProfile, trace: &NormalizedTrace) -> Result<Projection, BaselineError> {
    let seg = &segments[index];
    let pts: Vec<(f64, f64)> = seg.span().map(|i| xy(trace, profile, i)).collect();
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;

    let mut containing: Option<(usize, f64)> = None;
    let mut nearest: Option<(usize, f64)> = None;
    for (k, other) in segments.iter().enumerate() {
        if other.delayed {
            continue;
        }
        let body: Vec<(f64, f64)> = other.span().map(|i| xy(trace, profile, i)).collect();
        let (xmin, xmax) = x_span(&body);
        if let Some(d) = vertical_gap(&body, cx, cy) {
            if containing.is_none_or(|(_, best)| d < best) {
                containing = Some((k, d));
            }
        }
        let gap = if cx < xmin { xmin - cx } else if cx > xmax { cx - xmax } else { 0.0 };
        if nearest.is_none_or(|(_, best)| gap < best) {
            nearest = Some((k, gap));
        }
    }
    let (receiver, _) = containing.or(nearest).ok_or(BaselineError::NoReceiver)?;
    let body: Vec<(f64, f64)> = segments[receiver].span().map(|i| xy(trace, profile, i)).collect();
    let (xmin, xmax) = x_span(&body);
    let rel = |x: f64| if xmax > xmin { ((x - xmin) / (xmax - xmin)).clamp(0.0, 1.0) } else { 0.5 };
    Ok(Projection { anchor_t0: rel(pts[0].0), anchor_t1: rel(pts[pts.len() - 1].0), receiver })
}

fn x_span(pts: &[(f64, f64)]) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
}

/// Smallest vertical distance from `(cx, cy)` to the polyline at abscissa
/// `cx`, if the polyline crosses that abscissa.
fn vertical_gap(body: &[(f64, f64)], cx: f64, cy: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |y: f64| {
        let d = (y - cy).abs();
        if best.is_none_or(|b| d < b) {
            best = Some(d);
        }
    };
    if body.len() == 1 && body[0].0 == cx {
        consider(body[0].1);
    }
    for w in body.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (lo, hi) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        if lo.0 <= cx && cx <= hi.0 {
            if hi.0 == lo.0 {
                consider(lo.1);
                consider(hi.1);
            } else {
                consider(lo.1 + (hi.1 - lo.1) * (cx - lo.0) / (hi.0 - lo.0));
            }
        }
    }
    best
}

pub fn baseline_features(segment: &Segment, profile: &VelocityProfile, trace: &NormalizedTrace, baseline: &BaselineModel, projection: Option<&Projection>) -> [f64; BASELINE_FEATURES] {
    let dist = |i: usize| {
        let (x, y) = xy(trace, profile, i);
        baseline.signed_distance(x, y)
    };
    let all: Vec<f64> = segment.span().map(dist).collect();
    let above = all.iter().filter(|&&d| d > 0.0).count() as f64 / all.len() as f64;
    let (lo, hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let (flag, a0, a1) = match (segment.delayed, projection) {
        (true, Some(p)) => (1.0, p.anchor_t0, p.anchor_t1),
        (true, None) => (1.0, 0.0, 0.0),
        _ => (0.0, 0.0, 0.0),
    };
    let s = NORMALIZED_SIZE;
    [
        baseline.slope,
        baseline.height / s,
        dist(segment.first) / s,
        dist(segment.peak) / s,
        dist(segment.last) / s,
        flag,
        a0,
        a1,
        lo / s,
        hi / s,
        above,
    ]
}

/// Runs detection, delayed classification and projection, setting the
/// segments' delayed flags and returning one feature block per segment.
pub fn annotate(trace: &NormalizedTrace, profile: &VelocityProfile, segments: &mut [Segment], cfg: &BaselineConfig) -> (BaselineModel, Vec<[f64; BASELINE_FEATURES]>) {
    let model = detect_baseline(trace, profile, segments, cfg);
    classify_delayed(segments, profile, trace, &model, cfg);
    let feats = (0..segments.len())
        .map(|k| {
            let proj = if segments[k].delayed { project_delayed(k, segments, profile, trace).ok() } else { None };
            baseline_features(&segments[k], profile, trace, &model, proj.as_ref())
        })
        .collect();
    (model, feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ink::InkPoint;
    use crate::segment::{curvilinear_velocity, segment_strokes, SegmentConfig};

    /// Builds a trace directly in normalized coordinates from strokes of
    /// points, plus one segment per stroke.
    fn setup(strokes: &[Vec<(f64, f64)>]) -> (NormalizedTrace, VelocityProfile, Vec<Segment>) {
        let mut points = Vec::new();
        let mut t = 0.0;
        for (k, s) in strokes.iter().enumerate() {
            if k > 0 {
                let prev = points.last().copied().unwrap_or(InkPoint::down(0.0, 0.0, 0.0));
                points.push(InkPoint::up(prev.x, prev.y, t));
                t += 0.01;
            }
            for &(x, y) in s {
                points.push(InkPoint::down(x, y, t));
                t += 0.01;
            }
        }
        let trace = NormalizedTrace { points, scale_m: 1.0, origin: (0.0, 0.0), sample_rate: 100.0 };
        let profile = curvilinear_velocity(&trace).unwrap();
        let segments = profile
            .strokes
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let (first, last) = (r.start, r.end - 1);
                let peak = (first + last) / 2;
                Segment {
                    first,
                    last,
                    peak,
                    t0: profile.t[first],
                    t1: profile.t[last],
                    tc: profile.t[peak],
                    stroke: k,
                    starts_at_pen_event: true,
                    ends_at_pen_event: true,
                    degenerate: r.len() < 3,
                    delayed: false,
                }
            })
            .collect();
        (trace, profile, segments)
    }

    fn line(x0: f64, x1: f64, y: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| (x0 + (x1 - x0) * i as f64 / (n - 1) as f64, y)).collect()
    }

    #[test]
    fn flat_line_is_its_own_baseline() {
        let (trace, prof, segs) = setup(&[line(0.0, 128.0, 64.0, 40)]);
        let b = detect_baseline(&trace, &prof, &segs, &BaselineConfig::default());
        assert_eq!(b.slope, 0.0);
        assert!((b.height - 64.0).abs() < 1e-9);
    }

    #[test]
    fn larger_alignment_wins() {
        // Five short strokes sitting on y = 80 and two on y = 30.
        let mut strokes: Vec<Vec<(f64, f64)>> = (0..5).map(|k| line(10.0 + 20.0 * k as f64, 18.0 + 20.0 * k as f64, 80.0, 6)).collect();
        strokes.push(line(20.0, 28.0, 30.0, 6));
        strokes.push(line(60.0, 68.0, 30.0, 6));
        let (trace, prof, segs) = setup(&strokes);
        let b = detect_baseline(&trace, &prof, &segs, &BaselineConfig::default());
        assert!((b.height - 80.0).abs() < 1e-9 && b.slope.abs() < 1e-12, "{b:?}");
        assert_eq!(b.support.len(), 30);
    }

    #[test]
    fn sloped_baseline_is_fitted() {
        let strokes: Vec<Vec<(f64, f64)>> = (0..6)
            .map(|k| {
                let x = 10.0 + 20.0 * k as f64;
                vec![(x, 60.0 + 0.1 * x - 10.0), (x + 2.0, 60.0 + 0.1 * (x + 2.0) - 20.0), (x + 4.0, 60.0 + 0.1 * (x + 4.0))]
            })
            .collect();
        let (trace, prof, segs) = setup(&strokes);
        let b = detect_baseline(&trace, &prof, &segs, &BaselineConfig::default());
        assert!((b.slope - 0.1).abs() < 1e-9, "{b:?}");
        assert!((b.height - 60.0).abs() < 1e-6);
    }

    #[test]
    fn body_with_ascender() {
        // A wavy body hugging y = 64, written right to left, and one tall
        // ascender rising from it.
        let mut body = Vec::new();
        for k in 0..6 {
            let x0 = 120.0 - 16.0 * k as f64;
            for i in 0..8 {
                let f = i as f64 / 8.0;
                body.push((x0 - 16.0 * f, 64.0 - 6.0 * (std::f64::consts::PI * f).sin()));
            }
        }
        let ascender: Vec<(f64, f64)> = (0..12).map(|i| (40.0, 64.0 - 5.0 * i as f64)).chain((0..12).map(|i| (38.0, 9.0 + 5.0 * i as f64))).collect();
        let mut strokes = Vec::new();
        strokes.push(body);
        strokes.push(ascender);
        let (trace, prof, _) = setup(&strokes);
        // One segment per wave, cut at the troughs, plus the ascender.
        let cut = |first: usize, last: usize, stroke: usize| Segment {
            first,
            last,
            peak: (first + last) / 2,
            t0: prof.t[first],
            t1: prof.t[last],
            tc: prof.t[(first + last) / 2],
            stroke,
            starts_at_pen_event: false,
            ends_at_pen_event: false,
            degenerate: false,
            delayed: false,
        };
        let mut segs: Vec<Segment> = (0..6).map(|k| cut(k * 8, (k * 8 + 8).min(47), 0)).collect();
        segs.push(cut(48, 71, 1));
        let b = detect_baseline(&trace, &prof, &segs, &BaselineConfig::default());
        assert!((b.y_at(64.0) - 64.0).abs() <= 3.0, "{b:?}");
        assert!(b.slope.abs() <= 0.05);
    }

    #[test]
    fn dot_over_body_is_delayed() {
        let (trace, prof, mut segs) = setup(&[line(100.0, 20.0, 64.0, 30), vec![(60.0, 40.0), (59.5, 40.2), (59.0, 40.4)]]);
        let (_, feats) = annotate(&trace, &prof, &mut segs, &BaselineConfig::default());
        assert!(!segs[0].delayed);
        assert!(segs[1].delayed);
        assert_eq!(feats[1][5], 1.0);
        assert!((feats[1][6] - 0.5).abs() < 0.01 && (feats[1][7] - 0.5).abs() < 0.02, "{:?}", feats[1]);
        assert!((feats[1][3] - 24.0 / 128.0).abs() < 0.01);
        assert_eq!(&feats[0][5..8], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lone_stroke_is_main_body() {
        let (trace, prof, mut segs) = setup(&[line(100.0, 20.0, 64.0, 30)]);
        annotate(&trace, &prof, &mut segs, &BaselineConfig::default());
        assert!(!segs[0].delayed);
    }

    #[test]
    fn dot_picks_vertically_nearer_receiver() {
        // Two body segments meeting at x = 60, one at y = 64 and one rising
        // to y = 50 near the junction.
        let low = line(100.0, 60.0, 64.0, 20);
        let high: Vec<(f64, f64)> = (0..20).map(|i| (60.0 - 2.0 * i as f64, 50.0)).collect();
        let (trace, prof, mut segs) = setup(&[low, high, vec![(60.2, 40.0), (60.0, 40.1), (59.8, 40.2)]]);
        segs[2].delayed = true;
        let p = project_delayed(2, &segs, &prof, &trace).unwrap();
        assert_eq!(p.receiver, 1);
    }

    #[test]
    fn bar_over_left_half() {
        let (trace, prof, mut segs) = setup(&[line(20.0, 100.0, 64.0, 40), line(20.0, 60.0, 40.0, 5)]);
        segs[1].delayed = true;
        let p = project_delayed(1, &segs, &prof, &trace).unwrap();
        assert_eq!(p.receiver, 0);
        assert!(p.anchor_t0.abs() < 1e-9 && (p.anchor_t1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn on_line_segment_features() {
        let (trace, prof, segs) = setup(&[line(0.0, 128.0, 64.0, 40)]);
        let b = detect_baseline(&trace, &prof, &segs, &BaselineConfig::default());
        let f = baseline_features(&segs[0], &prof, &trace, &b, None);
        assert_eq!([f[2], f[3], f[4], f[8], f[9], f[10]], [0.0; 6]);
        assert_eq!(f[1], 0.5);
    }

    #[test]
    fn no_receiver_without_body() {
        let (trace, prof, mut segs) = setup(&[vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]]);
        segs[0].delayed = true;
        assert_eq!(project_delayed(0, &segs, &prof, &trace), Err(BaselineError::NoReceiver));
    }

    #[test]
    fn translation_leaves_features_unchanged() {
        use crate::preprocess::normalize_size;
        use crate::synth::{generate_word, Alphabet, SynthConfig};
        use rand::SeedableRng;
        let abc = Alphabet::default_ten();
        let word = generate_word(&abc, &[1, 7, 3], &SynthConfig::default(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let run = |trace: &crate::ink::InkTrace| {
            let n = normalize_size(trace).unwrap();
            let prof = curvilinear_velocity(&n).unwrap();
            let mut segs = segment_strokes(&prof, &SegmentConfig::default());
            annotate(&n, &prof, &mut segs, &BaselineConfig::default()).1
        };
        let a = run(&word.trace);
        let b = run(&word.trace.map_xy(|x, y| (x + 37.5, y)));
        for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
