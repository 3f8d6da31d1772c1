//! Beta velocity fit and two-arc trajectory geometry for single segments.
//!
//! Each segment yields six dynamic values describing its speed bump and four
//! static values describing its shape:
//!
//! ```text
//! dynamic: Δt, tc_rel, p, K, Vi, Vf
//! static:  a1, b1, b2, θ1
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::NormalizedTrace;
use crate::segment::{Segment, VelocityProfile};

/// Placeholder magnitude used for dot-like segments.
pub const DOT_EPSILON: f64 = 1e-6;
/// Samples below this fraction of `K` are left out of the log-domain fit.
pub const LOG_FLOOR: f64 = 1e-6;

const P_RANGE: (f64, f64) = (0.05, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FeatureError {
    #[error("segment has fewer than three samples")]
    TooShort,
    #[error("segment velocity is identically zero")]
    DegenerateFit,
    #[error("velocity peak lies on a segment boundary")]
    BoundaryPeak,
    #[error("segment chord has zero length")]
    ZeroChord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub t0: f64,
    pub t1: f64,
    pub tc: f64,
    pub p: f64,
    pub q: f64,
    pub k: f64,
    pub vi: f64,
    pub vf: f64,
}

impl BetaParams {
    /// Builds a profile whose `q` is implied by the zero-slope condition at `tc`.
    pub fn with_peak_condition(t0: f64, t1: f64, tc: f64, p: f64, k: f64) -> Self {
        let q = p * (t1 - tc) / (tc - t0);
        Self { t0, t1, tc, p, q, k, vi: 0.0, vf: 0.0 }
    }

    /// Relative violation of `p(t1 − tc) = q(tc − t0)`.
    pub fn peak_condition_error(&self) -> f64 {
        let lhs = self.p * (self.t1 - self.tc);
        let rhs = self.q * (self.tc - self.t0);
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
    }
}

/// `K · ((t−t0)/(tc−t0))^p · ((t1−t)/(t1−tc))^q` on `[t0, t1]`, zero elsewhere.
pub fn beta_eval(b: &BetaParams, t: f64) -> f64 {
    if t < b.t0 || t > b.t1 {
        return 0.0;
    }
    let u = (t - b.t0) / (b.tc - b.t0);
    let w = (b.t1 - t) / (b.t1 - b.tc);
    b.k * u.powf(b.p) * w.powf(b.q)
}

/// Pointwise sum of the given profiles.
pub fn reconstruct_velocity(params: &[BetaParams], t_grid: &[f64]) -> Vec<f64> {
    t_grid.iter().map(|&t| params.iter().map(|b| beta_eval(b, t)).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub params: BetaParams,
    /// Root-mean-square difference between the fitted curve and the samples.
    pub rmse: f64,
}

/// Fits a single Beta bump to the samples of one segment.
pub fn fit_beta(segment: &Segment, profile: &VelocityProfile) -> Result<BetaFit, FeatureError> {
    if segment.point_count() < 3 {
        return Err(FeatureError::TooShort);
    }
    let v = &profile.v[segment.span()];
    let t = &profile.t[segment.span()];
    if v.iter().all(|&x| x <= 0.0) {
        return Err(FeatureError::DegenerateFit);
    }
    let peak = segment.peak - segment.first;
    if peak == 0 || peak + 1 == v.len() {
        return Err(FeatureError::BoundaryPeak);
    }
    fit_beta_samples(t, v, peak)
}

/// Sub-sample steps per sampling interval in the peak-time search.
const TC_SUBSTEPS: usize = 8;

/// Log-domain least squares for the bump: for each candidate `tc` on a grid
/// that contains every interior sample time, `ln v = ln K + p·a(t)` is solved
/// in closed form with `q` tied to `p` through the peak condition, and the
/// candidate with the smallest residual wins. `peak` is the measured maximum,
/// used when too few samples remain for a fit.
pub fn fit_beta_samples(t: &[f64], v: &[f64], peak: usize) -> Result<BetaFit, FeatureError> {
    let n = t.len();
    if n < 3 {
        return Err(FeatureError::TooShort);
    }
    let vmax = v.iter().copied().fold(0.0, f64::max);
    if vmax <= 0.0 || v[peak] <= 0.0 {
        return Err(FeatureError::DegenerateFit);
    }
    let (t0, t1) = (t[0], t[n - 1]);
    let floor = LOG_FLOOR * vmax;
    let usable: Vec<usize> = (1..n - 1).filter(|&i| v[i] > floor).collect();

    let mut best: Option<(f64, f64, f64, f64)> = None; // (sse, tc, ln K, p)
    if usable.len() >= 2 {
        for j in 1..n - 1 {
            let steps = if j + 1 < n - 1 { TC_SUBSTEPS } else { 1 };
            for s in 0..steps {
                let tc = t[j] + (t[j + 1] - t[j]) * s as f64 / TC_SUBSTEPS as f64;
                if let Some((sse, lnk, p)) = log_fit(t, v, &usable, t0, t1, tc) {
                    if best.is_none_or(|b| sse < b.0) {
                        best = Some((sse, tc, lnk, p));
                    }
                }
            }
        }
    }
    let mut params = match best {
        Some((_, tc, lnk, p)) => BetaParams::with_peak_condition(t0, t1, tc, p, lnk.exp()),
        // With no usable samples the shape is unconstrained; a parabola-like
        // bump is the neutral choice.
        None => BetaParams::with_peak_condition(t0, t1, t[peak], 2.0, v[peak]),
    };
    params.vi = v[0];
    params.vf = v[n - 1];
    let sse: f64 = t.iter().zip(v).map(|(&ti, &vi)| (beta_eval(&params, ti) - vi).powi(2)).sum();
    Ok(BetaFit { params, rmse: (sse / n as f64).sqrt() })
}

fn log_fit(t: &[f64], v: &[f64], usable: &[usize], t0: f64, t1: f64, tc: f64) -> Option<(f64, f64, f64)> {
    let ratio = (t1 - tc) / (tc - t0);
    let ay: Vec<(f64, f64)> = usable
        .iter()
        .map(|&i| {
            let u = (t[i] - t0) / (tc - t0);
            let w = (t1 - t[i]) / (t1 - tc);
            (u.ln() + ratio * w.ln(), v[i].ln())
        })
        .collect();
    let m = ay.len() as f64;
    let (ma, my) = ay.iter().fold((0.0, 0.0), |(sa, sy), (a, y)| (sa + a / m, sy + y / m));
    let (mut saa, mut say) = (0.0, 0.0);
    for (a, y) in &ay {
        saa += (a - ma) * (a - ma);
        say += (a - ma) * (y - my);
    }
    if saa <= 0.0 {
        return None;
    }
    let p = (say / saa).clamp(P_RANGE.0, P_RANGE.1);
    let lnk = my - p * ma;
    let sse = ay.iter().map(|(a, y)| (y - lnk - p * a).powi(2)).sum();
    Some((sse, lnk, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseArcs {
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub theta1: f64,
}

/// Chord geometry of the two halves on either side of the velocity peak.
pub fn fit_ellipse_arcs(segment: &Segment, profile: &VelocityProfile, trace: &NormalizedTrace) -> Result<EllipseArcs, FeatureError> {
    if segment.point_count() < 3 {
        return Err(FeatureError::TooShort);
    }
    let xy: Vec<(f64, f64)> = segment
        .span()
        .map(|i| {
            let p = trace.points[profile.source_indices[i]];
            (p.x, p.y)
        })
        .collect();
    let peak = segment.peak - segment.first;
    if peak == 0 || peak + 1 == xy.len() {
        return Err(FeatureError::BoundaryPeak);
    }
    arcs_from_points(&xy, peak)
}

pub fn arcs_from_points(xy: &[(f64, f64)], peak: usize) -> Result<EllipseArcs, FeatureError> {
    let n = xy.len();
    let first = xy[0];
    let last = xy[n - 1];
    let chord = (last.0 - first.0).hypot(last.1 - first.1);
    if chord == 0.0 {
        return Err(FeatureError::ZeroChord);
    }
    let b1 = max_deviation(&xy[..=peak]);
    let b2 = max_deviation(&xy[peak..]);
    let (prev, next) = (xy[peak - 1], xy[peak + 1]);
    let theta1 = wrap_angle((next.1 - prev.1).atan2(next.0 - prev.0));
    Ok(EllipseArcs { a1: 0.5 * chord, b1, b2, theta1 })
}

/// Largest perpendicular distance of the points from the chord joining the
/// first and last of them.
fn max_deviation(xy: &[(f64, f64)]) -> f64 {
    let (a, b) = (xy[0], xy[xy.len() - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    xy.iter()
        .map(|p| {
            if len == 0.0 {
                (p.0 - a.0).hypot(p.1 - a.1)
            } else {
                ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / len
            }
        })
        .fold(0.0, f64::max)
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    /// Δt, tc_rel, p, K, Vi, Vf.
    pub dynamic: [f64; 6],
    /// a1, b1, b2, θ1.
    pub statik: [f64; 4],
}

impl SegmentFeatures {
    pub const LEN: usize = 10;

    pub fn from_parts(beta: &BetaParams, arcs: &EllipseArcs) -> Self {
        let dt = beta.t1 - beta.t0;
        Self {
            dynamic: [dt, (beta.tc - beta.t0) / dt, beta.p, beta.k, beta.vi, beta.vf],
            statik: [arcs.a1, arcs.b1, arcs.b2, arcs.theta1],
        }
    }

    /// The fixed pattern assigned to dots and other too-short segments.
    pub fn dot(dt: f64) -> Self {
        Self {
            dynamic: [dt, 0.5, 1.0, DOT_EPSILON, 0.0, 0.0],
            statik: [DOT_EPSILON, 0.0, 0.0, 0.0],
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        out[..6].copy_from_slice(&self.dynamic);
        out[6..].copy_from_slice(&self.statik);
        out
    }
}

pub fn segment_features(segment: &Segment, profile: &VelocityProfile, trace: &NormalizedTrace) -> Result<SegmentFeatures, FeatureError> {
    if segment.degenerate || segment.point_count() <= 3 {
        return Ok(SegmentFeatures::dot(segment.t1 - segment.t0));
    }
    let beta = fit_beta(segment, profile)?.params;
    let arcs = fit_ellipse_arcs(segment, profile, trace)?;
    Ok(SegmentFeatures::from_parts(&beta, &arcs))
}

/// Like [`segment_features`] but falls back to the dot pattern when a fit is
/// impossible, so that every segment contributes an observation.
pub fn segment_features_lenient(segment: &Segment, profile: &VelocityProfile, trace: &NormalizedTrace) -> SegmentFeatures {
    segment_features(segment, profile, trace).unwrap_or_else(|_| SegmentFeatures::dot(segment.t1 - segment.t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ink::InkPoint;
    use crate::segment::{curvilinear_velocity, segment_strokes, SegmentConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> BetaParams {
        BetaParams { t0: 0.0, t1: 1.0, tc: 0.4, p: 2.0, q: 3.0, k: 5.0, vi: 0.0, vf: 0.0 }
    }

    fn grid(b: &BetaParams, n: usize) -> Vec<f64> {
        (0..=n).map(|i| b.t0 + (b.t1 - b.t0) * i as f64 / n as f64).collect()
    }

    #[test]
    fn evaluation_examples() {
        let b = BetaParams { t0: 0.0, t1: 1.0, tc: 0.5, p: 2.0, q: 2.0, k: 1.0, vi: 0.0, vf: 0.0 };
        assert_eq!(beta_eval(&b, 0.5), 1.0);
        assert_relative_eq!(beta_eval(&b, 0.25), 0.5625, max_relative = 1e-12);
        assert_eq!(beta_eval(&b, -0.1), 0.0);
        assert_eq!(beta_eval(&b, 1.1), 0.0);
    }

    #[test]
    fn exact_samples_are_recovered() {
        let truth = reference();
        assert!(truth.peak_condition_error() < 1e-15);
        let t = grid(&truth, 100);
        let v = reconstruct_velocity(&[truth], &t);
        let fit = fit_beta_samples(&t, &v, 40).unwrap().params;
        for (got, want) in [(fit.p, 2.0), (fit.q, 3.0), (fit.k, 5.0), (fit.tc, 0.4), (fit.t0, 0.0), (fit.t1, 1.0)] {
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-300), "{got} vs {want}");
        }
        assert!(fit.peak_condition_error() < 1e-9);
    }

    #[test]
    fn noisy_samples_stay_within_five_percent() {
        let truth = reference();
        let t = grid(&truth, 100);
        let clean = reconstruct_velocity(&[truth], &t);
        let mut worst = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = clean.iter().map(|x| x * (1.0 + 0.01 * rng.random_range(-1.0..1.0))).collect();
            let peak = (1..v.len() - 1).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            let f = fit_beta_samples(&t, &v, peak).unwrap().params;
            let rel = [(f.p, 2.0), (f.q, 3.0), (f.k, 5.0), (f.tc, 0.4)]
                .iter()
                .map(|(g, w): &(f64, f64)| (g - w).abs() / w)
                .fold(0.0, f64::max);
            worst.push(rel);
        }
        worst.sort_by(f64::total_cmp);
        assert!(worst[94] < 0.05, "95th percentile {}", worst[94]);
    }

    #[test]
    fn zero_velocity_is_degenerate() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(fit_beta_samples(&t, &[0.0; 10], 5), Err(FeatureError::DegenerateFit));
    }

    #[test]
    fn disjoint_supports_reconstruct_piecewise() {
        let a = reference();
        let b = BetaParams { t0: 2.0, t1: 3.0, tc: 2.5, p: 1.5, q: 1.5, k: 2.0, vi: 0.0, vf: 0.0 };
        let t: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();
        let sum = reconstruct_velocity(&[a, b], &t);
        for (i, &ti) in t.iter().enumerate() {
            let want = if ti <= 1.0 { beta_eval(&a, ti) } else { beta_eval(&b, ti) };
            assert_eq!(sum[i], want);
        }
    }

    #[test]
    fn straight_line_arcs() {
        let xy: Vec<(f64, f64)> = (0..11).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let arcs = arcs_from_points(&xy, 5).unwrap();
        assert!(arcs.b1 < 1e-12 && arcs.b2 < 1e-12);
        assert_relative_eq!(arcs.theta1, 2.0f64.atan(), max_relative = 1e-12);
        assert_relative_eq!(arcs.a1, 0.5 * 500f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn half_circle_arcs() {
        let r = 20.0;
        // Left to right over the top; y grows downward so the top is −r.
        let xy: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let phi = PI - PI * i as f64 / 200.0;
                (r * phi.cos(), -r * phi.sin())
            })
            .collect();
        let arcs = arcs_from_points(&xy, 100).unwrap();
        assert!((arcs.b1 - arcs.b2).abs() / arcs.b1 < 0.02);
        let quarter_sag = r * (1.0 - std::f64::consts::FRAC_1_SQRT_2);
        assert!((arcs.b1 - quarter_sag).abs() / quarter_sag < 0.02);
        assert!(arcs.theta1.abs() < 0.02);
        assert_relative_eq!(arcs.a1, r, max_relative = 1e-12);

        let rev: Vec<_> = xy.iter().rev().copied().collect();
        let back = arcs_from_points(&rev, 100).unwrap();
        assert_relative_eq!(back.b1, arcs.b2, max_relative = 1e-12);
        assert_relative_eq!(back.b2, arcs.b1, max_relative = 1e-12);
        assert!((wrap_angle(back.theta1 - arcs.theta1 - PI)).abs() < 1e-9);
    }

    #[test]
    fn zero_chord_rejected() {
        let xy = [(0.0, 0.0), (1.0, 1.0), (0.0, 0.0)];
        assert_eq!(arcs_from_points(&xy, 1), Err(FeatureError::ZeroChord));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    fn arc_trace(t_offset: f64) -> NormalizedTrace {
        let points = (0..=60)
            .map(|i| {
                let s = i as f64 / 60.0;
                let phi = PI * (s * s * (3.0 - 2.0 * s));
                InkPoint::down(64.0 - 40.0 * phi.cos(), 64.0 - 30.0 * phi.sin(), t_offset + 0.01 * i as f64)
            })
            .collect();
        NormalizedTrace { points, scale_m: 1.0, origin: (0.0, 0.0), sample_rate: 100.0 }
    }

    #[test]
    fn time_shift_leaves_features_unchanged() {
        let feats = |trace: &NormalizedTrace| {
            let prof = curvilinear_velocity(trace).unwrap();
            let segs = segment_strokes(&prof, &SegmentConfig::default());
            segs.iter().map(|s| segment_features(s, &prof, trace).unwrap().to_array()).collect::<Vec<_>>()
        };
        let a = feats(&arc_trace(0.0));
        let b = feats(&arc_trace(12.5));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn dot_pattern() {
        assert_eq!(
            SegmentFeatures::dot(0.02).to_array(),
            [0.02, 0.5, 1.0, 1e-6, 0.0, 0.0, 1e-6, 0.0, 0.0, 0.0]
        );
    }

    proptest! {
        #[test]
        fn fitted_params_satisfy_peak_condition(
            p in 0.3f64..8.0, tc_frac in 0.15f64..0.85, k in 0.1f64..100.0, n in 8usize..80,
            noise_seed in any::<u64>()
        ) {
            let peak = ((tc_frac * n as f64).round() as usize).clamp(1, n - 1);
            let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let truth = BetaParams::with_peak_condition(0.0, 1.0, t[peak], p, k);
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let v: Vec<f64> = t.iter().map(|&x| beta_eval(&truth, x) * (1.0 + 0.05 * rng.random_range(-1.0..1.0))).collect();
            let fit = fit_beta_samples(&t, &v, peak).unwrap().params;
            prop_assert!(fit.peak_condition_error() <= 1e-9);
            prop_assert!(fit.p > 0.0 && fit.q > 0.0 && fit.k > 0.0);
        }

        #[test]
        fn beta_vanishes_at_support_ends(p in 0.5f64..20.0, k in 0.1f64..10.0) {
            let b = BetaParams::with_peak_condition(0.0, 1.0, 0.3, p, k);
            prop_assert_eq!(beta_eval(&b, 0.0), 0.0);
            prop_assert_eq!(beta_eval(&b, 1.0), 0.0);
            prop_assert!((beta_eval(&b, 0.3) - k).abs() <= 1e-12 * k);
            prop_assert!(beta_eval(&b, 1e-200) < 1e-6 * k);
            prop_assert!(beta_eval(&b, 1.0 - 1e-12) < 1e-6 * k);
            prop_assert!(beta_eval(&b, 0.7) <= k);
        }
    }
}
