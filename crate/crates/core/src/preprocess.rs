//! Size normalization into the 128-unit box and low-pass smoothing.
//!
//! The smoothing kernel is a symmetric `2R + 1` tap FIR derived from a
//! 4th-order Chebyshev type-II prototype: the prototype's impulse response is
//! autocorrelated (the impulse response of forward-backward filtering, which
//! is zero phase), truncated to `±R` lags and normalized to unit DC gain. The
//! prototype's stopband edge is solved for so that the *final* kernel is 3 dB
//! down at the requested cutoff.

use num_complex::Complex64;
use thiserror::Error;

use crate::ink::{pen_down_runs, InkPoint, InkTrace, DEFAULT_SAMPLE_RATE};

/// Side of the normalization box.
pub const NORMALIZED_SIZE: f64 = 128.0;

pub const DEFAULT_CUTOFF_HZ: f64 = 12.0;
pub const DEFAULT_RADIUS: usize = 8;

const PROTOTYPE_ORDER: usize = 4;
const STOPBAND_DB: f64 = 40.0;
const IMPULSE_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("degenerate trace: all points coincide")]
    Degenerate,
    #[error("cutoff frequency must be positive, got {0}")]
    BadCutoff(f64),
    #[error("filter radius must be at least 1")]
    BadRadius,
}

/// A trace mapped into `[0, 128]²`, larger bounding-box side exactly 128.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrace {
    pub points: Vec<InkPoint>,
    /// The divisor `m`: larger side of the raw bounding box.
    pub scale_m: f64,
    /// `(min_x, min_y)` of the raw trace.
    pub origin: (f64, f64),
    /// Sampling rate used by the filter, in Hz.
    pub sample_rate: f64,
}

impl NormalizedTrace {
    pub fn strokes(&self) -> Vec<std::ops::Range<usize>> {
        pen_down_runs(&self.points)
    }

    /// Maps a raw-trace coordinate into the normalized frame.
    pub fn to_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        (
            NORMALIZED_SIZE * ((x - self.origin.0) / self.scale_m),
            NORMALIZED_SIZE * ((y - self.origin.1) / self.scale_m),
        )
    }
}

pub fn normalize_size(trace: &InkTrace) -> Result<NormalizedTrace, PreprocessError> {
    let (points, scale_m, origin) = normalize_points(trace.points())?;
    Ok(NormalizedTrace {
        points,
        scale_m,
        origin,
        sample_rate: estimate_sample_rate(trace),
    })
}

/// The raw normalization map over a point slice.
pub fn normalize_points(
    points: &[InkPoint],
) -> Result<(Vec<InkPoint>, f64, (f64, f64)), PreprocessError> {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let m = (max_x - min_x).max(max_y - min_y);
    if !(m > 0.0) {
        return Err(PreprocessError::Degenerate);
    }
    let normalized = points
        .iter()
        .map(|p| InkPoint {
            x: NORMALIZED_SIZE * ((p.x - min_x) / m),
            y: NORMALIZED_SIZE * ((p.y - min_y) / m),
            ..*p
        })
        .collect();
    Ok((normalized, m, (min_x, min_y)))
}

/// The rate hint if present, else the median pen-down sampling interval.
pub fn estimate_sample_rate(trace: &InkTrace) -> f64 {
    if let Some(rate) = trace.sample_rate_hint {
        return rate;
    }
    let points = trace.points();
    let mut dts: Vec<f64> = pen_down_runs(points)
        .into_iter()
        .flat_map(|r| {
            let run = &points[r];
            run.windows(2).map(|w| w[1].t - w[0].t).collect::<Vec<_>>()
        })
        .filter(|dt| *dt > 0.0)
        .collect();
    if dts.is_empty() {
        return DEFAULT_SAMPLE_RATE;
    }
    dts.sort_by(f64::total_cmp);
    1.0 / dts[dts.len() / 2]
}

/// Smooths x and y independently within each pen-down stroke.
///
/// Strokes shorter than `2 * radius + 1` points pass through untouched, and
/// the first and last point of every stroke keep their original position.
pub fn lowpass_filter(
    trace: &NormalizedTrace,
    cutoff_hz: f64,
    radius: usize,
) -> Result<NormalizedTrace, PreprocessError> {
    if !(cutoff_hz > 0.0) {
        return Err(PreprocessError::BadCutoff(cutoff_hz));
    }
    if radius < 1 {
        return Err(PreprocessError::BadRadius);
    }
    let mut out = trace.clone();
    let Some(kernel) = LowpassKernel::design(cutoff_hz, trace.sample_rate, radius) else {
        return Ok(out);
    };
    for run in trace.strokes() {
        if run.len() < 2 * radius + 1 {
            continue;
        }
        let xs: Vec<f64> = trace.points[run.clone()].iter().map(|p| p.x).collect();
        let ys: Vec<f64> = trace.points[run.clone()].iter().map(|p| p.y).collect();
        let fx = kernel.apply(&xs);
        let fy = kernel.apply(&ys);
        let last = run.len() - 1;
        for (k, i) in run.enumerate() {
            if k == 0 || k == last {
                continue;
            }
            out.points[i].x = fx[k];
            out.points[i].y = fy[k];
        }
    }
    Ok(out)
}

/// Symmetric zero-phase smoothing kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LowpassKernel {
    /// Taps for lags `-R..=R`.
    pub taps: Vec<f64>,
}

impl LowpassKernel {
    /// Designs the kernel with a -3 dB point at `cutoff_hz`. Returns `None`
    /// when no prototype within the Nyquist band reaches that cutoff, in
    /// which case no filtering is meaningful.
    pub fn design(cutoff_hz: f64, sample_rate: f64, radius: usize) -> Option<Self> {
        let nyquist = sample_rate / 2.0;
        let target = std::f64::consts::FRAC_1_SQRT_2;
        let gain_with_edge = |edge: f64| {
            Self::from_stopband_edge(edge, sample_rate, radius).gain(cutoff_hz, sample_rate)
        };
        let (mut lo, mut hi) = (cutoff_hz, 0.99 * nyquist);
        if !(lo < hi) || gain_with_edge(lo) >= target || gain_with_edge(hi) <= target {
            return None;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if gain_with_edge(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(Self::from_stopband_edge(0.5 * (lo + hi), sample_rate, radius))
    }

    /// Kernel built from a prototype with stopband edge `edge_hz`.
    pub fn from_stopband_edge(edge_hz: f64, sample_rate: f64, radius: usize) -> Self {
        let h = cheby2_impulse_response(edge_hz / (sample_rate / 2.0), IMPULSE_LEN);
        let lag = |k: usize| -> f64 { h[..h.len() - k].iter().zip(&h[k..]).map(|(a, b)| a * b).sum() };
        let half: Vec<f64> = (0..=radius).map(lag).collect();
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| half[(i as isize - radius as isize).unsigned_abs()])
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Self { taps }
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate;
        let r = self.radius() as f64;
        let h: f64 = self
            .taps
            .iter()
            .enumerate()
            .map(|(i, tap)| tap * (w * (i as f64 - r)).cos())
            .sum();
        h.abs()
    }

    /// Convolves with odd-symmetric extension about both ends.
    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len() as isize;
        let r = self.radius() as isize;
        let at = |i: isize| -> f64 {
            if i < 0 {
                2.0 * signal[0] - signal[(-i).min(n - 1) as usize]
            } else if i >= n {
                2.0 * signal[(n - 1) as usize] - signal[(2 * (n - 1) - i).max(0) as usize]
            } else {
                signal[i as usize]
            }
        };
        (0..n)
            .map(|i| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(k, tap)| tap * at(i + k as isize - r))
                    .sum()
            })
            .collect()
    }
}

/// Impulse response of the digital Chebyshev-II lowpass with normalized
/// stopband edge `wn` (1.0 = Nyquist), via bilinear transform.
fn cheby2_impulse_response(wn: f64, len: usize) -> Vec<f64> {
    let (zeros, poles, gain) = cheby2_digital_zpk(PROTOTYPE_ORDER, STOPBAND_DB, wn);
    let b: Vec<f64> = poly(&zeros).into_iter().map(|c| c * gain).collect();
    let a = poly(&poles);
    let mut h = vec![0.0; len];
    for n in 0..len {
        let mut acc = if n < b.len() { b[n] } else { 0.0 };
        for k in 1..a.len().min(n + 1) {
            acc -= a[k] * h[n - k];
        }
        h[n] = acc / a[0];
    }
    h
}

fn cheby2_digital_zpk(order: usize, rs_db: f64, wn: f64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    use std::f64::consts::PI;
    let n = order as f64;
    let de = 1.0 / (10f64.powf(0.1 * rs_db) - 1.0).sqrt();
    let mu = (1.0 / de).asinh() / n;
    let ms: Vec<f64> = (0..order).map(|i| -(n - 1.0) + 2.0 * i as f64).filter(|m| *m != 0.0).collect();
    let zeros: Vec<Complex64> = ms
        .iter()
        .map(|m| -(Complex64::i() / (m * PI / (2.0 * n)).sin()).conj())
        .collect();
    let poles: Vec<Complex64> = (0..order)
        .map(|i| {
            let m = -(n - 1.0) + 2.0 * i as f64;
            let p = -(Complex64::i() * PI * m / (2.0 * n)).exp();
            let p = Complex64::new(mu.sinh() * p.re, mu.cosh() * p.im);
            1.0 / p
        })
        .collect();
    let k_analog = (poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * -p)
        / zeros.iter().fold(Complex64::new(1.0, 0.0), |acc, z| acc * -z))
    .re;

    // Prewarp and scale to the edge (fs normalized to 2).
    let fs2 = 4.0;
    let warped = fs2 * (PI * wn / 2.0).tan();
    let zeros: Vec<Complex64> = zeros.iter().map(|z| z * warped).collect();
    let poles: Vec<Complex64> = poles.iter().map(|p| p * warped).collect();
    let k_analog = k_analog * warped.powi(poles.len() as i32 - zeros.len() as i32);

    let bilinear = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let mut zd: Vec<Complex64> = zeros.iter().map(bilinear).collect();
    let pd: Vec<Complex64> = poles.iter().map(bilinear).collect();
    zd.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(poles.len() - zeros.len()));
    let num = zeros.iter().fold(Complex64::new(1.0, 0.0), |acc, z| acc * (fs2 - z));
    let den = poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    (zd, pd, k_analog * (num / den).re)
}

/// Real coefficients of `prod (x - r_i)`, highest power first.
fn poly(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}
