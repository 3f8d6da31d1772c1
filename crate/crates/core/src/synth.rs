//! Synthetic Beta-elliptic handwriting.
//!
//! A glyph is a chain of segments; each segment moves the pen along two
//! quarter-ellipses that share a tangent at their apex, with speed following
//! a single Beta bump whose support abuts its neighbours'. Speed therefore
//! falls to zero exactly at every segment boundary, which is where the
//! segmenter is expected to cut. Dots are short separate strokes drawn right
//! after their glyph.
//!
//! Generator units: the baseline is `y = 0`, `y` grows downward and words are
//! written right to left, so each glyph ends to the left of where it starts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{beta_eval, BetaParams};
use crate::ink::{InkPoint, InkTrace};
use crate::segment::VelocityProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphSegment {
    /// Pen displacement from start to end (before jitter).
    pub dx: f64,
    pub dy: f64,
    /// Apex offset as a fraction of the half chord; the sign picks the side.
    pub bulge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub symbol: String,
    pub segments: Vec<GlyphSegment>,
    /// Dot positions relative to the glyph's horizontal centre and the baseline.
    pub dots: Vec<(f64, f64)>,
}

impl Glyph {
    pub fn segment_count(&self) -> usize {
        self.segments.len() + self.dots.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    pub glyphs: Vec<Glyph>,
}

fn seg(dx: f64, dy: f64, bulge: f64) -> GlyphSegment {
    GlyphSegment { dx, dy, bulge }
}

impl Alphabet {
    /// Ten glyphs loosely modelled on Arabic letters, with 2 to 7 segments.
    pub fn default_ten() -> Self {
        let g = |symbol: &str, segments: Vec<GlyphSegment>, dots: Vec<(f64, f64)>| Glyph {
            symbol: symbol.to_string(),
            segments,
            dots,
        };
        Self {
            glyphs: vec![
                g("ا", vec![seg(0.0, -9.0, 0.08), seg(-2.0, 9.0, 0.15)], vec![]),
                g("ب", vec![seg(-1.0, -1.5, 0.3), seg(-5.0, 1.5, -0.25)], vec![(0.0, 2.5)]),
                g("ج", vec![seg(-4.0, -3.0, 0.2), seg(3.0, 0.0, 0.5), seg(-1.0, 3.0, -0.6)], vec![(0.5, 3.0)]),
                g("د", vec![seg(-1.5, -4.0, 0.1), seg(-1.0, 4.0, 0.3), seg(-3.0, 0.0, 0.1)], vec![]),
                g(
                    "ه",
                    vec![seg(-2.0, -3.0, 0.4), seg(-2.0, 3.0, 0.4), seg(2.5, -2.0, 0.4), seg(1.5, 2.0, 0.3), seg(-5.0, 0.0, 0.15)],
                    vec![],
                ),
                g(
                    "و",
                    vec![seg(-2.0, -3.0, 0.5), seg(-1.0, 3.0, 0.5), seg(2.0, -1.5, 0.3), seg(-4.0, 1.5, 0.4)],
                    vec![],
                ),
                g("ر", vec![seg(-1.0, 4.0, 0.2), seg(-3.0, -4.0, -0.3)], vec![]),
                g(
                    "س",
                    vec![
                        seg(-1.0, -3.0, 0.1),
                        seg(-1.0, 3.0, 0.1),
                        seg(-1.0, -3.0, 0.1),
                        seg(-1.0, 3.0, 0.1),
                        seg(-1.0, -3.0, 0.1),
                        seg(-1.0, 3.0, 0.1),
                        seg(-4.0, 0.0, 0.4),
                    ],
                    vec![],
                ),
                g(
                    "ع",
                    vec![
                        seg(-2.0, -3.0, 0.4),
                        seg(2.0, -3.0, 0.5),
                        seg(-1.0, 3.0, 0.2),
                        seg(-2.0, 3.0, 0.3),
                        seg(1.0, 3.0, 0.4),
                        seg(-4.0, -3.0, 0.2),
                    ],
                    vec![],
                ),
                g(
                    "ح",
                    vec![seg(-4.0, -1.0, 0.1), seg(3.0, 2.0, 0.4), seg(-3.0, 4.0, -0.5), seg(-2.0, -2.0, 0.3), seg(-1.0, -3.0, 0.2)],
                    vec![],
                ),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn symbols(&self) -> Vec<String> {
        self.glyphs.iter().map(|g| g.symbol.clone()).collect()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.glyphs.iter().position(|g| g.symbol == symbol)
    }

    pub fn spell(&self, word: &[usize]) -> String {
        word.iter().map(|&c| self.glyphs[c].symbol.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: f64,
    /// Relative uniform perturbation of every shape and timing parameter.
    pub jitter: f64,
    /// Segment duration = `base_duration + duration_per_unit · chord`.
    pub base_duration: f64,
    pub duration_per_unit: f64,
    pub p: f64,
    pub tc_rel: f64,
    /// Time the pen spends in the air for each lift.
    pub lift_gap: f64,
    pub dot_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 100.0,
            jitter: 0.05,
            base_duration: 0.12,
            duration_per_unit: 0.02,
            p: 2.0,
            tc_rel: 0.45,
            lift_gap: 0.08,
            dot_size: 0.15,
        }
    }
}

/// Ground truth for one generated segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    /// Position of the owning glyph within the word.
    pub char_index: usize,
    pub class: usize,
    pub t0: f64,
    pub t1: f64,
    pub tc: f64,
    pub is_dot: bool,
    pub beta: Option<BetaParams>,
    /// Analytic shape: half chord, apex sags of both quarter arcs, apex tangent.
    pub ellipse: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub trace: InkTrace,
    pub word: Vec<usize>,
    pub segments: Vec<SegmentTruth>,
    /// Exact speed at every trace point (zero at pen-up markers).
    pub velocity: Vec<f64>,
    /// Baseline height in raw trace coordinates.
    pub baseline_y: f64,
}

impl SynthTrace {
    /// The exact speed samples arranged like a measured profile.
    pub fn truth_profile(&self) -> VelocityProfile {
        let pts = self.trace.points();
        let mut strokes = Vec::new();
        for run in self.trace.strokes() {
            let t = run.clone().map(|i| pts[i].t).collect();
            let v = run.map(|i| self.velocity[i]).collect();
            strokes.push((t, v));
        }
        let mut profile = VelocityProfile::from_strokes(&strokes);
        let down: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].is_down()).collect();
        profile.source_indices = down;
        profile
    }

    /// Word position of the truth segment whose support contains `tc`.
    pub fn char_at(&self, tc: f64) -> Option<usize> {
        self.segments.iter().find(|s| s.t0 <= tc && tc <= s.t1).map(|s| s.char_index)
    }
}

struct Builder<'a> {
    cfg: &'a SynthConfig,
    points: Vec<InkPoint>,
    velocity: Vec<f64>,
    truth: Vec<SegmentTruth>,
    t: f64,
    pen: (f64, f64),
}

impl Builder<'_> {
    fn lift_to(&mut self, target: (f64, f64)) {
        if self.points.is_empty() {
            self.pen = target;
            return;
        }
        let mid = ((self.pen.0 + target.0) / 2.0, (self.pen.1 + target.1) / 2.0);
        self.points.push(InkPoint::up(mid.0, mid.1, self.t + self.cfg.lift_gap / 2.0));
        self.velocity.push(0.0);
        self.t += self.cfg.lift_gap;
        self.pen = target;
    }

    /// Starts a new pen-down stroke at the current pen position.
    fn put_down(&mut self) {
        self.points.push(InkPoint::down(self.pen.0, self.pen.1, self.t));
        self.velocity.push(0.0);
    }

    fn segment(&mut self, shape: &Shape, char_index: usize, class: usize) {
        let rate = self.cfg.sample_rate;
        let (t0, tc, t1) = (self.t, self.t + shape.duration * shape.tc_rel, self.t + shape.duration);
        let n1 = (((tc - t0) * rate).round() as usize).max(2);
        let n2 = (((t1 - tc) * rate).round() as usize).max(2);
        let mut times: Vec<f64> = (1..=n1).map(|k| t0 + (tc - t0) * k as f64 / n1 as f64).collect();
        times.extend((1..=n2).map(|k| tc + (t1 - tc) * k as f64 / n2 as f64));
        *times.last_mut().unwrap() = t1;
        times[n1 - 1] = tc;

        let path = shape.path(self.pen);
        let unit = BetaParams::with_peak_condition(t0, t1, tc, shape.p, 1.0);
        let total = beta_integral(&unit, t0, t1);
        let k = path.length() / total;
        let beta = BetaParams { k, ..unit };

        let mut acc = 0.0;
        let mut prev = t0;
        for &t in &times {
            acc += beta_integral(&unit, prev, t);
            prev = t;
            let (x, y) = path.at_length(k * acc);
            self.points.push(InkPoint::down(x, y, t));
            self.velocity.push(beta_eval(&beta, t));
        }
        self.pen = path.end();
        self.t = t1;
        self.truth.push(SegmentTruth {
            char_index,
            class,
            t0,
            t1,
            tc,
            is_dot: false,
            beta: Some(beta),
            ellipse: Some(shape.expected_arcs()),
        });
    }

    fn dot(&mut self, at: (f64, f64), char_index: usize, class: usize) {
        self.lift_to(at);
        let dt = 1.0 / self.cfg.sample_rate;
        let t0 = self.t;
        let s = self.cfg.dot_size;
        for k in 0..3 {
            let f = k as f64 / 2.0;
            self.points.push(InkPoint::down(at.0 - s * f, at.1 + 0.5 * s * f, self.t));
            self.velocity.push(if k == 1 { s * 1.118 / (2.0 * dt) } else { 0.0 });
            if k < 2 {
                self.t += dt;
            }
        }
        self.pen = (at.0 - s, at.1 + 0.5 * s);
        self.truth.push(SegmentTruth {
            char_index,
            class,
            t0,
            t1: self.t,
            tc: t0 + dt,
            is_dot: true,
            beta: None,
            ellipse: None,
        });
    }
}

struct Shape {
    /// Half chord.
    a: f64,
    h1: f64,
    h2: f64,
    side: f64,
    theta: f64,
    duration: f64,
    p: f64,
    tc_rel: f64,
}

impl Shape {
    fn local(&self, phi: f64) -> (f64, f64) {
        // Two quarter ellipses meeting at (0, −side·h1) with a horizontal
        // tangent there.
        let x = -self.a * phi.cos();
        let y = if phi <= std::f64::consts::FRAC_PI_2 {
            -self.side * self.h1 * phi.sin()
        } else {
            -self.side * ((self.h1 - self.h2) + self.h2 * phi.sin())
        };
        (x, y)
    }

    fn path(&self, start: (f64, f64)) -> Polyline {
        const N: usize = 512;
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let origin = self.local(0.0);
        let pts: Vec<(f64, f64)> = (0..=N)
            .map(|i| {
                let (x, y) = self.local(std::f64::consts::PI * i as f64 / N as f64);
                let (x, y) = (x - origin.0, y - origin.1);
                (start.0 + c * x - s * y, start.1 + s * x + c * y)
            })
            .collect();
        Polyline::new(pts)
    }

    fn expected_arcs(&self) -> [f64; 4] {
        let sag = |h: f64| (2f64.sqrt() - 1.0) * self.a * h / self.a.hypot(h);
        let half_chord = 0.5 * (4.0 * self.a * self.a + (self.h1 - self.h2).powi(2)).sqrt();
        [half_chord, sag(self.h1), sag(self.h2), crate::features::wrap_angle(self.theta)]
    }
}

struct Polyline {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(pts: Vec<(f64, f64)>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cum.push(cum.last().unwrap() + d);
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn end(&self) -> (f64, f64) {
        *self.pts.last().unwrap()
    }

    fn at_length(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.pts[i],
            Err(i) => i.clamp(1, self.pts.len() - 1),
        };
        let (a, b) = (self.cum[i - 1], self.cum[i]);
        let f = if b > a { (s - a) / (b - a) } else { 0.0 };
        let (p, q) = (self.pts[i - 1], self.pts[i]);
        (p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1))
    }
}

/// Composite Simpson integral of a Beta bump between two times.
fn beta_integral(b: &BetaParams, lo: f64, hi: f64) -> f64 {
    const N: usize = 64;
    let h = (hi - lo) / N as f64;
    let mut sum = beta_eval(b, lo) + beta_eval(b, hi);
    for i in 1..N {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * beta_eval(b, lo + h * i as f64);
    }
    sum * h / 3.0
}

fn jittered(rng: &mut impl Rng, value: f64, j: f64) -> f64 {
    if j == 0.0 {
        value
    } else {
        value * (1.0 + rng.random_range(-j..=j))
    }
}

/// Draws one word.
pub fn generate_word(alphabet: &Alphabet, word: &[usize], cfg: &SynthConfig, rng: &mut impl Rng) -> SynthTrace {
    let j = cfg.jitter;
    let mut b = Builder { cfg, points: Vec::new(), velocity: Vec::new(), truth: Vec::new(), t: 0.0, pen: (0.0, 0.0) };
    let mut need_pen_down = true;
    for (ci, &class) in word.iter().enumerate() {
        let glyph = &alphabet.glyphs[class];
        let start_x = b.pen.0;
        for gs in &glyph.segments {
            let len = jittered(rng, gs.dx.hypot(gs.dy), j);
            let theta = gs.dy.atan2(gs.dx) + if j == 0.0 { 0.0 } else { rng.random_range(-j..=j) * std::f64::consts::FRAC_PI_2 };
            let bulge = gs.bulge.abs();
            let a = len / 2.0;
            let shape = Shape {
                a,
                h1: jittered(rng, bulge, j) * a,
                h2: jittered(rng, bulge, j) * a,
                side: if gs.bulge < 0.0 { -1.0 } else { 1.0 },
                theta,
                duration: jittered(rng, cfg.base_duration + cfg.duration_per_unit * len, j),
                p: jittered(rng, cfg.p, j),
                tc_rel: jittered(rng, cfg.tc_rel, j).clamp(0.2, 0.8),
            };
            if need_pen_down {
                b.put_down();
                need_pen_down = false;
            }
            b.segment(&shape, ci, class);
        }
        if !glyph.dots.is_empty() {
            let resume = b.pen;
            let centre = 0.5 * (start_x + resume.0);
            for &(ox, oy) in &glyph.dots {
                let at = (centre + jittered(rng, ox, j), jittered(rng, oy, j));
                b.dot(at, ci, class);
            }
            b.lift_to(resume);
            need_pen_down = true;
        }
    }
    let label = alphabet.spell(word);
    let trace = InkTrace::new(b.points, Some(label), Some(cfg.sample_rate)).expect("generator emits valid ink");
    SynthTrace { trace, word: word.to_vec(), segments: b.truth, velocity: b.velocity, baseline_y: 0.0 }
}

/// Draws `count` distinct words of random length in `lengths` over the alphabet.
pub fn make_lexicon(alphabet: &Alphabet, count: usize, lengths: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<Vec<usize>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while words.len() < count && attempts < count * 1000 {
        attempts += 1;
        let n = rng.random_range(lengths.clone());
        let w: Vec<usize> = (0..n).map(|_| rng.random_range(0..alphabet.len())).collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// Trace `i` of a corpus draws word `i mod |lexicon|` with its own generator
/// stream, so any trace can be regenerated in isolation.
pub fn generate_corpus(alphabet: &Alphabet, lexicon: &[Vec<usize>], count: usize, seed: u64, cfg: &SynthConfig) -> Vec<SynthTrace> {
    (0..count)
        .map(|i| {
            let mut rng = trace_rng(seed, i as u64);
            generate_word(alphabet, &lexicon[i % lexicon.len()], cfg, &mut rng)
        })
        .collect()
}

pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> SynthConfig {
        SynthConfig { jitter: 0.0, ..SynthConfig::default() }
    }

    #[test]
    fn segment_counts_match_glyphs() {
        let abc = Alphabet::default_ten();
        let counts: Vec<usize> = abc.glyphs.iter().map(Glyph::segment_count).collect();
        assert_eq!(counts, vec![2, 3, 4, 3, 5, 4, 2, 7, 6, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 0..abc.len() {
            let s = generate_word(&abc, &[c], &SynthConfig::default(), &mut rng);
            assert_eq!(s.segments.len(), counts[c]);
        }
    }

    #[test]
    fn truth_velocity_peaks_on_samples() {
        let abc = Alphabet::default_ten();
        let s = generate_word(&abc, &[1, 7], &noiseless(), &mut ChaCha8Rng::seed_from_u64(3));
        let pts = s.trace.points();
        for seg in s.segments.iter().filter(|g| !g.is_dot) {
            let beta = seg.beta.unwrap();
            assert!(beta.peak_condition_error() < 1e-12);
            let peak = pts.iter().position(|p| p.t == seg.tc).expect("tc is a sample");
            assert!((s.velocity[peak] - beta.k).abs() < 1e-12 * beta.k);
            let first = pts.iter().position(|p| p.t == seg.t0).unwrap();
            assert_eq!(s.velocity[first], 0.0);
        }
    }

    #[test]
    fn measured_speed_tracks_truth() {
        let abc = Alphabet::default_ten();
        let s = generate_word(&abc, &[3], &noiseless(), &mut ChaCha8Rng::seed_from_u64(0));
        let pts = s.trace.points();
        let peak = s.velocity.iter().copied().fold(0.0, f64::max);
        for i in 1..pts.len() - 1 {
            let (a, b) = (pts[i - 1], pts[i + 1]);
            let v = (b.x - a.x).hypot(b.y - a.y) / (b.t - a.t);
            assert!((v - s.velocity[i]).abs() < 0.1 * peak, "{i}: {v} vs {}", s.velocity[i]);
        }
    }

    #[test]
    fn bodies_return_to_baseline() {
        let abc = Alphabet::default_ten();
        for c in 0..abc.len() {
            let s = generate_word(&abc, &[c], &noiseless(), &mut ChaCha8Rng::seed_from_u64(0));
            let last_down = s.trace.points().iter().rev().find(|p| p.is_down()).unwrap();
            if abc.glyphs[c].dots.is_empty() {
                assert!(last_down.y.abs() < 0.05, "{}: {}", abc.glyphs[c].symbol, last_down.y);
                assert!(last_down.x < 0.0);
            }
        }
    }

    #[test]
    fn dots_are_separate_three_point_strokes() {
        let abc = Alphabet::default_ten();
        let s = generate_word(&abc, &[1, 0], &SynthConfig::default(), &mut ChaCha8Rng::seed_from_u64(9));
        let strokes = s.trace.strokes();
        assert_eq!(strokes.len(), 3);
        assert_eq!(strokes[1].len(), 3);
        assert_eq!(s.trace.label.as_deref(), Some("با"));
    }

    #[test]
    fn lexicon_is_distinct_and_seeded() {
        let abc = Alphabet::default_ten();
        let a = make_lexicon(&abc, 100, 2..=5, 11);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|w| (2..=5).contains(&w.len())));
        for (i, w) in a.iter().enumerate() {
            assert!(!a[..i].contains(w));
        }
        assert_eq!(a, make_lexicon(&abc, 100, 2..=5, 11));
        assert_ne!(a, make_lexicon(&abc, 100, 2..=5, 12));
    }

    #[test]
    fn corpus_is_reproducible() {
        let abc = Alphabet::default_ten();
        let lex = make_lexicon(&abc, 5, 2..=3, 1);
        let a = generate_corpus(&abc, &lex, 7, 42, &SynthConfig::default());
        let b = generate_corpus(&abc, &lex, 7, 42, &SynthConfig::default());
        assert_eq!(a.iter().map(|s| s.trace.clone()).collect::<Vec<_>>(), b.iter().map(|s| s.trace.clone()).collect::<Vec<_>>());
        assert_eq!(a[5].word, lex[0]);
    }
}
