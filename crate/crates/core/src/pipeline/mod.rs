//! The full recognizer: feature extraction, training of every stage, the
//! model file, decoding and evaluation.

mod corpus;
mod eval;
mod gathering;
mod model;
mod train;

pub use corpus::{read_corpus, read_corpus_lexicon, write_corpus, Corpus, CorpusEntry, LEXICON_FILE, MANIFEST_FILE};
pub use eval::{evaluate, random_topk_rate, EvalReport, SetReport, TOP_K};
pub use gathering::{check_gathering, published_table, GatheringAudit, GatheringError, GatheringRow, GatheringTable, Position};
pub use model::{alphabet_hash, mlp_only_decode, AlphabetInfo, MlpModel, PipelineModel, Recognition, Recognizer, SegmentSpan, FORMAT_VERSION};
pub use train::{segment_labels, train_system, LabeledTrace, TrainingReport};

use thiserror::Error;

use crate::baseline::{annotate, BaselineModel};
use crate::config::Config;
use crate::features::{segment_features_lenient, SegmentFeatures};
use crate::ink::InkTrace;
use crate::preprocess::{lowpass_filter, normalize_size, NormalizedTrace};
use crate::segment::{curvilinear_velocity, segment_strokes, Segment, VelocityProfile};

/// Length of the per-segment descriptor: ten Beta-elliptic parameters plus
/// the baseline block.
pub const FEATURE_LEN: usize = SegmentFeatures::LEN + crate::baseline::BASELINE_FEATURES;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    /// A processing stage failed; `stage` names it ("preprocess",
    /// "segmenter", "mlp", "vq", "hmm", ...).
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("class {symbol:?} (id {class}) never occurs in the training corpus")]
    Coverage { class: usize, symbol: String },
    #[error("label {0:?} is not in the lexicon")]
    UnknownLabel(String),
    #[error("alphabet mismatch: model {model}, corpus {corpus}")]
    AlphabetMismatch { model: String, corpus: String },
    #[error("model: {0}")]
    Model(String),
    #[error("corpus: {0}")]
    Corpus(String),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Stage { stage, .. } => stage,
            PipelineError::Coverage { .. } => "coverage",
            PipelineError::UnknownLabel(_) => "lexicon",
            PipelineError::AlphabetMismatch { .. } | PipelineError::Model(_) => "model",
            PipelineError::Corpus(_) => "corpus",
        }
    }

    /// Whether the trace itself is unusable (as opposed to a broken model or
    /// corpus).
    pub fn is_degenerate_input(&self) -> bool {
        matches!(self, PipelineError::Stage { stage: "preprocess" | "segmenter", .. })
    }
}

pub(crate) fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Everything the front end derives from one trace.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub trace: NormalizedTrace,
    pub profile: VelocityProfile,
    pub segments: Vec<Segment>,
    pub baseline: BaselineModel,
    /// One [`FEATURE_LEN`]-vector per segment, in time order.
    pub features: Vec<Vec<f64>>,
}

/// normalize → low-pass → velocity → segments → baseline → features.
pub fn extract_features(trace: &InkTrace, cfg: &Config) -> Result<Extraction, PipelineError> {
    let norm = normalize_size(trace).map_err(stage_err("preprocess"))?;
    let filtered = lowpass_filter(&norm, cfg.preprocess.cutoff_hz, cfg.preprocess.radius).map_err(stage_err("preprocess"))?;
    let profile = curvilinear_velocity(&filtered).map_err(stage_err("segmenter"))?;
    let mut segments = segment_strokes(&profile, &cfg.segment_config());
    if segments.is_empty() {
        return Err(PipelineError::Stage { stage: "segmenter", message: "trace yields no segments".into() });
    }
    let (baseline, blocks) = annotate(&filtered, &profile, &mut segments, &cfg.baseline_config());
    let features = segments
        .iter()
        .zip(blocks)
        .map(|(s, b)| {
            let mut v = segment_features_lenient(s, &profile, &filtered).to_array().to_vec();
            v.extend_from_slice(&b);
            v
        })
        .collect();
    Ok(Extraction { trace: filtered, profile, segments, baseline, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ink::InkPoint;
    use crate::synth::{generate_word, Alphabet, SynthConfig};
    use rand::SeedableRng;

    #[test]
    fn one_segment_character_gives_one_observation() {
        // A single noiseless arc.
        let alphabet = Alphabet::default_ten();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = generate_word(&alphabet, &[0], &SynthConfig { jitter: 0.0, ..SynthConfig::default() }, &mut rng);
        let ex = extract_features(&s.trace, &Config::default()).unwrap();
        assert_eq!(ex.features.len(), s.segments.len());
        assert!(ex.features.iter().all(|f| f.len() == FEATURE_LEN && f.iter().all(|x| x.is_finite())));

        let points = (0..20).map(|i| InkPoint::down(i as f64, 0.5 * i as f64, i as f64 * 0.01)).collect();
        let line = InkTrace::new(points, None, None).unwrap();
        assert_eq!(extract_features(&line, &Config::default()).unwrap().features.len(), 1);
    }

    #[test]
    fn degenerate_trace_is_tagged_preprocess() {
        let points = vec![InkPoint::down(3.0, 3.0, 0.0), InkPoint::down(3.0, 3.0, 0.01)];
        let trace = InkTrace::new(points, None, None).unwrap();
        let err = extract_features(&trace, &Config::default()).unwrap_err();
        assert_eq!(err.stage(), "preprocess");
        assert!(err.is_degenerate_input());
        assert!(err.to_string().starts_with("preprocess: "));
    }
}
