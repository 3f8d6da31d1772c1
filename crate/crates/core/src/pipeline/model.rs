use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gathering::{GatheringAudit, GatheringTable};
use super::{extract_features, stage_err, Extraction, PipelineError, FEATURE_LEN};
use crate::config::{Config, Variant};
use crate::hmm::{decode_open, neg_log_scaled_likelihood, DecodeStatus, Decoder, HmmSet, Hypothesis, Lexicon, Observations, RecognitionResult};
use crate::ink::InkTrace;
use crate::mlp::{context_windows, posterior_vector, OconNet, Standardizer};
use crate::vq::Codebook;

pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 over the newline-joined symbols.
pub fn alphabet_hash(symbols: &[String]) -> String {
    hex::encode(Sha256::digest(symbols.join("\n").as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphabetInfo {
    pub symbols: Vec<String>,
    pub hash: String,
}

impl AlphabetInfo {
    pub fn new(symbols: Vec<String>) -> Self {
        let hash = alphabet_hash(&symbols);
        Self { symbols, hash }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn spell(&self, chars: &[usize]) -> String {
        chars.iter().map(|&c| self.symbols[c].as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Neighbouring segments on each side in the network input.
    pub window: usize,
    pub nets: Vec<OconNet>,
    /// Class priors `p(S)` from the training labels.
    pub priors: Vec<f64>,
}

impl MlpModel {
    /// Posterior vector of every segment.
    pub fn posteriors(&self, standardized: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PipelineError> {
        context_windows(standardized, self.window)
            .iter()
            .map(|x| posterior_vector(&self.nets, x, &self.priors).map(|p| p.values).map_err(stage_err("mlp")))
            .collect()
    }

    /// `−log p(S|X) + α log p(S)` per class.
    pub fn neg_log_scaled(&self, posterior: &[f64], alpha: f64) -> Result<Vec<f64>, PipelineError> {
        posterior.iter().zip(&self.priors).map(|(&p, &q)| neg_log_scaled_likelihood(p, q, alpha).map_err(stage_err("hmm"))).collect()
    }
}

/// One document holding every trained stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub format_version: u32,
    pub variant: Variant,
    /// Every effective configuration value.
    pub config: BTreeMap<String, String>,
    pub alphabet: AlphabetInfo,
    pub standardization: Standardizer,
    pub mlp: Option<MlpModel>,
    pub vq: Option<Codebook>,
    pub hmm: Option<HmmSet>,
    pub lexicon: Lexicon,
    pub gathering: GatheringTable,
}

impl PipelineModel {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("model serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let model: PipelineModel = serde_json::from_slice(bytes).map_err(|e| PipelineError::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Rebuilds the configuration the model was trained with.
    pub fn effective_config(&self) -> Result<Config, PipelineError> {
        let mut cfg = Config::default();
        for (k, v) in &self.config {
            cfg.set(k, v).map_err(|e| PipelineError::Model(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Checks that every section agrees on the alphabet and dimensions.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Model(m));
        let classes = self.alphabet.len();
        if self.format_version != FORMAT_VERSION {
            return bad(format!("format version {} (expected {FORMAT_VERSION})", self.format_version));
        }
        if alphabet_hash(&self.alphabet.symbols) != self.alphabet.hash {
            return bad("alphabet hash does not match its symbols".into());
        }
        if self.standardization.mean.len() != FEATURE_LEN || self.standardization.std.len() != FEATURE_LEN {
            return bad("standardization has the wrong dimension".into());
        }
        let needs_mlp = self.variant != Variant::DiscreteHmm;
        let needs_hmm = self.variant != Variant::MlpOnly;
        if needs_mlp != self.mlp.is_some() || needs_hmm != self.hmm.is_some() {
            return bad(format!("sections do not match variant {}", self.variant.name()));
        }
        if let Some(mlp) = &self.mlp {
            let input = FEATURE_LEN * (2 * mlp.window + 1);
            if mlp.nets.len() != classes || mlp.priors.len() != classes || mlp.nets.iter().any(|n| n.input_size != input) {
                return bad("mlp section disagrees with the alphabet".into());
            }
        }
        if let Some(hmm) = &self.hmm {
            if hmm.classes() != classes {
                return bad("hmm class count disagrees with the alphabet".into());
            }
            let direct = self.config.get("hmm.direct_emission").is_some_and(|v| v == "true");
            match (&self.vq, direct) {
                (Some(book), false) => {
                    let dim = if self.variant == Variant::Hybrid { classes } else { FEATURE_LEN };
                    if book.dimension() != dim || book.size() != hmm.codebook_size {
                        return bad("codebook disagrees with the hmm section".into());
                    }
                }
                (None, true) if self.variant == Variant::Hybrid => {}
                _ => return bad("vq section does not match the emission mode".into()),
            }
        }
        self.lexicon.check_classes(classes).map_err(|e| PipelineError::Model(e.to_string()))
    }

    /// Short content hash identifying this exact model.
    pub fn version(&self) -> String {
        let digest = Sha256::digest(self.to_json());
        format!("{}-{}", self.variant.name(), &hex::encode(digest)[..12])
    }
}

/// Per-segment overlay: original point indices and delayed flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub first_point: usize,
    pub last_point: usize,
    pub t0: f64,
    pub t1: f64,
    pub delayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub result: RecognitionResult,
    pub segments: Vec<SegmentSpan>,
    /// Gathering check of the best hypothesis.
    pub gathering: GatheringAudit,
}

/// A loaded model ready to decode.
#[derive(Debug, Clone)]
pub struct Recognizer {
    model: PipelineModel,
    cfg: Config,
    decoder: Option<Decoder>,
    version: String,
}

enum Front {
    Hmm(Observations),
    LogPosteriors(Vec<Vec<f64>>),
}

impl Recognizer {
    pub fn new(model: PipelineModel) -> Result<Self, PipelineError> {
        model.validate()?;
        let cfg = model.effective_config()?;
        let decoder = match &model.hmm {
            Some(set) => Some(Decoder::new(set, &model.lexicon).map_err(stage_err("hmm"))?),
            None => None,
        };
        let version = model.version();
        Ok(Self { model, cfg, decoder, version })
    }

    pub fn model(&self) -> &PipelineModel {
        &self.model
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn extract(&self, trace: &InkTrace) -> Result<Extraction, PipelineError> {
        extract_features(trace, &self.cfg)
    }

    fn front(&self, ex: &Extraction) -> Result<Front, PipelineError> {
        let rows: Vec<Vec<f64>> = ex.features.iter().map(|f| self.model.standardization.apply(f)).collect();
        let alpha = self.cfg.hmm.alpha;
        match (&self.model.mlp, self.model.variant) {
            (Some(mlp), Variant::MlpOnly) => Ok(Front::LogPosteriors(mlp.posteriors(&rows)?.into_iter().map(|p| p.iter().map(|x| x.ln()).collect()).collect())),
            (Some(mlp), _) => {
                let scaled = mlp.posteriors(&rows)?.iter().map(|p| mlp.neg_log_scaled(p, alpha)).collect::<Result<Vec<_>, _>>()?;
                match &self.model.vq {
                    Some(book) => Ok(Front::Hmm(Observations::Symbols(scaled.iter().map(|v| book.quantize(v).map_err(stage_err("vq"))).collect::<Result<_, _>>()?))),
                    None => Ok(Front::Hmm(Observations::Scaled(scaled.into_iter().map(|v| v.into_iter().map(|x| -x).collect()).collect()))),
                }
            }
            (None, _) => {
                let book = self.model.vq.as_ref().ok_or_else(|| PipelineError::Model("missing codebook".into()))?;
                Ok(Front::Hmm(Observations::Symbols(rows.iter().map(|v| book.quantize(v).map_err(stage_err("vq"))).collect::<Result<_, _>>()?)))
            }
        }
    }

    /// The observation sequence fed to the HMMs (`None` for mlp-only).
    pub fn observations(&self, ex: &Extraction) -> Result<Option<Observations>, PipelineError> {
        Ok(match self.front(ex)? {
            Front::Hmm(obs) => Some(obs),
            Front::LogPosteriors(_) => None,
        })
    }

    pub fn recognize(&self, trace: &InkTrace, n: usize) -> Result<Recognition, PipelineError> {
        let ex = self.extract(trace)?;
        self.recognize_extraction(&ex, n)
    }

    pub fn recognize_extraction(&self, ex: &Extraction, n: usize) -> Result<Recognition, PipelineError> {
        let hard = self.cfg.recognizer.gathering_hard;
        let depth = if hard { self.model.lexicon.len() } else { n };
        let mut result = match self.front(ex)? {
            Front::Hmm(obs) if self.cfg.hmm.open_vocabulary => {
                let set = self.model.hmm.as_ref().expect("validated");
                match decode_open(set, &obs) {
                    Ok(d) => RecognitionResult {
                        hypotheses: vec![Hypothesis { label: self.model.alphabet.spell(&d.chars), chars: d.chars, log_score: d.log_score, spans: d.spans }],
                        status: DecodeStatus::Ok,
                    },
                    Err(crate::hmm::HmmError::ImpossibleAlignment { .. }) => RecognitionResult { hypotheses: vec![], status: DecodeStatus::NoAlignment },
                    Err(e) => return Err(stage_err("hmm")(e)),
                }
            }
            Front::Hmm(obs) => {
                let set = self.model.hmm.as_ref().expect("validated");
                self.decoder.as_ref().expect("built with hmm").recognize(set, &obs, depth).map_err(stage_err("hmm"))?
            }
            Front::LogPosteriors(lp) => mlp_only_decode(&self.model.lexicon, &lp, depth),
        };
        let symbols = &self.model.alphabet.symbols;
        if hard {
            result.hypotheses.retain(|h| {
                let a = self.model.gathering.audit(symbols, &h.chars, &h.spans);
                a.satisfied == a.checked
            });
            result.hypotheses.truncate(n);
            if result.hypotheses.is_empty() {
                result.status = DecodeStatus::NoAlignment;
            }
        }
        let gathering = result.hypotheses.first().map(|h| self.model.gathering.audit(symbols, &h.chars, &h.spans)).unwrap_or_default();
        let segments = ex
            .segments
            .iter()
            .map(|s| SegmentSpan {
                first_point: ex.profile.source_indices[s.first],
                last_point: ex.profile.source_indices[s.last],
                t0: s.t0,
                t1: s.t1,
                delayed: s.delayed,
            })
            .collect();
        Ok(Recognition { result, segments, gathering })
    }
}

/// Lexicon decoding from posteriors alone: each word's characters take
/// consecutive, non-empty runs of segments, scored by summed log posterior.
pub fn mlp_only_decode(lexicon: &Lexicon, log_post: &[Vec<f64>], n: usize) -> RecognitionResult {
    let t_len = log_post.len();
    let mut hyps = Vec::new();
    for entry in lexicon.entries() {
        let k = entry.chars.len();
        if k > t_len || t_len == 0 {
            continue;
        }
        // dp[i][t]: first t segments spread over the first i characters,
        // segment t − 1 belonging to character i − 1.
        let mut dp = vec![vec![f64::NEG_INFINITY; t_len + 1]; k + 1];
        let mut from_prev = vec![vec![false; t_len + 1]; k + 1];
        dp[0][0] = 0.0;
        for i in 1..=k {
            for t in i..=t_len {
                let stay = dp[i][t - 1];
                let enter = dp[i - 1][t - 1];
                let (best, entered) = if enter >= stay { (enter, true) } else { (stay, false) };
                dp[i][t] = best + log_post[t - 1][entry.chars[i - 1]];
                from_prev[i][t] = entered;
            }
        }
        let score = dp[k][t_len];
        if score == f64::NEG_INFINITY {
            continue;
        }
        let mut spans: Vec<Range<usize>> = vec![0..0; k];
        let (mut i, mut t, mut end) = (k, t_len, t_len);
        while i > 0 {
            let entered = from_prev[i][t];
            t -= 1;
            if entered {
                spans[i - 1] = t..end;
                end = t;
                i -= 1;
            }
        }
        hyps.push(Hypothesis { label: entry.word.clone(), chars: entry.chars.clone(), log_score: entry.prior.ln() + score, spans });
    }
    hyps.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then_with(|| a.label.cmp(&b.label)));
    hyps.truncate(n);
    let status = if hyps.is_empty() { DecodeStatus::NoAlignment } else { DecodeStatus::Ok };
    RecognitionResult { hypotheses: hyps, status }
}
