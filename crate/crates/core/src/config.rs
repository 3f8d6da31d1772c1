//! Run configuration: sectioned `key = value` text (a TOML subset).
//!
//! ```text
//! [mlp]
//! hidden = 40
//! epochs = 4000
//!
//! [hmm]
//! states = 4
//! ```
//!
//! Every key has a default, unknown sections and keys are rejected, and
//! `section.key=value` overrides go through [`Config::set`]. The effective
//! configuration is echoed into model files via [`Config::echo`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineConfig;
use crate::hmm::HmmTrainConfig;
use crate::mlp::TrainConfig;
use crate::segment::SegmentConfig;
use crate::synth::SynthConfig;
use crate::vq::VqConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Hybrid,
    DiscreteHmm,
    MlpOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Hybrid, Variant::DiscreteHmm, Variant::MlpOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::DiscreteHmm => "discrete-hmm",
            Variant::MlpOnly => "mlp-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub variant: Variant,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, variant: Variant::Hybrid }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub cutoff_hz: f64,
    pub radius: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { cutoff_hz: crate::preprocess::DEFAULT_CUTOFF_HZ, radius: crate::preprocess::DEFAULT_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    pub valley_ratio: f64,
    pub min_peak_ratio: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        let d = SegmentConfig::default();
        Self { valley_ratio: d.valley_ratio, min_peak_ratio: d.min_peak_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub band: f64,
    pub cluster_slope_tol: f64,
    pub cluster_height_tol: f64,
    pub dot_arc: f64,
    pub dot_points: usize,
    pub overlap: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = BaselineConfig::default();
        Self { band: d.band, cluster_slope_tol: d.cluster_slope_tol, cluster_height_tol: d.cluster_height_tol, dot_arc: d.dot_arc, dot_points: d.dot_points, overlap: d.overlap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSection {
    /// Neighbouring segments on each side fed to the networks.
    pub window: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for MlpSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { window: 1, hidden: 40, epochs: d.epochs, learning_rate: d.learning_rate, momentum: d.momentum }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqSection {
    pub codebook_size: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for VqSection {
    fn default() -> Self {
        let d = VqConfig::default();
        Self { codebook_size: 256, epsilon: d.epsilon, tolerance: d.tolerance, max_iterations: d.max_iterations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmmSection {
    /// Emitting states per character.
    pub states: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub tolerance: f64,
    /// Hybrid ablation: emit scaled likelihoods directly instead of codebook
    /// symbols.
    pub direct_emission: bool,
    /// Decode through a character loop instead of the lexicon.
    pub open_vocabulary: bool,
}

impl Default for HmmSection {
    fn default() -> Self {
        let d = HmmTrainConfig::default();
        Self { states: 4, alpha: 1.0, iterations: d.max_iterations, tolerance: d.tolerance, direct_emission: false, open_vocabulary: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerSection {
    /// Drop hypotheses whose character spans break the gathering table
    /// instead of only reporting them.
    pub gathering_hard: bool,
}

#[allow(clippy::derivable_impls)]
impl Default for RecognizerSection {
    fn default() -> Self {
        Self { gathering_hard: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Word traces per alphabet class: a corpus holds `per_class × classes`.
    pub per_class: usize,
    pub jitter: f64,
    pub sample_rate: f64,
    pub lexicon_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lexicon_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self { per_class: 50, jitter: d.jitter, sample_rate: d.sample_rate, lexicon_size: 100, min_len: 2, max_len: 5, lexicon_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub preprocess: PreprocessSection,
    pub segment: SegmentSection,
    pub baseline: BaselineSection,
    pub mlp: MlpSection,
    pub vq: VqSection,
    pub hmm: HmmSection,
    pub recognizer: RecognizerSection,
    pub synth: SynthSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one `section.key` with a value written as in the file;
    /// bare words are taken as strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (section, name) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        let slot = table
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .and_then(|s| s.get_mut(name))
            .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}")).ok().and_then(|mut t| t.remove("v"));
        *slot = match (parsed, &*slot) {
            // Integers are accepted where floats are expected.
            (Some(toml::Value::Integer(i)), toml::Value::Float(_)) => toml::Value::Float(i as f64),
            (Some(v), _) => v,
            (None, _) => toml::Value::String(value.to_string()),
        };
        let bad = |message: String| ConfigError::BadValue { key: key.into(), message };
        let next: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::BadValue { key: key.into(), message: message.into() });
        if self.mlp.hidden == 0 {
            return bad("mlp.hidden", "must be at least 1");
        }
        if self.vq.codebook_size == 0 {
            return bad("vq.codebook_size", "must be at least 1");
        }
        if self.hmm.states == 0 {
            return bad("hmm.states", "must be at least 1");
        }
        if !(self.preprocess.cutoff_hz > 0.0) {
            return bad("preprocess.cutoff_hz", "must be positive");
        }
        if self.synth.min_len == 0 || self.synth.min_len > self.synth.max_len {
            return bad("synth.min_len", "need 1 ≤ min_len ≤ max_len");
        }
        Ok(())
    }

    /// Every effective parameter as `section.key → value`.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut out = BTreeMap::new();
        for (section, body) in &table {
            if let Some(body) = body.as_table() {
                for (k, v) in body {
                    let text = match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    out.insert(format!("{section}.{k}"), text);
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig { valley_ratio: self.segment.valley_ratio, min_peak_ratio: self.segment.min_peak_ratio }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        let b = &self.baseline;
        BaselineConfig { band: b.band, cluster_slope_tol: b.cluster_slope_tol, cluster_height_tol: b.cluster_height_tol, dot_arc: b.dot_arc, dot_points: b.dot_points, overlap: b.overlap }
    }

    pub fn mlp_train_config(&self) -> TrainConfig {
        TrainConfig { learning_rate: self.mlp.learning_rate, momentum: self.mlp.momentum, epochs: self.mlp.epochs, seed: self.run.seed }
    }

    pub fn vq_config(&self) -> VqConfig {
        VqConfig { epsilon: self.vq.epsilon, tolerance: self.vq.tolerance, max_iterations: self.vq.max_iterations }
    }

    pub fn hmm_train_config(&self) -> HmmTrainConfig {
        HmmTrainConfig { max_iterations: self.hmm.iterations, tolerance: self.hmm.tolerance }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { jitter: self.synth.jitter, sample_rate: self.synth.sample_rate, ..SynthConfig::default() }
    }
}
