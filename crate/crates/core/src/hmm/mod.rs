//! Discrete left-right character HMMs, lexicon word models and Viterbi.
//!
//! A character model has a non-emitting entry state, `n` emitting states and
//! a non-emitting exit. Emitting states loop, advance, or skip one state;
//! the entry may also skip straight to `s2`, which keeps two-observation
//! characters reachable with four emitting states.

mod graph;
mod lexicon;
mod train;

pub use graph::{build_word_model, char_loop, Alignment, StateGraph};
pub use lexicon::{decode_open, recognize_topn, DecodeStatus, Decoder, Hypothesis, Lexicon, LexiconEntry, OpenDecode, RecognitionResult};
pub use train::{viterbi_train, HmmTrainConfig, HmmTrainReport, TrainingSequence};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HmmError {
    #[error("no state path explains {len} observations")]
    ImpossibleAlignment { len: usize },
    #[error("empty observation sequence")]
    EmptyObservations,
    #[error("unknown character id {0}")]
    UnknownCharacter(usize),
    #[error("symbol {symbol} outside codebook of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },
    #[error("observation vectors have {found} entries, model set has {expected} classes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("posterior must lie in (0, 1], got {0}")]
    BadPosterior(f64),
    #[error("prior must lie in (0, 1], got {0}")]
    BadPrior(f64),
    #[error("a character model needs at least one emitting state")]
    NoStates,
    #[error("lexicon: {0}")]
    Lexicon(String),
}

/// `p(S|X) / p(S)^α`: the MLP posterior turned into an emission surrogate.
/// The result is a scaled likelihood and may exceed 1.
pub fn scaled_likelihood(posterior: f64, prior: f64, alpha: f64) -> Result<f64, HmmError> {
    if !(posterior > 0.0 && posterior <= 1.0) {
        return Err(HmmError::BadPosterior(posterior));
    }
    if !(prior > 0.0 && prior <= 1.0) {
        return Err(HmmError::BadPrior(prior));
    }
    Ok(posterior / prior.powf(alpha))
}

/// `−log p(X|S) = −log p(S|X) + α log p(S)`, evaluated without forming the
/// ratio.
pub fn neg_log_scaled_likelihood(posterior: f64, prior: f64, alpha: f64) -> Result<f64, HmmError> {
    scaled_likelihood(posterior, prior, alpha)?;
    Ok(-posterior.ln() + alpha * prior.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observations {
    /// Codebook indices.
    Symbols(Vec<usize>),
    /// Per-class log scaled likelihoods, one row per observation; used by the
    /// direct-emission hybrid where states of a character share its score.
    Scaled(Vec<Vec<f64>>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Symbols(s) => s.len(),
            Observations::Scaled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Whether the character topology has an arc `i → j` (0 = entry,
/// `n + 1` = exit).
pub fn arc_allowed(n: usize, i: usize, j: usize) -> bool {
    let exit = n + 1;
    if i == 0 {
        j == 1 || (j == 2 && n >= 2)
    } else if i >= exit {
        false
    } else if i == n {
        j == n || j == exit
    } else {
        j == i || j == i + 1 || (j == i + 2 && j <= n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharHmm {
    pub class_id: usize,
    pub n_states: usize,
    /// `(n + 2) × (n + 2)`; the exit row is all zeros since the exit only
    /// ever hands over to the next model.
    pub trans: Vec<Vec<f64>>,
    /// One row per emitting state over the codebook symbols.
    pub emis: Vec<Vec<f64>>,
}

impl CharHmm {
    pub fn uniform(class_id: usize, n_states: usize, codebook_size: usize) -> Result<Self, HmmError> {
        if n_states == 0 {
            return Err(HmmError::NoStates);
        }
        let size = n_states + 2;
        let trans = (0..size)
            .map(|i| {
                let k = (0..size).filter(|&j| arc_allowed(n_states, i, j)).count();
                (0..size).map(|j| if arc_allowed(n_states, i, j) { 1.0 / k as f64 } else { 0.0 }).collect()
            })
            .collect();
        let emis = vec![vec![1.0 / codebook_size.max(1) as f64; codebook_size]; n_states];
        Ok(Self { class_id, n_states, trans, emis })
    }

    pub fn exit(&self) -> usize {
        self.n_states + 1
    }

    /// Fewest observations any path through the model consumes.
    pub fn min_duration(&self) -> usize {
        // Enter at s2, then stride two states at a time to s_n.
        let n = self.n_states;
        if n >= 2 {
            1 + (n - 2).div_ceil(2)
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSet {
    pub models: Vec<CharHmm>,
    pub codebook_size: usize,
}

impl HmmSet {
    pub fn uniform(classes: usize, n_states: usize, codebook_size: usize) -> Result<Self, HmmError> {
        let models = (0..classes).map(|c| CharHmm::uniform(c, n_states, codebook_size)).collect::<Result<_, _>>()?;
        Ok(Self { models, codebook_size })
    }

    pub fn classes(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, class: usize) -> Result<&CharHmm, HmmError> {
        self.models.get(class).ok_or(HmmError::UnknownCharacter(class))
    }

    /// Log emission of every (class, emitting state) for every observation.
    pub fn emission_table(&self, obs: &Observations) -> Result<EmissionTable, HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptyObservations);
        }
        let rows = match obs {
            Observations::Symbols(symbols) => symbols
                .iter()
                .map(|&s| {
                    if s >= self.codebook_size {
                        return Err(HmmError::SymbolOutOfRange { symbol: s, size: self.codebook_size });
                    }
                    Ok(self.models.iter().map(|m| m.emis.iter().map(|row| row[s].ln()).collect()).collect())
                })
                .collect::<Result<Vec<Vec<Vec<f64>>>, _>>()?,
            Observations::Scaled(vectors) => vectors
                .iter()
                .map(|v| {
                    if v.len() != self.classes() {
                        return Err(HmmError::DimensionMismatch { expected: self.classes(), found: v.len() });
                    }
                    Ok(self.models.iter().zip(v).map(|(m, &score)| vec![score; m.n_states]).collect())
                })
                .collect::<Result<Vec<Vec<Vec<f64>>>, _>>()?,
        };
        Ok(EmissionTable { rows })
    }
}

/// `rows[t][class][state − 1]` in the log domain.
#[derive(Debug, Clone)]
pub struct EmissionTable {
    rows: Vec<Vec<Vec<f64>>>,
}

impl EmissionTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, t: usize, class: usize, state: usize) -> f64 {
        self.rows[t][class][state - 1]
    }
}
