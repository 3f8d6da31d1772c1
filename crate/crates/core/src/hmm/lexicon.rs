use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{build_word_model, char_loop, HmmError, HmmSet, Observations, StateGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub chars: Vec<usize>,
    /// Normalized `P(w)`.
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Lexicon {
    /// Entries with positive weights; weights are normalized to priors.
    pub fn new(entries: Vec<(String, Vec<usize>, f64)>) -> Result<Self, HmmError> {
        if entries.is_empty() {
            return Err(HmmError::Lexicon("empty lexicon".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (word, chars, weight) in &entries {
            if !seen.insert(word.as_str()) {
                return Err(HmmError::Lexicon(format!("duplicate word {word:?}")));
            }
            if chars.is_empty() {
                return Err(HmmError::Lexicon(format!("word {word:?} has no characters")));
            }
            if !(weight.is_finite() && *weight > 0.0) {
                return Err(HmmError::Lexicon(format!("word {word:?} has weight {weight}")));
            }
        }
        let total: f64 = entries.iter().map(|e| e.2).sum();
        let entries = entries.into_iter().map(|(word, chars, w)| LexiconEntry { word, chars, prior: w / total }).collect();
        Ok(Self { entries })
    }

    pub fn uniform(words: Vec<(String, Vec<usize>)>) -> Result<Self, HmmError> {
        Self::new(words.into_iter().map(|(w, c)| (w, c, 1.0)).collect())
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.word == word)
    }

    pub fn check_classes(&self, classes: usize) -> Result<(), HmmError> {
        match self.entries.iter().flat_map(|e| &e.chars).find(|&&c| c >= classes) {
            Some(&c) => Err(HmmError::UnknownCharacter(c)),
            None => Ok(()),
        }
    }

    /// One entry per line: `word TAB ids TAB [weight]`, ids separated by
    /// spaces. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, HmmError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| HmmError::Lexicon(format!("line {}: {what}", n + 1));
            let mut cols = line.split('\t');
            let word = cols.next().filter(|w| !w.is_empty()).ok_or_else(|| bad("missing word"))?;
            let ids = cols.next().ok_or_else(|| bad("missing character ids"))?;
            let chars = ids.split_whitespace().map(|s| s.parse::<usize>().map_err(|_| bad("bad character id"))).collect::<Result<Vec<_>, _>>()?;
            let weight = match cols.next().map(str::trim) {
                None | Some("") => 1.0,
                Some(w) => w.parse::<f64>().map_err(|_| bad("bad prior"))?,
            };
            if cols.next().is_some() {
                return Err(bad("too many columns"));
            }
            entries.push((word.to_string(), chars, weight));
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let ids: Vec<String> = e.chars.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{}\t{}\t{:?}", e.word, ids.join(" "), e.prior);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub label: String,
    pub chars: Vec<usize>,
    /// `log P(w) + log P(X|w)` along the best path.
    pub log_score: f64,
    /// Observation range consumed by each character of the word.
    pub spans: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeStatus {
    Ok,
    /// No lexicon entry can align with the observations.
    NoAlignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub hypotheses: Vec<Hypothesis>,
    pub status: DecodeStatus,
}

/// Word models for a lexicon, built once and reused across traces.
#[derive(Debug, Clone)]
pub struct Decoder {
    lexicon: Lexicon,
    words: Vec<StateGraph>,
}

impl Decoder {
    pub fn new(set: &HmmSet, lexicon: &Lexicon) -> Result<Self, HmmError> {
        let words = lexicon.entries.iter().map(|e| build_word_model(&e.chars, set)).collect::<Result<_, _>>()?;
        Ok(Self { lexicon: lexicon.clone(), words })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// The `n` best entries by score, ties broken by label.
    pub fn recognize(&self, set: &HmmSet, obs: &Observations, n: usize) -> Result<RecognitionResult, HmmError> {
        let table = set.emission_table(obs)?;
        let mut hyps = Vec::new();
        for (entry, graph) in self.lexicon.entries.iter().zip(&self.words) {
            match graph.align(&table) {
                Ok(a) => {
                    let spans = graph.spans(&a).into_iter().map(|(_, r)| r).collect();
                    hyps.push(Hypothesis { label: entry.word.clone(), chars: entry.chars.clone(), log_score: entry.prior.ln() + a.log_score, spans });
                }
                Err(HmmError::ImpossibleAlignment { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        hyps.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then_with(|| a.label.cmp(&b.label)));
        hyps.truncate(n);
        let status = if hyps.is_empty() { DecodeStatus::NoAlignment } else { DecodeStatus::Ok };
        Ok(RecognitionResult { hypotheses: hyps, status })
    }
}

pub fn recognize_topn(obs: &Observations, lexicon: &Lexicon, set: &HmmSet, n: usize) -> Result<RecognitionResult, HmmError> {
    Decoder::new(set, lexicon)?.recognize(set, obs, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenDecode {
    pub chars: Vec<usize>,
    pub log_score: f64,
    pub spans: Vec<Range<usize>>,
}

/// Lexicon-free decoding through a loop over all character models, each
/// character equally likely to follow any other.
pub fn decode_open(set: &HmmSet, obs: &Observations) -> Result<OpenDecode, HmmError> {
    let table = set.emission_table(obs)?;
    let graph = char_loop(set);
    let a = graph.align(&table)?;
    let spans = graph.spans(&a);
    Ok(OpenDecode { chars: spans.iter().map(|(c, _)| *c).collect(), log_score: a.log_score, spans: spans.into_iter().map(|(_, r)| r).collect() })
}
