use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::alphabet_hash;
use super::train::LabeledTrace;
use super::PipelineError;
use crate::hmm::Lexicon;
use crate::ink::{parse_ink, write_ink, INK_EXTENSION};
use crate::synth::SegmentTruth;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEXICON_FILE: &str = "lexicon.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Ink file name relative to the corpus directory.
    pub file: String,
    pub label: String,
    pub word: Vec<usize>,
    /// Generator ground truth, absent for imported data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentTruth>>,
}

/// The manifest of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub alphabet: Vec<String>,
    pub alphabet_hash: String,
    pub entries: Vec<CorpusEntry>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Corpus(format!("{}: {e}", path.display()))
}

/// Writes one ink file per trace, `manifest.json` and `lexicon.txt`.
pub fn write_corpus(dir: &Path, alphabet: &[String], lexicon: &Lexicon, traces: &[LabeledTrace]) -> Result<Corpus, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(traces.len());
    for (i, t) in traces.iter().enumerate() {
        let file = format!("{i:05}{INK_EXTENSION}");
        let path = dir.join(&file);
        fs::write(&path, write_ink(&t.trace)).map_err(io_err(&path))?;
        let label = t.trace.label.clone().unwrap_or_default();
        entries.push(CorpusEntry { file, label, word: t.word.clone(), segments: t.truth.clone() });
    }
    let corpus = Corpus { alphabet: alphabet.to_vec(), alphabet_hash: alphabet_hash(alphabet), entries };
    let manifest = dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&corpus).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&manifest, bytes).map_err(io_err(&manifest))?;
    let lex = dir.join(LEXICON_FILE);
    fs::write(&lex, lexicon.to_text()).map_err(io_err(&lex))?;
    Ok(corpus)
}

/// Reads a corpus directory, checking the manifest's alphabet hash and
/// that every trace parses.
pub fn read_corpus(dir: &Path) -> Result<(Corpus, Vec<LabeledTrace>), PipelineError> {
    let manifest = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest).map_err(io_err(&manifest))?;
    let corpus: Corpus = serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corpus(format!("{}: {e}", manifest.display())))?;
    if alphabet_hash(&corpus.alphabet) != corpus.alphabet_hash {
        return Err(PipelineError::Corpus("manifest alphabet hash does not match its symbols".into()));
    }
    let mut traces = Vec::with_capacity(corpus.entries.len());
    for e in &corpus.entries {
        let path = dir.join(&e.file);
        let raw = fs::read(&path).map_err(io_err(&path))?;
        let mut trace = parse_ink(&raw).map_err(|err| PipelineError::Corpus(format!("{}: {err}", path.display())))?;
        if e.word.iter().any(|&c| c >= corpus.alphabet.len()) {
            return Err(PipelineError::Corpus(format!("{}: class id outside the alphabet", e.file)));
        }
        if trace.label.is_none() {
            trace.label = Some(e.label.clone());
        }
        traces.push(LabeledTrace { trace, word: e.word.clone(), truth: e.segments.clone() });
    }
    Ok((corpus, traces))
}

/// The lexicon stored next to a corpus manifest, if any.
pub fn read_corpus_lexicon(dir: &Path) -> Result<Option<Lexicon>, PipelineError> {
    let path = dir.join(LEXICON_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => Lexicon::parse(&text).map(Some).map_err(|e| PipelineError::Corpus(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, make_lexicon, Alphabet, SynthConfig};

    #[test]
    fn write_read_round_trip() {
        let alphabet = Alphabet::default_ten();
        let words = make_lexicon(&alphabet, 5, 2..=3, 1);
        let lex = Lexicon::uniform(words.iter().map(|w| (alphabet.spell(w), w.clone())).collect()).unwrap();
        let traces: Vec<LabeledTrace> = generate_corpus(&alphabet, &words, 7, 2, &SynthConfig::default()).iter().map(LabeledTrace::from_synth).collect();
        let dir = tempfile::tempdir().unwrap();
        let written = write_corpus(dir.path(), &alphabet.symbols(), &lex, &traces).unwrap();
        let (read, back) = read_corpus(dir.path()).unwrap();
        assert_eq!(read, written);
        assert_eq!(back, traces);
        assert_eq!(read_corpus_lexicon(dir.path()).unwrap(), Some(lex));
        assert!(read_corpus(&dir.path().join("missing")).is_err());
    }
}
