use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gathering::{GatheringTable, Position};
use super::model::{mlp_only_decode, AlphabetInfo, MlpModel, PipelineModel, FORMAT_VERSION};
use super::{extract_features, stage_err, Extraction, PipelineError, FEATURE_LEN};
use crate::config::{Config, Variant};
use crate::hmm::{build_word_model, viterbi_train, HmmSet, HmmTrainReport, Lexicon, Observations, TrainingSequence};
use crate::ink::InkTrace;
use crate::mlp::{class_priors, context_windows, init_nets, train_backprop, Standardizer};
use crate::synth::{SegmentTruth, SynthTrace};
use crate::vq::{train_codebook, Codebook};

/// A training or test sample: ink, its word as class ids, and optionally
/// the generator's per-segment ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub trace: InkTrace,
    pub word: Vec<usize>,
    pub truth: Option<Vec<SegmentTruth>>,
}

impl LabeledTrace {
    pub fn from_synth(s: &SynthTrace) -> Self {
        Self { trace: s.trace.clone(), word: s.word.clone(), truth: Some(s.segments.clone()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub variant: Variant,
    pub traces: usize,
    pub segments: usize,
    /// Segment labels came from a linear split refined by one forced
    /// alignment, not from ground truth.
    pub bootstrapped: bool,
    /// Per-network mean loss before and after training.
    pub mlp_loss: Vec<(f64, f64)>,
    pub codebook_distortion: Vec<f64>,
    pub hmm: Option<HmmTrainReport>,
}

/// Word position of every extracted segment. With ground truth, a segment
/// belongs to the truth segment containing its peak time (or the nearest
/// one); without it the segments are split evenly over the characters.
pub fn segment_labels(ex: &Extraction, word: &[usize], truth: Option<&[SegmentTruth]>) -> Vec<usize> {
    let n = ex.segments.len();
    match truth {
        Some(truth) if !truth.is_empty() => ex
            .segments
            .iter()
            .map(|s| {
                truth.iter().find(|g| g.t0 <= s.tc && s.tc <= g.t1).map(|g| g.char_index).unwrap_or_else(|| {
                    truth.iter().min_by(|a, b| (a.tc - s.tc).abs().total_cmp(&(b.tc - s.tc).abs())).expect("non-empty").char_index
                })
            })
            .collect(),
        _ => (0..n).map(|k| k * word.len() / n.max(1)).collect(),
    }
}

/// Codebook symbols, or negated vectors as direct scaled emissions.
fn observations_for(vectors: &[Vec<f64>], book: Option<&Codebook>) -> Result<Observations, PipelineError> {
    match book {
        Some(book) => Ok(Observations::Symbols(vectors.iter().map(|v| book.quantize(v).map_err(stage_err("vq"))).collect::<Result<_, _>>()?)),
        None => Ok(Observations::Scaled(vectors.iter().map(|v| v.iter().map(|x| -x).collect()).collect())),
    }
}

fn slice_obs(obs: &Observations, idx: &[usize]) -> Observations {
    match obs {
        Observations::Symbols(s) => Observations::Symbols(idx.iter().map(|&i| s[i]).collect()),
        Observations::Scaled(v) => Observations::Scaled(idx.iter().map(|&i| v[i].clone()).collect()),
    }
}

/// Runs every training stage in order: features, networks, scaled
/// likelihoods, codebook, HMMs.
pub fn train_system(corpus: &[LabeledTrace], symbols: &[String], lexicon: &Lexicon, cfg: &Config) -> Result<(PipelineModel, TrainingReport), PipelineError> {
    let classes = symbols.len();
    for c in 0..classes {
        if !corpus.iter().any(|t| t.word.contains(&c)) {
            return Err(PipelineError::Coverage { class: c, symbol: symbols[c].clone() });
        }
    }
    if let Some(t) = corpus.iter().find(|t| t.word.iter().any(|&c| c >= classes)) {
        return Err(PipelineError::Corpus(format!("word {:?} uses a class outside the alphabet", t.word)));
    }
    lexicon.check_classes(classes).map_err(stage_err("hmm"))?;
    let variant = cfg.run.variant;
    let direct = cfg.hmm.direct_emission && variant == Variant::Hybrid;

    let extractions: Vec<Extraction> = corpus.par_iter().map(|t| extract_features(&t.trace, cfg)).collect::<Result<_, _>>()?;
    let standardization = Standardizer::fit(&extractions.iter().flat_map(|e| e.features.iter().cloned()).collect::<Vec<_>>());
    let rows: Vec<Vec<Vec<f64>>> = extractions.iter().map(|e| e.features.iter().map(|f| standardization.apply(f)).collect()).collect();
    let bootstrapped = corpus.iter().any(|t| t.truth.is_none());
    let mut positions: Vec<Vec<usize>> = extractions.iter().zip(corpus).map(|(e, t)| segment_labels(e, &t.word, t.truth.as_deref())).collect();

    let rounds = if bootstrapped { 2 } else { 1 };
    let mut result = None;
    for round in 0..rounds {
        let labels: Vec<usize> = positions.iter().zip(corpus).flat_map(|(p, t)| p.iter().map(|&i| t.word[i])).collect();

        let mut mlp_loss = Vec::new();
        let mlp = if variant == Variant::DiscreteHmm {
            None
        } else {
            let window = cfg.mlp.window;
            let inputs: Vec<Vec<f64>> = rows.iter().flat_map(|r| context_windows(r, window)).collect();
            let mut nets = init_nets(classes, FEATURE_LEN * (2 * window + 1), cfg.mlp.hidden, cfg.run.seed);
            let report = train_backprop(&mut nets, &inputs, &labels, &cfg.mlp_train_config()).map_err(stage_err("mlp"))?;
            mlp_loss = report.loss.iter().map(|l| (l[0], *l.last().expect("initial loss"))).collect();
            Some(MlpModel { window, nets, priors: class_priors(&labels, classes) })
        };

        // Vectors the HMM front end sees per trace.
        let vectors: Vec<Vec<Vec<f64>>> = match (&mlp, variant) {
            (Some(mlp), Variant::Hybrid) => rows
                .iter()
                .map(|r| mlp.posteriors(r)?.iter().map(|p| mlp.neg_log_scaled(p, cfg.hmm.alpha)).collect())
                .collect::<Result<_, _>>()?,
            (Some(mlp), _) => rows.iter().map(|r| mlp.posteriors(r)).collect::<Result<_, _>>()?,
            (None, _) => rows.clone(),
        };

        let mut codebook_distortion = Vec::new();
        let (vq, hmm, hmm_report) = if variant == Variant::MlpOnly {
            (None, None, None)
        } else {
            let book = if direct {
                None
            } else {
                let all: Vec<Vec<f64>> = vectors.iter().flatten().cloned().collect();
                let book = train_codebook(&all, cfg.vq.codebook_size, cfg.run.seed, &cfg.vq_config()).map_err(stage_err("vq"))?;
                codebook_distortion = book.distortion_history.clone();
                Some(book)
            };
            let obs: Vec<Observations> = vectors.iter().map(|v| observations_for(v, book.as_ref())).collect::<Result<_, _>>()?;
            let mut sequences = Vec::new();
            for ((o, p), t) in obs.iter().zip(&positions).zip(corpus) {
                if bootstrapped {
                    sequences.push(TrainingSequence { chars: t.word.clone(), obs: o.clone() });
                    continue;
                }
                for (i, &c) in t.word.iter().enumerate() {
                    let idx: Vec<usize> = (0..p.len()).filter(|&k| p[k] == i).collect();
                    if !idx.is_empty() {
                        sequences.push(TrainingSequence { chars: vec![c], obs: slice_obs(o, &idx) });
                    }
                }
            }
            let codebook_size = book.as_ref().map_or(1, Codebook::size);
            let mut set = HmmSet::uniform(classes, cfg.hmm.states, codebook_size).map_err(stage_err("hmm"))?;
            let report = viterbi_train(&mut set, &sequences, &cfg.hmm_train_config()).map_err(stage_err("hmm"))?;
            if round + 1 < rounds {
                // Forced alignment of every word to its own model.
                for ((p, o), t) in positions.iter_mut().zip(&obs).zip(corpus) {
                    let graph = build_word_model(&t.word, &set).map_err(stage_err("hmm"))?;
                    let table = set.emission_table(o).map_err(stage_err("hmm"))?;
                    if let Ok(a) = graph.align(&table) {
                        for (slot, range) in graph.spans(&a) {
                            for k in range {
                                p[k] = slot;
                            }
                        }
                    }
                }
            }
            (book, Some(set), Some(report))
        };
        if variant == Variant::MlpOnly && round + 1 < rounds {
            for ((p, lp), t) in positions.iter_mut().zip(&vectors).zip(corpus) {
                let single = Lexicon::uniform(vec![(String::new(), t.word.clone())]).map_err(stage_err("mlp"))?;
                let logs: Vec<Vec<f64>> = lp.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect();
                if let Some(h) = mlp_only_decode(&single, &logs, 1).hypotheses.first() {
                    for (slot, range) in h.spans.iter().enumerate() {
                        for k in range.clone() {
                            p[k] = slot;
                        }
                    }
                }
            }
        }
        result = Some((mlp, vq, hmm, hmm_report, mlp_loss, codebook_distortion));
    }
    let (mlp, vq, hmm, hmm_report, mlp_loss, codebook_distortion) = result.expect("at least one round");

    let gathering = if bootstrapped { GatheringTable::default() } else { gathering_from_labels(symbols, corpus, &positions) };
    let model = PipelineModel {
        format_version: FORMAT_VERSION,
        variant,
        config: cfg.echo(),
        alphabet: AlphabetInfo::new(symbols.to_vec()),
        standardization,
        mlp,
        vq,
        hmm,
        lexicon: lexicon.clone(),
        gathering,
    };
    model.validate()?;
    let report = TrainingReport {
        variant,
        traces: corpus.len(),
        segments: positions.iter().map(Vec::len).sum(),
        bootstrapped,
        mlp_loss,
        codebook_distortion,
        hmm: hmm_report,
    };
    Ok((model, report))
}

/// Stroke counts observed per character and position. Positions a
/// character never occupied in training admit every count it showed
/// elsewhere.
fn gathering_from_labels(symbols: &[String], corpus: &[LabeledTrace], positions: &[Vec<usize>]) -> GatheringTable {
    let mut seen: Vec<[BTreeSet<usize>; 4]> = vec![Default::default(); symbols.len()];
    for (t, p) in corpus.iter().zip(positions) {
        for (i, &c) in t.word.iter().enumerate() {
            let count = p.iter().filter(|&&k| k == i).count();
            if count > 0 {
                seen[c][Position::in_word(i, t.word.len()) as usize].insert(count);
            }
        }
    }
    let mut table = GatheringTable::default();
    for (symbol, cols) in symbols.iter().zip(&seen) {
        let any: BTreeSet<usize> = cols.iter().flatten().copied().collect();
        for p in Position::ALL {
            let col = &cols[p as usize];
            for &c in if col.is_empty() { &any } else { col } {
                table.admit(symbol, p, c);
            }
        }
    }
    table
}
