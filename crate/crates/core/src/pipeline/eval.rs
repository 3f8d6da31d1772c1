use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gathering::GatheringAudit;
use super::model::Recognizer;
use super::train::LabeledTrace;
use super::PipelineError;
use crate::hmm::{DecodeStatus, Hypothesis};

pub const TOP_K: [usize; 3] = [1, 5, 10];

/// Accuracy of one system on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub traces: usize,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    /// Traces where no lexicon entry could align.
    pub no_alignment: usize,
    /// Traces the front end rejected.
    pub failed: usize,
    /// True label → best hypothesis → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    /// Gathering check over the best hypothesis of every trace.
    pub gathering: GatheringAudit,
}

/// Accuracies laid out as system × test set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: BTreeMap<String, BTreeMap<String, SetReport>>,
}

impl EvalReport {
    pub fn insert(&mut self, system: &str, set: &str, report: SetReport) {
        self.systems.entry(system.to_string()).or_default().insert(set.to_string(), report);
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    /// `system  set  top1  top5  top10` lines, percentages.
    pub fn rows(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (system, sets) in &self.systems {
            for (set, r) in sets {
                out.push(format!("{system}\t{set}\t{:.2}\t{:.2}\t{:.2}", 100.0 * r.top1, 100.0 * r.top5, 100.0 * r.top10));
            }
        }
        out
    }
}

/// Zero-based rank of `truth` among the hypotheses.
fn rank_of(hyps: &[Hypothesis], truth: &str) -> Option<usize> {
    hyps.iter().position(|h| h.label == truth)
}

fn rates(ranks: &[Option<usize>]) -> [f64; 3] {
    let n = ranks.len().max(1) as f64;
    TOP_K.map(|k| ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / n)
}

pub fn evaluate(rec: &Recognizer, test: &[LabeledTrace]) -> Result<SetReport, PipelineError> {
    let model = rec.model();
    let truths: Vec<String> = test.iter().map(|t| t.trace.label.clone().unwrap_or_else(|| model.alphabet.spell(&t.word))).collect();
    if let Some(missing) = truths.iter().find(|l| model.lexicon.get(l).is_none()) {
        return Err(PipelineError::UnknownLabel(missing.clone()));
    }
    let depth = *TOP_K.last().expect("non-empty");
    let outcomes: Vec<Result<_, PipelineError>> = test.par_iter().map(|t| rec.recognize(&t.trace, depth)).collect();
    let mut ranks = Vec::with_capacity(test.len());
    let mut report = SetReport { traces: test.len(), top1: 0.0, top5: 0.0, top10: 0.0, no_alignment: 0, failed: 0, confusion: BTreeMap::new(), gathering: GatheringAudit::default() };
    for (outcome, truth) in outcomes.into_iter().zip(&truths) {
        let best = match outcome {
            Ok(r) => {
                if r.result.status == DecodeStatus::NoAlignment {
                    report.no_alignment += 1;
                }
                report.gathering.merge(r.gathering);
                ranks.push(rank_of(&r.result.hypotheses, truth));
                r.result.hypotheses.first().map_or_else(|| "<none>".to_string(), |h| h.label.clone())
            }
            Err(e) if e.is_degenerate_input() => {
                report.failed += 1;
                ranks.push(None);
                "<failed>".to_string()
            }
            Err(e) => return Err(e),
        };
        *report.confusion.entry(truth.clone()).or_default().entry(best).or_default() += 1;
    }
    [report.top1, report.top5, report.top10] = rates(&ranks);
    Ok(report)
}

/// Top-`k` rate of a decoder that scores every lexicon entry at random,
/// ranked exactly like real hypotheses.
pub fn random_topk_rate(lexicon_size: usize, k: usize, traces: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..traces {
        let truth = rng.random_range(0..lexicon_size);
        let mut hyps: Vec<Hypothesis> = (0..lexicon_size).map(|w| Hypothesis { label: format!("w{w:03}"), chars: vec![], log_score: rng.random::<f64>().ln(), spans: vec![] }).collect();
        hyps.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then_with(|| a.label.cmp(&b.label)));
        if rank_of(&hyps, &format!("w{truth:03}")).is_some_and(|r| r < k) {
            hits += 1;
        }
    }
    hits as f64 / traces.max(1) as f64
}
