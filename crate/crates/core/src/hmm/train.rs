use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{arc_allowed, build_word_model, Alignment, HmmError, HmmSet, Observations, StateGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub chars: Vec<usize>,
    pub obs: Observations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmTrainConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for HmmTrainConfig {
    fn default() -> Self {
        Self { max_iterations: 20, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmTrainReport {
    /// Aligned log score plus the log of the add-one (Dirichlet) prior on
    /// every trained row, per iteration; never decreases.
    pub objective: Vec<f64>,
    /// Aligned log score alone, per iteration.
    pub log_score: Vec<f64>,
    /// Sequences no path could explain, skipped every iteration.
    pub unaligned: Vec<usize>,
    /// Classes that received no frames and kept their parameters.
    pub idle_classes: Vec<usize>,
}

/// Log of the add-one prior: `Σ log θ` over every free parameter.
fn log_prior(set: &HmmSet, emissions: bool) -> f64 {
    let mut total = 0.0;
    for m in &set.models {
        for (i, row) in m.trans.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if arc_allowed(m.n_states, i, j) {
                    total += p.ln();
                }
            }
        }
        if emissions {
            total += m.emis.iter().flatten().map(|p| p.ln()).sum::<f64>();
        }
    }
    total
}

/// Segmental k-means: align every sequence to its word model, re-estimate
/// transitions (and, for symbol observations, emissions) from the aligned
/// counts with add-one smoothing, repeat.
pub fn viterbi_train(set: &mut HmmSet, data: &[TrainingSequence], cfg: &HmmTrainConfig) -> Result<HmmTrainReport, HmmError> {
    let emissions = match data.first().map(|d| &d.obs) {
        Some(Observations::Symbols(_)) => true,
        Some(Observations::Scaled(_)) => false,
        None => return Err(HmmError::EmptyObservations),
    };
    if data.iter().any(|d| matches!(d.obs, Observations::Symbols(_)) != emissions) {
        return Err(HmmError::Lexicon("training mixes symbol and scaled observations".into()));
    }
    let mut report = HmmTrainReport { objective: Vec::new(), log_score: Vec::new(), unaligned: Vec::new(), idle_classes: Vec::new() };
    for _ in 0..cfg.max_iterations.max(1) {
        let graphs: Vec<StateGraph> = data.iter().map(|d| build_word_model(&d.chars, set)).collect::<Result<_, _>>()?;
        let aligned: Vec<Result<Alignment, HmmError>> = data
            .par_iter()
            .zip(graphs.par_iter())
            .map(|(d, g)| g.align(&set.emission_table(&d.obs)?))
            .collect();
        let mut score = 0.0;
        let mut unaligned = Vec::new();
        for (i, a) in aligned.iter().enumerate() {
            match a {
                Ok(a) => score += a.log_score,
                Err(HmmError::ImpossibleAlignment { .. }) => unaligned.push(i),
                Err(e) => return Err(e.clone()),
            }
        }
        let objective = score + log_prior(set, emissions);
        let converged = report.objective.last().is_some_and(|&prev: &f64| objective - prev <= cfg.tolerance * prev.abs());
        report.objective.push(objective);
        report.log_score.push(score);
        report.unaligned = unaligned;
        if converged {
            break;
        }
        report.idle_classes = reestimate(set, data, &graphs, &aligned, emissions);
    }
    Ok(report)
}

fn reestimate(set: &mut HmmSet, data: &[TrainingSequence], graphs: &[StateGraph], aligned: &[Result<Alignment, HmmError>], emissions: bool) -> Vec<usize> {
    let m = set.codebook_size;
    let mut tcount: Vec<Vec<Vec<f64>>> = set.models.iter().map(|h| vec![vec![0.0; h.n_states + 2]; h.n_states + 2]).collect();
    let mut ecount: Vec<Vec<Vec<f64>>> = set.models.iter().map(|h| vec![vec![0.0; m]; h.n_states]).collect();
    let mut frames = vec![0usize; set.models.len()];
    for ((d, g), a) in data.iter().zip(graphs).zip(aligned) {
        let Ok(a) = a else { continue };
        for (t, &s) in a.states.iter().enumerate() {
            let (_, class, state) = g.owner[s].expect("emitting");
            frames[class] += 1;
            if let Observations::Symbols(sym) = &d.obs {
                ecount[class][state - 1][sym[t]] += 1.0;
            }
        }
        // Walk the path character by character in local state numbers.
        let owners: Vec<(usize, usize, usize)> = a.states.iter().map(|&s| g.owner[s].expect("emitting")).collect();
        for (t, &(slot, class, state)) in owners.iter().enumerate() {
            let exit = set.models[class].n_states + 1;
            if t == 0 || owners[t - 1].0 != slot {
                tcount[class][0][state] += 1.0;
            }
            match owners.get(t + 1) {
                Some(&(next_slot, _, next_state)) if next_slot == slot => tcount[class][state][next_state] += 1.0,
                _ => tcount[class][state][exit] += 1.0,
            }
        }
    }
    let mut idle = Vec::new();
    for (c, model) in set.models.iter_mut().enumerate() {
        if frames[c] == 0 {
            idle.push(c);
            continue;
        }
        let n = model.n_states;
        for i in 0..=n {
            let total: f64 = (0..n + 2).filter(|&j| arc_allowed(n, i, j)).map(|j| tcount[c][i][j] + 1.0).sum();
            for j in 0..n + 2 {
                model.trans[i][j] = if arc_allowed(n, i, j) { (tcount[c][i][j] + 1.0) / total } else { 0.0 };
            }
        }
        if emissions {
            for (row, counts) in model.emis.iter_mut().zip(&ecount[c]) {
                let total: f64 = counts.iter().sum::<f64>() + m as f64;
                for (p, k) in row.iter_mut().zip(counts) {
                    *p = (k + 1.0) / total;
                }
            }
        }
    }
    idle
}

#[cfg(test)]
mod tests {
    use super::super::recognize_topn;
    use super::super::Lexicon;
    use super::*;

    fn seq(chars: Vec<usize>, symbols: Vec<usize>) -> TrainingSequence {
        TrainingSequence { chars, obs: Observations::Symbols(symbols) }
    }

    fn assert_stochastic(set: &HmmSet) {
        for m in &set.models {
            for (i, row) in m.trans.iter().enumerate() {
                let s: f64 = row.iter().sum();
                assert!(if i == m.n_states + 1 { s == 0.0 } else { (s - 1.0).abs() < 1e-9 });
                for (j, &p) in row.iter().enumerate() {
                    assert_eq!(p > 0.0, arc_allowed(m.n_states, i, j));
                }
            }
            for row in &m.emis {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn identical_sequences_concentrate_emissions() {
        let mut set = HmmSet::uniform(1, 4, 6).unwrap();
        let data = vec![seq(vec![0], vec![1, 1, 2, 3]); 10];
        let report = viterbi_train(&mut set, &data, &HmmTrainConfig::default()).unwrap();
        assert!(report.objective.windows(2).all(|w| w[1] >= w[0]));
        let seen: f64 = set.models[0].emis.iter().map(|r| r[1] + r[2] + r[3]).sum();
        let unseen: f64 = set.models[0].emis.iter().map(|r| r[0] + r[4] + r[5]).sum();
        assert!(seen > 3.0 * unseen);
        assert_stochastic(&set);
    }

    #[test]
    fn disjoint_characters_separate() {
        let mut set = HmmSet::uniform(2, 2, 4).unwrap();
        let mut data = Vec::new();
        for k in 0..8 {
            data.push(seq(vec![0], vec![k % 2, 1 - k % 2, 0]));
            data.push(seq(vec![1], vec![2 + k % 2, 3, 2]));
            data.push(seq(vec![0, 1], vec![0, 1, 3, 2]));
        }
        let report = viterbi_train(&mut set, &data, &HmmTrainConfig::default()).unwrap();
        assert!(report.objective.windows(2).all(|w| w[1] >= w[0]));
        assert_stochastic(&set);
        let lex = Lexicon::uniform(vec![("zero".into(), vec![0]), ("one".into(), vec![1])]).unwrap();
        for (obs, want) in [(vec![1, 0], "zero"), (vec![3, 2, 2], "one")] {
            let r = recognize_topn(&Observations::Symbols(obs), &lex, &set, 2).unwrap();
            assert_eq!(r.hypotheses[0].label, want);
            assert!(r.hypotheses[0].log_score > r.hypotheses[1].log_score);
        }
    }

    #[test]
    fn unalignable_sequences_are_reported_and_idle_classes_keep_parameters() {
        let mut set = HmmSet::uniform(2, 4, 3).unwrap();
        let before = set.models[1].clone();
        let data = vec![seq(vec![0], vec![0, 1, 2]), seq(vec![0, 0], vec![0])];
        let report = viterbi_train(&mut set, &data, &HmmTrainConfig::default()).unwrap();
        assert_eq!(report.unaligned, vec![1]);
        assert_eq!(report.idle_classes, vec![1]);
        assert_eq!(set.models[1], before);
    }

    #[test]
    fn scaled_observations_train_transitions_only() {
        let mut set = HmmSet::uniform(2, 2, 1).unwrap();
        let emis = set.models[0].emis.clone();
        let data = vec![TrainingSequence { chars: vec![0, 1], obs: Observations::Scaled(vec![vec![0.0, -3.0], vec![0.0, -3.0], vec![-3.0, 0.0]]) }; 4];
        let report = viterbi_train(&mut set, &data, &HmmTrainConfig::default()).unwrap();
        assert!(report.objective.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(set.models[0].emis, emis);
        assert_ne!(set.models[0].trans, HmmSet::uniform(2, 2, 1).unwrap().models[0].trans);
    }
}
