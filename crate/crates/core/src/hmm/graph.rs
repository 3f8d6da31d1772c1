use super::{EmissionTable, HmmError, HmmSet};

/// A flattened model: emitting states from one or more character models
/// joined by non-emitting junctions.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub trans: Vec<Vec<f64>>,
    /// `(slot, class, state)` for emitting states; `None` for entry,
    /// junctions and exit. `slot` is the character position in a word, or
    /// the class in a character loop.
    pub owner: Vec<Option<(usize, usize, usize)>>,
    pub start: usize,
    pub end: usize,
    eff: Effective,
}

/// Transitions between emitting states with single non-emitting hops folded
/// in, in the log domain.
#[derive(Debug, Clone)]
struct Effective {
    emitting: Vec<usize>,
    init: Vec<f64>,
    fin: Vec<f64>,
    /// Per emitting target: `(source, log weight, via junction)`, sources
    /// ascending.
    preds: Vec<Vec<(usize, f64, bool)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Full-graph state per observation.
    pub states: Vec<usize>,
    /// Whether the step into observation `t` passed a non-emitting state.
    pub via_junction: Vec<bool>,
    pub log_score: f64,
}

impl StateGraph {
    fn new(trans: Vec<Vec<f64>>, owner: Vec<Option<(usize, usize, usize)>>, start: usize, end: usize) -> Self {
        let emitting: Vec<usize> = (0..owner.len()).filter(|&s| owner[s].is_some()).collect();
        let silent: Vec<usize> = (0..owner.len()).filter(|&s| owner[s].is_none()).collect();
        let hop = |a: usize, b: usize| -> (f64, bool) {
            let mut best = (trans[a][b], false);
            for &k in &silent {
                let w = trans[a][k] * trans[k][b];
                if w > best.0 {
                    best = (w, true);
                }
            }
            best
        };
        let init = emitting.iter().map(|&b| if start == end { trans[start][b] } else { hop(start, b).0 }.ln()).collect();
        let fin = emitting.iter().map(|&a| if start == end { trans[a][end] } else { hop(a, end).0 }.ln()).collect();
        let preds = emitting
            .iter()
            .map(|&b| {
                emitting
                    .iter()
                    .enumerate()
                    .filter_map(|(ia, &a)| {
                        let (w, via) = hop(a, b);
                        (w > 0.0).then(|| (ia, w.ln(), via))
                    })
                    .collect()
            })
            .collect();
        let eff = Effective { emitting, init, fin, preds };
        Self { trans, owner, start, end, eff }
    }

    pub fn state_count(&self) -> usize {
        self.trans.len()
    }

    pub fn emitting_count(&self) -> usize {
        self.eff.emitting.len()
    }

    /// Best state path in the log domain; ties go to the lowest predecessor
    /// and, at the end, the lowest final state.
    pub fn viterbi(&self, len: usize, emit: impl Fn(usize, usize) -> f64) -> Result<Alignment, HmmError> {
        if len == 0 {
            return Err(HmmError::EmptyObservations);
        }
        let eff = &self.eff;
        let e = eff.emitting.len();
        let mut delta: Vec<f64> = (0..e).map(|i| eff.init[i] + emit(0, eff.emitting[i])).collect();
        let mut back = vec![vec![(usize::MAX, true); e]; len];
        for t in 1..len {
            let mut next = vec![f64::NEG_INFINITY; e];
            for b in 0..e {
                let mut best = (f64::NEG_INFINITY, usize::MAX, false);
                for &(a, w, via) in &eff.preds[b] {
                    let s = delta[a] + w;
                    if s > best.0 {
                        best = (s, a, via);
                    }
                }
                if best.1 != usize::MAX {
                    next[b] = best.0 + emit(t, eff.emitting[b]);
                    back[t][b] = (best.1, best.2);
                }
            }
            delta = next;
        }
        let mut last = (f64::NEG_INFINITY, usize::MAX);
        for a in 0..e {
            let s = delta[a] + eff.fin[a];
            if s > last.0 {
                last = (s, a);
            }
        }
        if last.1 == usize::MAX || last.0 == f64::NEG_INFINITY {
            return Err(HmmError::ImpossibleAlignment { len });
        }
        let mut idx = vec![0; len];
        let mut via = vec![true; len];
        idx[len - 1] = last.1;
        for t in (1..len).rev() {
            let (a, v) = back[t][idx[t]];
            via[t] = v;
            idx[t - 1] = a;
        }
        Ok(Alignment { states: idx.into_iter().map(|i| eff.emitting[i]).collect(), via_junction: via, log_score: last.0 })
    }

    /// Viterbi with emissions read from a precomputed table.
    pub fn align(&self, table: &EmissionTable) -> Result<Alignment, HmmError> {
        self.viterbi(table.len(), |t, s| {
            let (_, class, state) = self.owner[s].expect("emitting state");
            table.get(t, class, state)
        })
    }

    /// Observation ranges per slot along an alignment, in path order.
    pub fn spans(&self, alignment: &Alignment) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for (t, (&s, &via)) in alignment.states.iter().zip(&alignment.via_junction).enumerate() {
            let slot = self.owner[s].expect("emitting state").0;
            match out.last_mut() {
                Some((last, range)) if *last == slot && !via => range.end = t + 1,
                _ => out.push((slot, t..t + 1)),
            }
        }
        out
    }
}

/// Concatenates character models; the exit of each character is fused with
/// the entry of the next into one junction, so a word of `k` characters has
/// `Σ n_i + k + 1` states.
pub fn build_word_model(chars: &[usize], set: &HmmSet) -> Result<StateGraph, HmmError> {
    if chars.is_empty() {
        return Err(HmmError::Lexicon("word without characters".into()));
    }
    let models = chars.iter().map(|&c| set.model(c)).collect::<Result<Vec<_>, _>>()?;
    let total = 1 + models.iter().map(|m| m.n_states + 1).sum::<usize>();
    let mut trans = vec![vec![0.0; total]; total];
    let mut owner = vec![None; total];
    let mut base = 1;
    let mut entry = 0;
    for (pos, m) in models.iter().enumerate() {
        let map = |local: usize| if local == 0 { entry } else { base + local - 1 };
        for (i, row) in m.trans.iter().enumerate().take(m.n_states + 1) {
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    trans[map(i)][map(j)] = p;
                }
            }
        }
        for s in 1..=m.n_states {
            owner[map(s)] = Some((pos, m.class_id, s));
        }
        entry = base + m.n_states;
        base = entry + 1;
    }
    Ok(StateGraph::new(trans, owner, 0, total - 1))
}

/// Every character model hanging off one junction that is both start and
/// end: any character sequence is a path.
pub fn char_loop(set: &HmmSet) -> StateGraph {
    let total = 1 + set.models.iter().map(|m| m.n_states).sum::<usize>();
    let mut trans = vec![vec![0.0; total]; total];
    let mut owner = vec![None; total];
    let share = 1.0 / set.models.len().max(1) as f64;
    let mut base = 1;
    for m in &set.models {
        let map = |local: usize| if local == 0 || local == m.exit() { 0 } else { base + local - 1 };
        for (i, row) in m.trans.iter().enumerate().take(m.n_states + 1) {
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    trans[map(i)][map(j)] += if i == 0 { p * share } else { p };
                }
            }
        }
        for s in 1..=m.n_states {
            owner[map(s)] = Some((m.class_id, m.class_id, s));
        }
        base += m.n_states;
    }
    StateGraph::new(trans, owner, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::super::{arc_allowed, CharHmm, Observations};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, class: usize, n: usize, m: usize) -> CharHmm {
        let mut hmm = CharHmm::uniform(class, n, m).unwrap();
        for i in 0..=n {
            let w: Vec<f64> = (0..n + 2).map(|j| if arc_allowed(n, i, j) { rng.random_range(0.05..1.0) } else { 0.0 }).collect();
            let z: f64 = w.iter().sum();
            hmm.trans[i] = w.into_iter().map(|x| x / z).collect();
        }
        for row in &mut hmm.emis {
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = w.iter().sum();
            *row = w.into_iter().map(|x| x / z).collect();
        }
        hmm
    }

    /// Exhaustive search over every path of the full graph, non-emitting
    /// states included.
    fn brute_force(g: &StateGraph, emit: &dyn Fn(usize, usize) -> f64, len: usize) -> f64 {
        fn go(g: &StateGraph, emit: &dyn Fn(usize, usize) -> f64, len: usize, s: usize, t: usize, acc: f64, best: &mut f64, first: bool) {
            for j in 0..g.state_count() {
                let p = g.trans[s][j];
                if p == 0.0 {
                    continue;
                }
                let acc = acc + p.ln();
                if g.owner[j].is_some() {
                    if t < len {
                        go(g, emit, len, j, t + 1, acc + emit(t, j), best, false);
                    }
                } else if j == g.end && t == len && !first {
                    *best = best.max(acc);
                } else if j != g.end || g.start == g.end {
                    go(g, emit, len, j, t, acc, best, false);
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        go(g, emit, len, g.start, 0, 0.0, &mut best, true);
        best
    }

    #[test]
    fn matches_brute_force_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1200 {
            let m = rng.random_range(1..=8);
            let two = case % 2 == 1;
            let (n1, n2) = if two { (rng.random_range(1..=2), rng.random_range(1..=2)) } else { (rng.random_range(1..=4), 0) };
            let mut models = vec![random_model(&mut rng, 0, n1, m)];
            if two {
                models.push(random_model(&mut rng, 1, n2, m));
            }
            let set = HmmSet { models, codebook_size: m };
            let word: Vec<usize> = if two { vec![0, 1] } else { vec![0] };
            let g = build_word_model(&word, &set).unwrap();
            let len = rng.random_range(1..=6);
            let obs: Vec<usize> = (0..len).map(|_| rng.random_range(0..m)).collect();
            let table = set.emission_table(&Observations::Symbols(obs)).unwrap();
            let emit = |t: usize, s: usize| {
                let (_, c, st) = g.owner[s].unwrap();
                table.get(t, c, st)
            };
            let want = brute_force(&g, &emit, len);
            match g.align(&table) {
                Ok(a) => {
                    assert!((a.log_score - want).abs() < 1e-9, "case {case}: {} vs {want}", a.log_score);
                    // The reported path must score what it claims.
                    let mut s = 0.0;
                    for (t, &st) in a.states.iter().enumerate() {
                        s += emit(t, st);
                    }
                    assert!(s.is_finite());
                }
                Err(HmmError::ImpossibleAlignment { .. }) => assert_eq!(want, f64::NEG_INFINITY, "case {case}"),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn forced_chain_and_uniform_emissions() {
        // No self-loops, no skips: the only path is s1, s2.
        let mut hmm = CharHmm::uniform(0, 2, 2).unwrap();
        hmm.trans[0] = vec![0.0, 1.0, 0.0, 0.0];
        hmm.trans[1] = vec![0.0, 0.0, 1.0, 0.0];
        hmm.trans[2] = vec![0.0, 0.0, 0.0, 1.0];
        hmm.emis = vec![vec![0.8, 0.2], vec![0.3, 0.7]];
        let set = HmmSet { models: vec![hmm], codebook_size: 2 };
        let g = build_word_model(&[0], &set).unwrap();
        let a = g.align(&set.emission_table(&Observations::Symbols(vec![0, 1])).unwrap()).unwrap();
        assert_eq!(a.states, vec![1, 2]);
        assert!((a.log_score - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-12);

        // Uniform emissions: score = best transition product + T·log(1/M).
        let set = HmmSet::uniform(1, 4, 5).unwrap();
        let g = build_word_model(&[0], &set).unwrap();
        let a = g.align(&set.emission_table(&Observations::Symbols(vec![0, 1, 2])).unwrap()).unwrap();
        // entry→s2 (1/2), s2→s4 (1/3), s4→s4 (1/2), s4→exit (1/2) beats
        // every other three-observation path.
        let trans = (0.5f64 * (1.0 / 3.0) * 0.5 * 0.5).ln();
        assert!((a.log_score - (trans + 3.0 * (0.2f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn word_model_shape() {
        let set = HmmSet::uniform(3, 4, 4).unwrap();
        let one = build_word_model(&[1], &set).unwrap();
        assert_eq!(one.trans, set.models[1].trans);
        let two = build_word_model(&[0, 2], &set).unwrap();
        assert_eq!(two.state_count(), 2 * 4 + 3);
        for (i, row) in two.trans.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if i == two.end {
                assert_eq!(s, 0.0);
            } else {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(build_word_model(&[0, 7], &set).unwrap_err(), HmmError::UnknownCharacter(7));
        let too_short = set.emission_table(&Observations::Symbols(vec![0; 3])).unwrap();
        assert_eq!(two.align(&too_short).unwrap_err(), HmmError::ImpossibleAlignment { len: 3 });
    }

    #[test]
    fn loop_rows_are_stochastic_and_spans_split_at_junctions() {
        let set = HmmSet::uniform(3, 2, 4).unwrap();
        let g = char_loop(&set);
        for row in &g.trans {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let a = g.align(&set.emission_table(&Observations::Symbols(vec![0, 1, 2, 3])).unwrap()).unwrap();
        let covered: usize = g.spans(&a).iter().map(|(_, r)| r.len()).sum();
        assert_eq!(covered, 4);
    }
}
