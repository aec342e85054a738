//! METEOR with exact and stem matching stages.
//!
//! Alignment: stage one matches identical tokens, stage two matches the
//! remaining tokens whose Snowball (Porter2) stems agree. Each stage takes a
//! maximum-cardinality matching; among all such alignments the one with the
//! fewest chunks is chosen. A chunk is a maximal run of matches that are
//! adjacent in both the candidate and the reference.
//!
//! Chunk minimization is combinatorial. A greedy longest-run alignment seeds
//! a branch-and-bound search that is exact unless it exhausts its node
//! budget, in which case the best alignment found so far is kept and
//! [`Alignment::optimal`] is `false`.

use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use super::{MetricError, TokenSequence};

const NODE_BUDGET: usize = 2_000_000;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// (candidate index, reference index), sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
    pub exact: usize,
    pub stemmed: usize,
    pub chunks: usize,
    pub optimal: bool,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }
}

/// Number of chunks in an alignment given as pairs sorted by candidate index.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    pairs
        .iter()
        .enumerate()
        .filter(|&(k, &(i, j))| k == 0 || pairs[k - 1] != (i.wrapping_sub(1), j.wrapping_sub(1)))
        .count()
}

pub fn score_from_alignment(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

pub fn meteor(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let a = align(candidate.tokens(), reference.tokens());
    Ok(score_from_alignment(a.matches(), a.chunks, candidate.len(), reference.len()))
}

struct Interner<'a>(HashMap<&'a str, usize>);

impl<'a> Interner<'a> {
    fn id(&mut self, s: &'a str) -> usize {
        let next = self.0.len();
        *self.0.entry(s).or_insert(next)
    }
}

struct Problem {
    cand: Vec<usize>,
    cand_stem: Vec<usize>,
    reference: Vec<usize>,
    ref_stem: Vec<usize>,
    exact_quota: Vec<usize>,
    stem_quota: Vec<usize>,
    cand_leftover: Vec<usize>,
    ref_leftover: Vec<usize>,
    /// Per candidate position: (reference position, is exact match).
    edges: Vec<Vec<(usize, bool)>>,
    /// Count of later candidate positions holding the same token.
    later_same: Vec<usize>,
    /// Upper bound on links achievable among positions `i..`.
    link_suffix: Vec<usize>,
    total: usize,
}

impl Problem {
    fn new(candidate: &[String], reference: &[String]) -> Self {
        let mut tokens = Interner(HashMap::new());
        let cand: Vec<usize> = candidate.iter().map(|t| tokens.id(t)).collect();
        let refs: Vec<usize> = reference.iter().map(|t| tokens.id(t)).collect();
        let n_tok = tokens.0.len();

        let stems_owned: Vec<String> = {
            let mut by_id = vec![String::new(); n_tok];
            for (s, &id) in &tokens.0 {
                by_id[id] = stem(s);
            }
            by_id
        };
        let mut stem_ids = Interner(HashMap::new());
        let stem_of: Vec<usize> = stems_owned.iter().map(|s| stem_ids.id(s)).collect();
        let n_stem = stem_ids.0.len();

        let mut cc = vec![0usize; n_tok];
        let mut cr = vec![0usize; n_tok];
        cand.iter().for_each(|&t| cc[t] += 1);
        refs.iter().for_each(|&t| cr[t] += 1);
        let exact_quota: Vec<usize> = (0..n_tok).map(|t| cc[t].min(cr[t])).collect();
        let cand_leftover: Vec<usize> = (0..n_tok).map(|t| cc[t] - exact_quota[t]).collect();
        let ref_leftover: Vec<usize> = (0..n_tok).map(|t| cr[t] - exact_quota[t]).collect();

        let mut lc = vec![0usize; n_stem];
        let mut lr = vec![0usize; n_stem];
        for t in 0..n_tok {
            lc[stem_of[t]] += cand_leftover[t];
            lr[stem_of[t]] += ref_leftover[t];
        }
        let stem_quota: Vec<usize> = (0..n_stem).map(|s| lc[s].min(lr[s])).collect();
        let total = exact_quota.iter().sum::<usize>() + stem_quota.iter().sum::<usize>();

        let edges: Vec<Vec<(usize, bool)>> = cand
            .iter()
            .map(|&t| {
                refs.iter()
                    .enumerate()
                    .filter_map(|(j, &u)| {
                        if u == t {
                            Some((j, true))
                        } else if stem_of[u] == stem_of[t]
                            && cand_leftover[t] > 0
                            && ref_leftover[u] > 0
                            && stem_quota[stem_of[t]] > 0
                        {
                            Some((j, false))
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();

        let n = cand.len();
        let mut later_same = vec![0usize; n];
        let mut seen = vec![0usize; n_tok];
        for i in (0..n).rev() {
            later_same[i] = seen[cand[i]];
            seen[cand[i]] += 1;
        }

        let mut link_suffix = vec![0usize; n + 1];
        for i in (0..n.saturating_sub(1)).rev() {
            let linkable = edges[i]
                .iter()
                .any(|&(j, _)| edges[i + 1].iter().any(|&(k, _)| k == j + 1));
            link_suffix[i] = link_suffix[i + 1] + linkable as usize;
        }

        Problem {
            cand_stem: cand.iter().map(|&t| stem_of[t]).collect(),
            ref_stem: refs.iter().map(|&t| stem_of[t]).collect(),
            cand,
            reference: refs,
            exact_quota,
            stem_quota,
            cand_leftover,
            ref_leftover,
            edges,
            later_same,
            link_suffix,
            total,
        }
    }

    /// Longest-run greedy alignment: exact stage, then stem stage.
    fn greedy(&self) -> Vec<Option<usize>> {
        let (n, k) = (self.cand.len(), self.reference.len());
        let mut assign = vec![None; n];
        let mut used_r = vec![false; k];
        let stages: [&dyn Fn(usize, usize) -> bool; 2] = [
            &|i, j| self.cand[i] == self.reference[j],
            &|i, j| self.cand_stem[i] == self.ref_stem[j],
        ];
        for same in stages {
            loop {
                let mut best = (0usize, 0usize, 0usize);
                for i in 0..n {
                    for j in 0..k {
                        let mut len = 0;
                        while i + len < n
                            && j + len < k
                            && assign[i + len].is_none()
                            && !used_r[j + len]
                            && same(i + len, j + len)
                        {
                            len += 1;
                        }
                        if len > best.2 {
                            best = (i, j, len);
                        }
                    }
                }
                if best.2 == 0 {
                    break;
                }
                for d in 0..best.2 {
                    assign[best.0 + d] = Some(best.1 + d);
                    used_r[best.1 + d] = true;
                }
            }
        }
        assign
    }
}

fn chunks_of(assign: &[Option<usize>]) -> usize {
    let pairs: Vec<(usize, usize)> = assign
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    count_chunks(&pairs)
}

struct Search<'p> {
    p: &'p Problem,
    used_r: Vec<bool>,
    exact_used: Vec<usize>,
    stem_used: Vec<usize>,
    cand_stem_used: Vec<usize>,
    ref_stem_used: Vec<usize>,
    assign: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_chunks: usize,
    nodes: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize, matched: usize) {
        self.nodes += 1;
        if self.nodes > NODE_BUDGET {
            self.exhausted = true;
            return;
        }
        let p = self.p;
        let n = p.cand.len();
        let need = p.total - matched;
        if need > n - i {
            return;
        }
        if i == n {
            if chunks < self.best_chunks {
                self.best_chunks = chunks;
                self.best.clone_from(&self.assign);
            }
            return;
        }
        let continues = |j: usize| prev.is_some_and(|q| q + 1 == j);
        let links_ahead = p.link_suffix[i] + p.edges[i].iter().any(|&(j, _)| continues(j)) as usize;
        if chunks + need.saturating_sub(links_ahead) >= self.best_chunks {
            return;
        }

        let t = p.cand[i];
        let s = p.cand_stem[i];
        let mut options: Vec<(usize, bool)> = p.edges[i]
            .iter()
            .copied()
            .filter(|&(j, exact)| {
                !self.used_r[j]
                    && if exact {
                        self.exact_used[t] < p.exact_quota[t]
                    } else {
                        let u = p.reference[j];
                        self.stem_used[s] < p.stem_quota[s]
                            && self.cand_stem_used[t] < p.cand_leftover[t]
                            && self.ref_stem_used[u] < p.ref_leftover[u]
                    }
            })
            .collect();
        options.sort_by_key(|&(j, _)| (!continues(j), j));

        for (j, exact) in options {
            let u = p.reference[j];
            self.used_r[j] = true;
            self.assign[i] = Some(j);
            if exact {
                self.exact_used[t] += 1;
            } else {
                self.stem_used[s] += 1;
                self.cand_stem_used[t] += 1;
                self.ref_stem_used[u] += 1;
            }
            let next_chunks = chunks + (!continues(j)) as usize;
            self.run(i + 1, Some(j), next_chunks, matched + 1);
            if exact {
                self.exact_used[t] -= 1;
            } else {
                self.stem_used[s] -= 1;
                self.cand_stem_used[t] -= 1;
                self.ref_stem_used[u] -= 1;
            }
            self.assign[i] = None;
            self.used_r[j] = false;
            if self.exhausted {
                return;
            }
        }

        if self.exact_used[t] + p.later_same[i] >= p.exact_quota[t] {
            self.run(i + 1, None, chunks, matched);
        }
    }
}

/// Two-stage maximum matching with the fewest chunks.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let p = Problem::new(candidate, reference);
    let greedy = p.greedy();
    let greedy_chunks = chunks_of(&greedy);

    let mut search = Search {
        p: &p,
        used_r: vec![false; p.reference.len()],
        exact_used: vec![0; p.exact_quota.len()],
        stem_used: vec![0; p.stem_quota.len()],
        cand_stem_used: vec![0; p.exact_quota.len()],
        ref_stem_used: vec![0; p.exact_quota.len()],
        assign: vec![None; p.cand.len()],
        best: greedy,
        best_chunks: greedy_chunks,
        nodes: 0,
        exhausted: false,
    };
    if p.total > 0 {
        search.run(0, None, 0, 0);
    }

    let pairs: Vec<(usize, usize)> = search
        .best
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let exact = pairs.iter().filter(|&&(i, j)| p.cand[i] == p.reference[j]).count();
    debug_assert_eq!(pairs.len(), p.total);
    Alignment {
        stemmed: pairs.len() - exact,
        exact,
        chunks: count_chunks(&pairs),
        pairs,
        optimal: !search.exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn identical_is_single_chunk() {
        for m in 1..=12usize {
            let text = (0..m).map(|k| format!("w{k}")).collect::<Vec<_>>().join(" ");
            let t = tokenize(&text);
            let expected = 1.0 - 0.5 * (1.0 / m as f64).powi(3);
            assert_eq!(meteor(&t, &t).unwrap(), expected);
        }
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(meteor(&tokenize("a b c"), &tokenize("d e f")).unwrap(), 0.0);
        assert_eq!(meteor(&TokenSequence::default(), &tokenize("x")), Err(MetricError::EmptyInput));
    }

    #[test]
    fn stem_stage_matches_inflections() {
        let a = align(tokenize("models running").tokens(), tokenize("model runs").tokens());
        assert_eq!((a.exact, a.stemmed, a.chunks), (0, 2, 1));
    }

    #[test]
    fn chunk_minimization_beats_naive_order() {
        // "the" can pair with either reference "the"; only one choice keeps a single chunk
        let c = tokenize("the cat");
        let r = tokenize("the dog saw the cat");
        let a = align(c.tokens(), r.tokens());
        assert_eq!(a.chunks, 1);
        assert_eq!(a.pairs, vec![(0, 3), (1, 4)]);
        assert!(a.optimal);
    }

    #[test]
    fn exact_stage_takes_priority_over_stems() {
        // candidate "run" must match the exact "run", leaving "runs" unmatched
        let a = align(tokenize("run").tokens(), tokenize("runs run").tokens());
        assert_eq!((a.exact, a.stemmed), (1, 0));
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn chunk_counting() {
        assert_eq!(count_chunks(&[]), 0);
        assert_eq!(count_chunks(&[(0, 0), (1, 1), (2, 5), (3, 6), (5, 7)]), 3);
        assert_eq!(count_chunks(&[(0, 1), (1, 0)]), 2);
    }
}
