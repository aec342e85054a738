//! Slow, literal reimplementations of the lexical metrics used to check the
//! library. Nothing here shares code with the crate except the stemmer.

use rust_stemmers::{Algorithm, Stemmer};

fn occurrences(seq: &[&str], gram: &[&str]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
}

pub fn bleu(cand: &[&str], refr: &[&str], epsilon: f64) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=4usize {
        if cand.len() < n {
            break;
        }
        let total = cand.len() - n + 1;
        // every distinct n-gram position counted once, clipped by the reference
        let mut matches = 0;
        let mut seen: Vec<&[&str]> = Vec::new();
        for i in 0..total {
            let g = &cand[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            matches += occurrences(cand, g).min(occurrences(refr, g));
        }
        let p = if matches == 0 { epsilon } else { matches as f64 } / total as f64;
        logs.push(p.ln());
    }
    let geo = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    geo * bp
}

pub fn rouge1(cand: &[&str], refr: &[&str]) -> f64 {
    let mut used = vec![false; refr.len()];
    let mut m = 0;
    for w in cand {
        if let Some(j) = (0..refr.len()).find(|&j| !used[j] && refr[j] == *w) {
            used[j] = true;
            m += 1;
        }
    }
    2.0 * m as f64 / (cand.len() + refr.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestAlignment {
    pub exact: usize,
    pub total: usize,
    pub chunks: usize,
}

fn chunks_of(pairs: &[(usize, usize)]) -> usize {
    let mut sorted = pairs.to_vec();
    sorted.sort();
    let mut chunks = 0;
    for k in 0..sorted.len() {
        let continues = k > 0 && sorted[k].0 == sorted[k - 1].0 + 1 && sorted[k].1 == sorted[k - 1].1 + 1;
        if !continues {
            chunks += 1;
        }
    }
    chunks
}

/// Enumerates every partial one-to-one alignment built from exact and stem
/// matches. Best means most exact matches, then most matches, then fewest
/// chunks.
pub fn best_alignment(cand: &[&str], refr: &[&str]) -> BestAlignment {
    let stemmer = Stemmer::create(Algorithm::English);
    let cs: Vec<String> = cand.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let rs: Vec<String> = refr.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let mut best = BestAlignment {
        exact: 0,
        total: 0,
        chunks: 0,
    };
    let mut used = vec![false; refr.len()];
    let mut pairs = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        exact: usize,
        cand: &[&str],
        refr: &[&str],
        cs: &[String],
        rs: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut BestAlignment,
    ) {
        if i == cand.len() {
            let here = BestAlignment {
                exact,
                total: pairs.len(),
                chunks: chunks_of(pairs),
            };
            let better = (here.exact, here.total, std::cmp::Reverse(here.chunks))
                > (best.exact, best.total, std::cmp::Reverse(best.chunks));
            if better {
                *best = here;
            }
            return;
        }
        go(i + 1, exact, cand, refr, cs, rs, used, pairs, best);
        for j in 0..refr.len() {
            if used[j] {
                continue;
            }
            let is_exact = cand[i] == refr[j];
            if !is_exact && cs[i] != rs[j] {
                continue;
            }
            used[j] = true;
            pairs.push((i, j));
            go(i + 1, exact + usize::from(is_exact), cand, refr, cs, rs, used, pairs, best);
            pairs.pop();
            used[j] = false;
        }
    }
    go(0, 0, cand, refr, &cs, &rs, &mut used, &mut pairs, &mut best);
    best
}

pub fn meteor(cand: &[&str], refr: &[&str]) -> f64 {
    let a = best_alignment(cand, refr);
    if a.total == 0 {
        return 0.0;
    }
    let m = a.total as f64;
    let p = m / cand.len() as f64;
    let r = m / refr.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    fmean * (1.0 - 0.5 * (a.chunks as f64 / m).powi(3))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
