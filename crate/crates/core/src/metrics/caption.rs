//! Caption similarity: BLEU-4, ROUGE-L, METEOR (exact + stem) and CIDEr-D.

use std::collections::{BTreeMap, BTreeSet};

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::text::{ngrams, tokenize};
use super::MetricsError;

pub const BLEU_EPSILON: f64 = 0.1;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand_len), r))
        .unwrap_or(0)
}

/// Corpus BLEU-4 over `(candidate, references)` pairs.
///
/// Orders beyond the longest candidate are dropped (weights renormalized);
/// an order with zero clipped matches contributes `BLEU_EPSILON / total`.
pub fn bleu4_corpus(pairs: &[(Vec<String>, Vec<Vec<String>>)]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in pairs {
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=4 {
            let c = ngrams(cand, n);
            let mut max_ref: BTreeMap<Vec<String>, usize> = BTreeMap::new();
            for r in refs {
                for (g, k) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &c {
                matched[n - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let orders: Vec<usize> = (0..4).filter(|&i| total[i] > 0).collect();
    let log_p: f64 = orders
        .iter()
        .map(|&i| {
            let m = if matched[i] == 0 { BLEU_EPSILON } else { matched[i] as f64 };
            (m / total[i] as f64).ln()
        })
        .sum::<f64>()
        / orders.len() as f64;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * log_p.exp()
}

pub fn bleu4(cand: &[String], refs: &[Vec<String>]) -> f64 {
    bleu4_corpus(&[(cand.to_vec(), refs.to_vec())])
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// ROUGE-L: max LCS precision and recall over references, combined with β = 1.2.
pub fn rouge_l(cand: &[String], refs: &[Vec<String>]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in refs.iter().filter(|r| !r.is_empty()) {
        let l = lcs(cand, reference) as f64;
        p = p.max(l / cand.len() as f64);
        r = r.max(l / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

fn align_stage(
    cand: &[String],
    reference: &[String],
    cand_used: &mut [Option<usize>],
    ref_used: &mut [bool],
    eq: impl Fn(usize, usize) -> bool,
) {
    for i in 0..cand.len() {
        if cand_used[i].is_some() {
            continue;
        }
        let follow = i
            .checked_sub(1)
            .and_then(|p| cand_used[p])
            .map(|j| j + 1)
            .filter(|&j| j < reference.len() && !ref_used[j] && eq(i, j));
        let last = cand_used[..i].iter().rev().find_map(|x| *x);
        let choose = follow.or_else(|| {
            let free = |j: &usize| !ref_used[*j] && eq(i, *j);
            last.and_then(|l| (l + 1..reference.len()).find(free)).or_else(|| (0..reference.len()).find(free))
        });
        if let Some(j) = choose {
            cand_used[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

fn meteor_single(cand: &[String], reference: &[String], stemmer: &Stemmer) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut cand_used = vec![None; cand.len()];
    let mut ref_used = vec![false; reference.len()];
    align_stage(cand, reference, &mut cand_used, &mut ref_used, |i, j| cand[i] == reference[j]);
    let cs: Vec<String> = cand.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    let rs: Vec<String> = reference.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    align_stage(cand, reference, &mut cand_used, &mut ref_used, |i, j| cs[i] == rs[j]);

    let pairs: Vec<(usize, usize)> = cand_used.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// METEOR with exact and Snowball-stem matching, maximized over references.
pub fn meteor(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    refs.iter().map(|r| meteor_single(cand, r, &stemmer)).fold(0.0, f64::max)
}

type Grams = [BTreeMap<Vec<String>, usize>; 4];

fn all_grams(tokens: &[String]) -> Grams {
    [ngrams(tokens, 1), ngrams(tokens, 2), ngrams(tokens, 3), ngrams(tokens, 4)]
}

/// CIDEr-D with document frequencies taken over a reference corpus, one
/// document per item (the union of that item's references).
#[derive(Debug, Clone)]
pub struct CiderD {
    df: BTreeMap<Vec<String>, f64>,
    log_n: f64,
}

impl CiderD {
    pub fn new(corpus: &[Vec<Vec<String>>]) -> Self {
        let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
        for refs in corpus {
            let mut grams: BTreeSet<Vec<String>> = BTreeSet::new();
            for r in refs {
                for g in all_grams(r) {
                    grams.extend(g.into_keys());
                }
            }
            for g in grams {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Self {
            df,
            log_n: (corpus.len().max(1) as f64).ln(),
        }
    }

    fn vectorize(&self, tokens: &[String]) -> ([BTreeMap<Vec<String>, f64>; 4], [f64; 4], usize) {
        let grams = all_grams(tokens);
        let mut vecs: [BTreeMap<Vec<String>, f64>; 4] = Default::default();
        let mut norms = [0.0; 4];
        for n in 0..4 {
            for (g, &tf) in &grams[n] {
                let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (self.log_n - df.ln());
                norms[n] += w * w;
                vecs[n].insert(g.clone(), w);
            }
            norms[n] = norms[n].sqrt();
        }
        (vecs, norms, tokens.len())
    }

    pub fn score(&self, cand: &[String], refs: &[Vec<String>]) -> f64 {
        if cand.is_empty() || refs.is_empty() {
            return 0.0;
        }
        let (hv, hn, hl) = self.vectorize(cand);
        let mut sum = 0.0;
        for r in refs {
            let (rv, rn, rl) = self.vectorize(r);
            let delta = hl as f64 - rl as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..4 {
                let mut val: f64 = hv[n]
                    .iter()
                    .filter_map(|(g, &h)| rv[n].get(g).map(|&r| h.min(r) * r))
                    .sum();
                if hn[n] != 0.0 && rn[n] != 0.0 {
                    val /= hn[n] * rn[n];
                }
                sum += val * penalty;
            }
        }
        sum / 4.0 / refs.len() as f64 * CIDER_SCALE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

/// Scores one candidate against its references under a CIDEr-D corpus.
pub fn caption_scores(candidate: &str, references: &[String], cider: &CiderD) -> Result<CaptionScores, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::Empty("references"));
    }
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return Ok(CaptionScores::default());
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    Ok(CaptionScores {
        bleu4: bleu4(&cand, &refs),
        rouge_l: rouge_l(&cand, &refs),
        meteor: meteor(&cand, &refs),
        cider: cider.score(&cand, &refs),
    })
}

/// One segment captioning item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScItem {
    pub key: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// Corpus BLEU-4 plus mean ROUGE-L, METEOR and CIDEr-D over items.
pub fn eval_sc(items: &[ScItem]) -> Result<CaptionScores, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty("segment captioning items"));
    }
    if let Some(bad) = items.iter().find(|i| i.references.is_empty()) {
        return Err(MetricsError::NoReferences(bad.key.clone()));
    }
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = items
        .iter()
        .map(|i| (tokenize(&i.candidate), i.references.iter().map(|r| tokenize(r)).collect()))
        .collect();
    let cider = CiderD::new(&tokenized.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&Vec<String>, &Vec<Vec<String>>) -> f64| {
        tokenized.iter().map(|(c, r)| if c.is_empty() { 0.0 } else { f(c, r) }).sum::<f64>() / n
    };
    Ok(CaptionScores {
        bleu4: bleu4_corpus(&tokenized),
        rouge_l: mean(&|c, r| rouge_l(c, r)),
        meteor: mean(&|c, r| meteor(c, r)),
        cider: mean(&|c, r| cider.score(c, r)),
    })
}
