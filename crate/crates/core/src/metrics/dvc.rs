//! Dense captioning: SODA_c story-level matching plus paired CIDEr/METEOR.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::caption::{meteor, CiderD};
use super::text::tokenize;
use super::tvg::iou;
use super::MetricsError;
use crate::manifest::TimeInterval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvcEvent {
    pub interval: TimeInterval,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SodaScorer {
    #[default]
    Meteor,
    Cider,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SodaVideo {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn sorted(events: &[DvcEvent]) -> Vec<&DvcEvent> {
    let mut v: Vec<&DvcEvent> = events.iter().collect();
    v.sort_by(|a, b| a.interval.start().total_cmp(&b.interval.start()).then(a.interval.end().total_cmp(&b.interval.end())));
    v
}

/// Weight matrix `W[i][j] = IoU(pred_i, ref_j) * score(pred_i, ref_j)` over
/// start-sorted events.
pub fn soda_weights(preds: &[DvcEvent], refs: &[DvcEvent], score: &dyn Fn(&str, &str) -> f64) -> Vec<Vec<f64>> {
    let (p, r) = (sorted(preds), sorted(refs));
    p.iter()
        .map(|pe| {
            r.iter()
                .map(|re| {
                    let o = iou(&pe.interval, &re.interval);
                    if o > 0.0 { o * score(&pe.caption, &re.caption) } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Maximum total weight of an order-preserving one-to-one matching.
pub fn max_ordered_matching(w: &[Vec<f64>]) -> f64 {
    let m = w.first().map_or(0, Vec::len);
    let mut prev = vec![0.0f64; m + 1];
    for row in w {
        let mut cur = vec![0.0f64; m + 1];
        for j in 0..m {
            cur[j + 1] = prev[j + 1].max(cur[j]).max(prev[j] + row[j]);
        }
        prev = cur;
    }
    prev[m]
}

pub fn soda_video(preds: &[DvcEvent], refs: &[DvcEvent], score: &dyn Fn(&str, &str) -> f64) -> SodaVideo {
    if preds.is_empty() || refs.is_empty() {
        return SodaVideo { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let total = max_ordered_matching(&soda_weights(preds, refs, score));
    let precision = total / preds.len() as f64;
    let recall = total / refs.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    SodaVideo { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DvcScores {
    pub soda_c: f64,
    pub cider: f64,
    pub meteor: f64,
}

fn check_keys(
    preds: &BTreeMap<String, Vec<DvcEvent>>,
    refs: &BTreeMap<String, Vec<DvcEvent>>,
) -> Result<(), MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::Empty("reference videos"));
    }
    if let Some(k) = preds.keys().find(|k| !refs.contains_key(*k)) {
        return Err(MetricsError::VideoMismatch(k.clone()));
    }
    if let Some(k) = refs.keys().find(|k| !preds.contains_key(*k)) {
        return Err(MetricsError::VideoMismatch(k.clone()));
    }
    Ok(())
}

/// Greedy one-to-one matching by descending IoU, keeping pairs with IoU > 0.
/// Returns for each prediction the matched reference index.
pub fn greedy_iou_matching(preds: &[DvcEvent], refs: &[DvcEvent]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, r) in refs.iter().enumerate() {
            let o = iou(&p.interval, &r.interval);
            if o > 0.0 {
                pairs.push((o, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; preds.len()];
    let mut taken = vec![false; refs.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !taken[j] {
            out[i] = Some(j);
            taken[j] = true;
        }
    }
    out
}

/// Per-video means averaged over videos. Unmatched predictions score 0 in
/// the paired metrics; a video with no predictions scores 0.
pub fn eval_dvc(
    preds: &BTreeMap<String, Vec<DvcEvent>>,
    refs: &BTreeMap<String, Vec<DvcEvent>>,
    scorer: SodaScorer,
) -> Result<DvcScores, MetricsError> {
    check_keys(preds, refs)?;
    let corpus: Vec<Vec<Vec<String>>> = refs.values().flatten().map(|e| vec![tokenize(&e.caption)]).collect();
    let cider = CiderD::new(&corpus);
    let meteor_fn = |a: &str, b: &str| meteor(&tokenize(a), &[tokenize(b)]);
    let cider_fn = |a: &str, b: &str| cider.score(&tokenize(a), &[tokenize(b)]);
    let soda_score: &dyn Fn(&str, &str) -> f64 = match scorer {
        SodaScorer::Meteor => &meteor_fn,
        SodaScorer::Cider => &cider_fn,
    };

    let mut acc = DvcScores::default();
    for (vid, r) in refs {
        let p = &preds[vid];
        acc.soda_c += soda_video(p, r, soda_score).f1;
        if p.is_empty() {
            continue;
        }
        let matching = greedy_iou_matching(p, r);
        let (mut c, mut m) = (0.0, 0.0);
        for (pe, j) in p.iter().zip(&matching) {
            if let Some(j) = j {
                c += cider_fn(&pe.caption, &r[*j].caption);
                m += meteor_fn(&pe.caption, &r[*j].caption);
            }
        }
        acc.cider += c / p.len() as f64;
        acc.meteor += m / p.len() as f64;
    }
    let n = refs.len() as f64;
    Ok(DvcScores {
        soda_c: acc.soda_c / n,
        cider: acc.cider / n,
        meteor: acc.meteor / n,
    })
}

/// SODA_c alone with an arbitrary caption scorer.
pub fn soda_c(
    preds: &BTreeMap<String, Vec<DvcEvent>>,
    refs: &BTreeMap<String, Vec<DvcEvent>>,
    score: &dyn Fn(&str, &str) -> f64,
) -> Result<f64, MetricsError> {
    check_keys(preds, refs)?;
    Ok(refs.iter().map(|(k, r)| soda_video(&preds[k], r, score).f1).sum::<f64>() / refs.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn ev(a: f64, b: f64, c: &str) -> DvcEvent {
        DvcEvent {
            interval: TimeInterval::new(a, b).unwrap(),
            caption: c.into(),
        }
    }

    /// Exhaustive search over order-preserving partial matchings.
    pub(crate) fn brute_force(w: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], i: usize, min_j: usize) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = go(w, i + 1, min_j);
            for j in min_j..w[i].len() {
                best = best.max(w[i][j] + go(w, i + 1, j + 1));
            }
            best
        }
        go(w, 0, 0)
    }

    fn identity(a: &str, b: &str) -> f64 {
        if a == b { 1.0 } else { 0.0 }
    }

    #[test]
    fn perfect_predictions() {
        let r = vec![ev(0.0, 5.0, "a"), ev(5.0, 9.0, "b")];
        let s = soda_video(&r, &r, &identity);
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn crossed_order_scores_lower() {
        let refs = vec![ev(0.0, 10.0, "x"), ev(10.0, 20.0, "y")];
        let aligned = vec![ev(0.0, 10.0, "x"), ev(10.0, 20.0, "y")];
        // captions swapped relative to time: only one of the two (IoU>0) pairs can be used
        let crossed = vec![ev(0.0, 12.0, "y"), ev(8.0, 20.0, "x")];
        let score = |a: &str, b: &str| identity(a, b);
        let wa = soda_weights(&aligned, &refs, &score);
        let wc = soda_weights(&crossed, &refs, &score);
        assert_eq!(max_ordered_matching(&wc), brute_force(&wc));
        assert!(soda_video(&crossed, &refs, &score).f1 < soda_video(&aligned, &refs, &score).f1);
        assert_eq!(max_ordered_matching(&wa), 2.0);
    }

    #[test]
    fn zero_predictions_and_mismatch() {
        let mut refs = BTreeMap::new();
        refs.insert("v".to_string(), vec![ev(0.0, 5.0, "a")]);
        let mut preds = BTreeMap::new();
        preds.insert("v".to_string(), vec![]);
        assert_eq!(eval_dvc(&preds, &refs, SodaScorer::Meteor).unwrap(), DvcScores::default());
        preds.insert("w".to_string(), vec![]);
        assert!(matches!(eval_dvc(&preds, &refs, SodaScorer::Meteor), Err(MetricsError::VideoMismatch(_))));
    }

    #[test]
    fn unmatched_prediction_scores_zero() {
        let mut refs = BTreeMap::new();
        refs.insert("v".to_string(), vec![ev(0.0, 5.0, "a dog barks loudly")]);
        refs.insert("u".to_string(), vec![ev(0.0, 5.0, "rain falls on a roof")]);
        let one = refs.clone();
        let mut two = refs.clone();
        two.get_mut("v").unwrap().push(ev(50.0, 60.0, "a dog barks loudly"));
        let a = eval_dvc(&one, &refs, SodaScorer::Meteor).unwrap();
        let b = eval_dvc(&two, &refs, SodaScorer::Meteor).unwrap();
        assert!((b.meteor - (a.meteor - 0.5 * 0.5 * meteor(&tokenize("a dog barks loudly"), &[tokenize("a dog barks loudly")]))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dp_equals_brute_force(
            w in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..=5), 0..=5)
        ) {
            let cols = w.first().map_or(0, Vec::len);
            let w: Vec<Vec<f64>> = w.into_iter().map(|mut r| { r.resize(cols, 0.0); r }).collect();
            prop_assert!((max_ordered_matching(&w) - brute_force(&w)).abs() < 1e-12);
        }
    }
}
