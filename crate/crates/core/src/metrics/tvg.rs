//! Temporal grounding: IoU recall and mean IoU.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::manifest::TimeInterval;

/// Intersection over union of half-open intervals; 0 when disjoint or both empty.
pub fn iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = a.intersection(b);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

pub const TVG_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvgScores {
    pub r_at_0_3: f64,
    pub r_at_0_5: f64,
    pub r_at_0_7: f64,
    pub miou: f64,
    pub count: usize,
    pub missing: usize,
}

/// Scores one predicted interval per reference key. Missing predictions
/// count as IoU 0; predictions for unknown keys are ignored.
pub fn eval_tvg(preds: &[(String, TimeInterval)], refs: &[(String, TimeInterval)]) -> Result<TvgScores, MetricsError> {
    let mut by_key: BTreeMap<&str, &TimeInterval> = BTreeMap::new();
    for (k, iv) in preds {
        if by_key.insert(k.as_str(), iv).is_some() {
            return Err(MetricsError::DuplicateKey(k.clone()));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (k, _) in refs {
        if !seen.insert(k.as_str()) {
            return Err(MetricsError::DuplicateKey(k.clone()));
        }
    }
    if refs.is_empty() {
        return Err(MetricsError::Empty("references"));
    }
    let mut missing = 0;
    let ious: Vec<f64> = refs
        .iter()
        .map(|(k, r)| match by_key.get(k.as_str()) {
            Some(p) => iou(p, r),
            None => {
                missing += 1;
                0.0
            }
        })
        .collect();
    let n = ious.len() as f64;
    // round off representation error so 0.5 is counted at threshold 0.5
    let recall = |tau: f64| ious.iter().filter(|&&v| v >= tau - 1e-12).count() as f64 / n;
    Ok(TvgScores {
        r_at_0_3: recall(TVG_THRESHOLDS[0]),
        r_at_0_5: recall(TVG_THRESHOLDS[1]),
        r_at_0_7: recall(TVG_THRESHOLDS[2]),
        miou: ious.iter().sum::<f64>() / n,
        count: ious.len(),
        missing,
    })
}
