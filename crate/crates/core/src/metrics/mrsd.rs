//! Max running semantic difference over per-second embeddings.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::capgen::embed::{cosine, EmbeddingSeries};
use crate::manifest::{DatasetManifest, Modality, TimeInterval};

/// `max_i (1 - cos(f_i, f_{i+1}))`.
pub fn mrsd(series: &EmbeddingSeries) -> Result<f64, MetricsError> {
    if series.len() < 2 {
        return Err(MetricsError::TooFewVectors(series.len()));
    }
    Ok(series
        .vectors()
        .windows(2)
        .map(|w| 1.0 - cosine(&w[0], &w[1]))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Source of one embedding per second over an event span.
pub trait SecondEmbeddings {
    fn per_second(&self, video_id: &str, modality: Modality, span: &TimeInterval) -> Result<EmbeddingSeries, String>;
}

impl<F> SecondEmbeddings for F
where
    F: Fn(&str, Modality, &TimeInterval) -> Result<EmbeddingSeries, String>,
{
    fn per_second(&self, video_id: &str, modality: Modality, span: &TimeInterval) -> Result<EmbeddingSeries, String> {
        self(video_id, modality, span)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryStage {
    VisualSplit,
    VisualStitch,
    AudioSplit,
    AudioStitch,
    Omni,
}

impl BoundaryStage {
    pub const ALL: [BoundaryStage; 5] = [
        BoundaryStage::VisualSplit,
        BoundaryStage::VisualStitch,
        BoundaryStage::AudioSplit,
        BoundaryStage::AudioStitch,
        BoundaryStage::Omni,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            BoundaryStage::VisualSplit => "visual (split)",
            BoundaryStage::VisualStitch => "visual (stitch)",
            BoundaryStage::AudioSplit => "audio (split)",
            BoundaryStage::AudioStitch => "audio (stitch)",
            BoundaryStage::Omni => "omni",
        }
    }

    fn modalities(&self) -> &'static [Modality] {
        match self {
            BoundaryStage::VisualSplit | BoundaryStage::VisualStitch => &[Modality::Visual],
            BoundaryStage::AudioSplit | BoundaryStage::AudioStitch => &[Modality::Audio],
            BoundaryStage::Omni => &[Modality::Visual, Modality::Audio],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsdRow {
    pub stage: BoundaryStage,
    pub mrsd_v: Option<f64>,
    pub mrsd_a: Option<f64>,
    pub mean_len_s: f64,
    pub events: usize,
    /// Events shorter than two per-second embeddings.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsdReport {
    pub rows: Vec<MrsdRow>,
}

impl std::fmt::Display for MrsdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<18} {:>8} {:>8} {:>9} {:>7}", "stage", "MRSD-V", "MRSD-A", "avg len", "events")?;
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>8} {:>8} {:>8.1}s {:>7}",
                r.stage.label(),
                cell(r.mrsd_v),
                cell(r.mrsd_a),
                r.mean_len_s,
                r.events
            )?;
        }
        Ok(())
    }
}

fn stage_intervals(m: &DatasetManifest, stage: BoundaryStage) -> Vec<(&str, TimeInterval)> {
    let mut out = Vec::new();
    for r in m.records.iter().filter(|r| r.is_retained()) {
        let vid = r.video_id.as_str();
        match stage {
            BoundaryStage::VisualSplit => {
                if let Some(b) = &r.boundary_stages {
                    out.extend(b.visual_split.iter().map(|i| (vid, *i)));
                }
            }
            BoundaryStage::AudioSplit => {
                if let Some(b) = &r.boundary_stages {
                    out.extend(b.audio_split.iter().map(|i| (vid, *i)));
                }
            }
            BoundaryStage::VisualStitch => out.extend(r.visual_events.iter().map(|e| (vid, e.interval))),
            BoundaryStage::AudioStitch => out.extend(r.audio_events.iter().map(|e| (vid, e.interval))),
            BoundaryStage::Omni => out.extend(r.omni_events.iter().map(|e| (vid, e.interval))),
        }
    }
    out
}

/// Mean MRSD per boundary stage and modality, with mean event length.
pub fn mrsd_report(manifest: &DatasetManifest, source: &dyn SecondEmbeddings) -> MrsdReport {
    let rows = BoundaryStage::ALL
        .iter()
        .map(|&stage| {
            let spans = stage_intervals(manifest, stage);
            let mut sums = [(0.0f64, 0usize); 2];
            let mut skipped = 0usize;
            for (vid, span) in &spans {
                for &modality in stage.modalities() {
                    let slot = usize::from(modality == Modality::Audio);
                    match source.per_second(vid, modality, span).map_err(MetricsError::Embedding).and_then(|s| mrsd(&s)) {
                        Ok(v) => {
                            sums[slot].0 += v;
                            sums[slot].1 += 1;
                        }
                        Err(e) => {
                            log::debug!("{vid} {span:?}: {e}");
                            skipped += 1;
                        }
                    }
                }
            }
            let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
            let uses = |m: Modality| stage.modalities().contains(&m);
            MrsdRow {
                stage,
                mrsd_v: uses(Modality::Visual).then(|| mean(sums[0])).flatten(),
                mrsd_a: uses(Modality::Audio).then(|| mean(sums[1])).flatten(),
                mean_len_s: if spans.is_empty() {
                    0.0
                } else {
                    spans.iter().map(|(_, s)| s.duration()).sum::<f64>() / spans.len() as f64
                },
                events: spans.len(),
                skipped,
            }
        })
        .collect();
    MrsdReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::tests::sample_record;
    use proptest::prelude::*;

    fn unit2(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    #[test]
    fn unit_cases() {
        let constant = EmbeddingSeries::new(vec![unit2(0.3); 4], 1.0).unwrap();
        assert_eq!(mrsd(&constant).unwrap(), 0.0);
        let ortho = EmbeddingSeries::new(vec![unit2(0.0), unit2(std::f64::consts::FRAC_PI_2)], 1.0).unwrap();
        assert!((mrsd(&ortho).unwrap() - 1.0).abs() < 1e-12);
        // neighbour cosines 0.9, 0.5, 0.8
        let angles = [0.0, 0.9f64.acos(), 0.9f64.acos() + 0.5f64.acos(), 0.9f64.acos() + 0.5f64.acos() + 0.8f64.acos()];
        let s = EmbeddingSeries::new(angles.iter().map(|&a| unit2(a)).collect(), 1.0).unwrap();
        assert!((mrsd(&s).unwrap() - 0.5).abs() < 1e-12);
        let one = EmbeddingSeries::new(vec![unit2(0.0)], 1.0).unwrap();
        assert!(matches!(mrsd(&one), Err(MetricsError::TooFewVectors(1))));
    }

    proptest! {
        #[test]
        fn rotation_invariant(angles in prop::collection::vec(0.0f64..6.28, 2..10), rot in 0.0f64..6.28) {
            let a = EmbeddingSeries::new(angles.iter().map(|&t| unit2(t)).collect(), 1.0).unwrap();
            let b = EmbeddingSeries::new(angles.iter().map(|&t| unit2(t + rot)).collect(), 1.0).unwrap();
            prop_assert!((mrsd(&a).unwrap() - mrsd(&b).unwrap()).abs() < 1e-9);
        }
    }

    /// Piecewise-constant regime: visual flips at 10 s, audio is constant.
    fn regime(_: &str, m: Modality, span: &TimeInterval) -> Result<EmbeddingSeries, String> {
        let n = span.duration().floor() as usize;
        let v = (0..n)
            .map(|i| {
                let t = span.start() + i as f64 + 0.5;
                match m {
                    Modality::Visual if t >= 10.0 => unit2(std::f64::consts::FRAC_PI_2),
                    _ => unit2(0.0),
                }
            })
            .collect();
        EmbeddingSeries::new(v, 1.0).map_err(|e| e.to_string())
    }

    #[test]
    fn omni_spanning_regimes_is_higher() {
        let mut r = sample_record();
        // one omni event spanning both visual regimes
        r.omni_events.truncate(1);
        r.omni_events[0].interval = TimeInterval::new(0.0, 20.0).unwrap();
        r.omni_events[0].visual_event_ids = vec!["v0".into(), "v1".into()];
        r.omni_events[0].audio_event_ids = vec!["a0".into(), "a1".into()];
        let m = DatasetManifest::new(vec![r]);
        let report = mrsd_report(&m, &regime);
        let row = |s: BoundaryStage| report.rows.iter().find(|r| r.stage == s).unwrap().clone();
        assert_eq!(row(BoundaryStage::VisualStitch).mrsd_v, Some(0.0));
        assert_eq!(row(BoundaryStage::AudioStitch).mrsd_a, Some(0.0));
        assert!(row(BoundaryStage::Omni).mrsd_v.unwrap() > row(BoundaryStage::VisualStitch).mrsd_v.unwrap());
        assert_eq!(row(BoundaryStage::VisualStitch).mrsd_a, None);
        assert!(report.to_string().contains("omni"));
    }
}
