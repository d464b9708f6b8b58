use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorrelationTag, DatasetManifest, ManifestError};

/// Event-duration histogram bin `[lo, hi)` in seconds; `hi` is `None` for the open tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBin {
    pub lo_s: f64,
    pub hi_s: Option<f64>,
    pub count: usize,
}

const BIN_EDGES: [f64; 7] = [0.0, 5.0, 10.0, 20.0, 30.0, 60.0, 600.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub video_count: usize,
    pub total_hours: f64,
    pub mean_video_duration_s: f64,
    pub event_count: usize,
    pub mean_events_per_video: f64,
    pub mean_event_duration_s: f64,
    pub event_duration_histogram: Vec<DurationBin>,
    /// Omni-event duration summed over all videos divided by total video duration.
    pub coverage: f64,
    pub correlation_histogram: BTreeMap<CorrelationTag, usize>,
    pub temporal_dynamics_fraction: f64,
    pub split_counts: BTreeMap<String, usize>,
}

/// Corpus statistics over omni-modal events.
pub fn dataset_stats(manifest: &DatasetManifest) -> Result<StatsReport, ManifestError> {
    if manifest.records.is_empty() {
        return Err(ManifestError::Empty);
    }
    let video_count = manifest.records.len();
    let total_s: f64 = manifest.records.iter().map(|r| r.duration_s).sum();
    let events: Vec<_> = manifest.records.iter().flat_map(|r| r.omni_events.iter()).collect();
    let event_count = events.len();
    let covered_s: f64 = events.iter().map(|e| e.interval.duration()).sum();

    let mut bins: Vec<DurationBin> = BIN_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| DurationBin {
            lo_s: lo,
            hi_s: BIN_EDGES.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    let mut correlation_histogram = BTreeMap::new();
    for e in &events {
        let d = e.interval.duration();
        let idx = BIN_EDGES.iter().rposition(|&lo| d >= lo).unwrap_or(0);
        bins[idx].count += 1;
        for tag in &e.correlation_tags {
            *correlation_histogram.entry(*tag).or_insert(0) += 1;
        }
    }
    let mut split_counts = BTreeMap::new();
    for r in &manifest.records {
        let key = serde_json::to_value(r.split)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *split_counts.entry(key).or_insert(0) += 1;
    }
    let dynamics = events.iter().filter(|e| e.has_temporal_dynamics).count();

    Ok(StatsReport {
        video_count,
        total_hours: total_s / 3600.0,
        mean_video_duration_s: total_s / video_count as f64,
        event_count,
        mean_events_per_video: event_count as f64 / video_count as f64,
        mean_event_duration_s: if event_count == 0 { 0.0 } else { covered_s / event_count as f64 },
        event_duration_histogram: bins,
        coverage: if total_s > 0.0 { (covered_s / total_s).clamp(0.0, 1.0) } else { 0.0 },
        correlation_histogram,
        temporal_dynamics_fraction: if event_count == 0 { 0.0 } else { dynamics as f64 / event_count as f64 },
        split_counts,
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "videos              {}", self.video_count)?;
        writeln!(f, "total hours         {:.3}", self.total_hours)?;
        writeln!(f, "mean duration (s)   {:.2}", self.mean_video_duration_s)?;
        writeln!(f, "omni events         {}", self.event_count)?;
        writeln!(f, "events / video      {:.2}", self.mean_events_per_video)?;
        writeln!(f, "mean event len (s)  {:.2}", self.mean_event_duration_s)?;
        writeln!(f, "coverage            {:.4}", self.coverage)?;
        writeln!(f, "temporal dynamics   {:.4}", self.temporal_dynamics_fraction)?;
        writeln!(f, "event duration histogram:")?;
        for b in &self.event_duration_histogram {
            match b.hi_s {
                Some(hi) => writeln!(f, "  [{:>5.0}, {:>5.0}) s  {}", b.lo_s, hi, b.count)?,
                None => writeln!(f, "  [{:>5.0},   inf) s  {}", b.lo_s, b.count)?,
            }
        }
        if !self.correlation_histogram.is_empty() {
            writeln!(f, "correlation tags:")?;
            for (tag, n) in &self.correlation_histogram {
                writeln!(f, "  {:<22} {}", tag.as_str(), n)?;
            }
        }
        writeln!(f, "splits:")?;
        for (split, n) in &self.split_counts {
            writeln!(f, "  {split:<10} {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::tests::iv;
    use crate::manifest::{OmniEvent, VideoRecord};

    fn video(id: &str, duration: f64, spans: &[(f64, f64)]) -> VideoRecord {
        let mut r = VideoRecord::new(id, duration, 2.0, (640, 360));
        r.omni_events = spans
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| OmniEvent::new(format!("o{i}"), iv(a, b)))
            .collect();
        r
    }

    #[test]
    fn empty_manifest_errors() {
        assert!(matches!(dataset_stats(&DatasetManifest::default()), Err(ManifestError::Empty)));
    }

    #[test]
    fn coverage_of_single_video() {
        let m = DatasetManifest::new(vec![video("a", 100.0, &[(0.0, 40.0), (40.0, 89.0)])]);
        let s = dataset_stats(&m).unwrap();
        assert!((s.coverage - 0.89).abs() < 1e-12);
    }

    #[test]
    fn mean_events_per_video() {
        let ten: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64 + 1.0)).collect();
        let fourteen: Vec<(f64, f64)> = (0..14).map(|i| (i as f64, i as f64 + 1.0)).collect();
        let m = DatasetManifest::new(vec![video("a", 20.0, &ten), video("b", 20.0, &fourteen)]);
        let s = dataset_stats(&m).unwrap();
        assert_eq!(s.mean_events_per_video, 12.0);
        let hist_total: usize = s.event_duration_histogram.iter().map(|b| b.count).sum();
        assert_eq!(hist_total, s.event_count);
    }
}
