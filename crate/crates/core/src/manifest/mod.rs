//! Dataset data model: videos, modal events, omni-modal events and splits.
//!
//! All timestamps are seconds, quantized to milliseconds on construction so
//! that the line-delimited serialization round-trips exactly.

mod io;
mod split;
mod stats;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{read_manifest, read_manifest_file, write_manifest, write_manifest_file, SCHEMA_VERSION};
pub use split::assign_splits;
pub use stats::{dataset_stats, DurationBin, StatsReport};

/// Tolerance used when comparing interval ends against a video duration.
pub const BOUNDS_EPS: f64 = 1e-6;

/// Rounds seconds to the nearest millisecond.
pub fn quantize_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema version {found} (this build reads up to {supported})")]
    UnsupportedSchema { found: u32, supported: u32 },
    #[error("invalid interval [{start}, {end})")]
    InvalidInterval { start: f64, end: f64 },
    #[error("video {video_id}: {kind} violated: {detail}")]
    Invariant {
        video_id: String,
        kind: InvariantKind,
        detail: String,
    },
    #[error("{0}")]
    Split(String),
    #[error("manifest is empty")]
    Empty,
}

/// Names of the manifest invariants, surfaced verbatim in validation errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantKind {
    UniqueId,
    Sorted,
    NoOverlap,
    NoTruncation,
    Bounds,
    DanglingRef,
    ModalityMismatch,
}

impl InvariantKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvariantKind::UniqueId => "unique-id",
            InvariantKind::Sorted => "sorted",
            InvariantKind::NoOverlap => "no-overlap",
            InvariantKind::NoTruncation => "no-truncation",
            InvariantKind::Bounds => "bounds",
            InvariantKind::DanglingRef => "dangling-ref",
            InvariantKind::ModalityMismatch => "modality-mismatch",
        }
    }
}

impl fmt::Display for InvariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open span `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeInterval {
    start_s: f64,
    end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, ManifestError> {
        let (start, end) = (quantize_ms(start_s), quantize_ms(end_s));
        if !start.is_finite() || !end.is_finite() || start < 0.0 || start >= end {
            return Err(ManifestError::InvalidInterval {
                start: start_s,
                end: end_s,
            });
        }
        Ok(Self {
            start_s: start,
            end_s: end,
        })
    }

    pub fn start(&self) -> f64 {
        self.start_s
    }

    pub fn end(&self) -> f64 {
        self.end_s
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    /// Length of the intersection, zero when disjoint.
    pub fn intersection(&self, other: &TimeInterval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    /// True when the spans share a set of positive measure.
    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }

    pub fn contains_time(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }

    /// Smallest interval covering both.
    pub fn hull(&self, other: &TimeInterval) -> TimeInterval {
        TimeInterval {
            start_s: self.start_s.min(other.start_s),
            end_s: self.end_s.max(other.end_s),
        }
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            start_s: f64,
            end_s: f64,
        }
        let raw = Raw::deserialize(d)?;
        TimeInterval::new(raw.start_s, raw.end_s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        })
    }
}

/// A single-modality segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalEvent {
    pub id: String,
    pub modality: Modality,
    pub interval: TimeInterval,
    /// Video caption for visual events, cleaned audio caption for audio events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_text: Option<String>,
}

impl ModalEvent {
    pub fn new(id: impl Into<String>, modality: Modality, interval: TimeInterval) -> Self {
        Self {
            id: id.into(),
            modality,
            interval,
            caption: None,
            keyframe_caption: None,
            asr_text: None,
        }
    }
}

/// Audio-visual correlation categories plus the two unimodal tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationTag {
    Complementary,
    Synchronicity,
    Enhancement,
    SceneAware,
    Causality,
    TemporalAssociation,
    Corrective,
    VisualOnly,
    AudioOnly,
}

impl CorrelationTag {
    pub const ALL: [CorrelationTag; 9] = [
        CorrelationTag::Complementary,
        CorrelationTag::Synchronicity,
        CorrelationTag::Enhancement,
        CorrelationTag::SceneAware,
        CorrelationTag::Causality,
        CorrelationTag::TemporalAssociation,
        CorrelationTag::Corrective,
        CorrelationTag::VisualOnly,
        CorrelationTag::AudioOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorrelationTag::Complementary => "complementary",
            CorrelationTag::Synchronicity => "synchronicity",
            CorrelationTag::Enhancement => "enhancement",
            CorrelationTag::SceneAware => "scene-aware",
            CorrelationTag::Causality => "causality",
            CorrelationTag::TemporalAssociation => "temporal-association",
            CorrelationTag::Corrective => "corrective",
            CorrelationTag::VisualOnly => "visual-only",
            CorrelationTag::AudioOnly => "audio-only",
        }
    }
}

impl fmt::Display for CorrelationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrelationTag {
    type Err = String;

    /// Accepts the canonical kebab-case names, case-insensitively, with
    /// spaces or underscores in place of hyphens.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '_' { '-' } else { c })
            .collect();
        CorrelationTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown correlation tag {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmniEvent {
    pub id: String,
    pub interval: TimeInterval,
    pub visual_event_ids: Vec<String>,
    pub audio_event_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omni_caption: Option<String>,
    #[serde(default)]
    pub correlation_tags: BTreeSet<CorrelationTag>,
    #[serde(default)]
    pub has_temporal_dynamics: bool,
}

impl OmniEvent {
    pub fn new(id: impl Into<String>, interval: TimeInterval) -> Self {
        Self {
            id: id.into(),
            interval,
            visual_event_ids: Vec::new(),
            audio_event_ids: Vec::new(),
            omni_caption: None,
            correlation_tags: BTreeSet::new(),
            has_temporal_dynamics: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum FilterStatus {
    /// Not yet run through the filter gates.
    #[default]
    Pending,
    Retained,
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    #[default]
    Unreviewed,
    Flagged,
    Corrected,
    Approved,
}

/// Intermediate boundaries kept for coherence analysis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryStages {
    #[serde(default)]
    pub visual_split: Vec<TimeInterval>,
    #[serde(default)]
    pub audio_split: Vec<TimeInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub resolution: (u32, u32),
    #[serde(default)]
    pub visual_events: Vec<ModalEvent>,
    #[serde(default)]
    pub audio_events: Vec<ModalEvent>,
    #[serde(default)]
    pub omni_events: Vec<OmniEvent>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub filter_status: FilterStatus,
    #[serde(default)]
    pub review_state: ReviewState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_stages: Option<BoundaryStages>,
}

impl VideoRecord {
    pub fn new(video_id: impl Into<String>, duration_s: f64, fps: f64, resolution: (u32, u32)) -> Self {
        Self {
            video_id: video_id.into(),
            duration_s: quantize_ms(duration_s),
            fps,
            resolution,
            visual_events: Vec::new(),
            audio_events: Vec::new(),
            omni_events: Vec::new(),
            split: Split::Unassigned,
            filter_status: FilterStatus::Pending,
            review_state: ReviewState::Unreviewed,
            boundary_stages: None,
        }
    }

    pub fn is_retained(&self) -> bool {
        !matches!(self.filter_status, FilterStatus::Rejected(_))
    }

    pub fn modal_event(&self, id: &str) -> Option<&ModalEvent> {
        self.visual_events
            .iter()
            .chain(self.audio_events.iter())
            .find(|e| e.id == id)
    }

    fn violation(&self, kind: InvariantKind, detail: impl Into<String>) -> ManifestError {
        ManifestError::Invariant {
            video_id: self.video_id.clone(),
            kind,
            detail: detail.into(),
        }
    }

    /// Checks every per-video invariant.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(self.violation(InvariantKind::Bounds, format!("duration {}", self.duration_s)));
        }
        let mut ids = HashSet::new();
        let all_ids = self
            .visual_events
            .iter()
            .map(|e| &e.id)
            .chain(self.audio_events.iter().map(|e| &e.id))
            .chain(self.omni_events.iter().map(|e| &e.id));
        for id in all_ids {
            if !ids.insert(id.as_str()) {
                return Err(self.violation(InvariantKind::UniqueId, format!("duplicate event id {id}")));
            }
        }

        for (events, modality) in [
            (&self.visual_events, Modality::Visual),
            (&self.audio_events, Modality::Audio),
        ] {
            for e in events.iter() {
                if e.modality != modality {
                    return Err(self.violation(
                        InvariantKind::ModalityMismatch,
                        format!("event {} listed as {modality} but tagged {}", e.id, e.modality),
                    ));
                }
            }
            let spans: Vec<(&str, TimeInterval)> =
                events.iter().map(|e| (e.id.as_str(), e.interval)).collect();
            self.check_timeline(&spans)?;
        }

        let omni_spans: Vec<(&str, TimeInterval)> =
            self.omni_events.iter().map(|e| (e.id.as_str(), e.interval)).collect();
        self.check_timeline(&omni_spans)?;

        let visual: HashMap<&str, &ModalEvent> =
            self.visual_events.iter().map(|e| (e.id.as_str(), e)).collect();
        let audio: HashMap<&str, &ModalEvent> =
            self.audio_events.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for omni in &self.omni_events {
            for vid in &omni.visual_event_ids {
                if !visual.contains_key(vid.as_str()) {
                    return Err(self.violation(
                        InvariantKind::DanglingRef,
                        format!("omni event {} references missing visual event {vid}", omni.id),
                    ));
                }
            }
            for aid in &omni.audio_event_ids {
                let Some(a) = audio.get(aid.as_str()) else {
                    return Err(self.violation(
                        InvariantKind::DanglingRef,
                        format!("omni event {} references missing audio event {aid}", omni.id),
                    ));
                };
                if !omni.interval.contains(&a.interval) {
                    return Err(self.violation(
                        InvariantKind::NoTruncation,
                        format!(
                            "omni event {} [{}, {}) truncates audio event {aid} [{}, {})",
                            omni.id,
                            omni.interval.start(),
                            omni.interval.end(),
                            a.interval.start(),
                            a.interval.end()
                        ),
                    ));
                }
                if let Some(prev) = owner.insert(aid.as_str(), omni.id.as_str()) {
                    return Err(self.violation(
                        InvariantKind::UniqueId,
                        format!("audio event {aid} referenced by both {prev} and {}", omni.id),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_timeline(&self, spans: &[(&str, TimeInterval)]) -> Result<(), ManifestError> {
        for (id, iv) in spans {
            if iv.end() > self.duration_s + BOUNDS_EPS {
                return Err(self.violation(
                    InvariantKind::Bounds,
                    format!("event {id} ends at {} past duration {}", iv.end(), self.duration_s),
                ));
            }
        }
        for pair in spans.windows(2) {
            let ((a_id, a), (b_id, b)) = (pair[0], pair[1]);
            if b.start() < a.start() {
                return Err(self.violation(
                    InvariantKind::Sorted,
                    format!("event {b_id} starts before {a_id}"),
                ));
            }
            if a.overlaps(&b) {
                return Err(self.violation(
                    InvariantKind::NoOverlap,
                    format!(
                        "events {a_id} [{}, {}) and {b_id} [{}, {}) overlap",
                        a.start(),
                        a.end(),
                        b.start(),
                        b.end()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Run metadata written into the manifest header.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunHeader {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunHeader>,
    pub records: Vec<VideoRecord>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl DatasetManifest {
    pub fn new(records: Vec<VideoRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run: None,
            records,
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(r.violation(InvariantKind::UniqueId, "duplicate video_id"));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn get_mut(&mut self, video_id: &str) -> Option<&mut VideoRecord> {
        self.records.iter_mut().find(|r| r.video_id == video_id)
    }
}
