//! Four-stage retention policy: metadata, speech dominance, static scenes,
//! audio-visual consistency. Gates run in that order and the first rejection
//! wins. All comparisons against "over"/"above" thresholds are strict.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::capgen::client::{embed_audio_clip, embed_frames, ClientError};
use crate::capgen::embed::{cosine, Embedder, EmbeddingError, EmbeddingSeries};
use crate::framediff::FrameAnalysis;
use crate::manifest::{FilterStatus, TimeInterval, VideoRecord};
use crate::mediaio::{subtitle_coverage, AudioTrack, Transcript, VideoAssets, VideoMeta};
use crate::vseg::{split_scenes, VsegConfig, VsegError};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    Config(String),
    #[error("{audio} audio chunks but {visual} visual chunks")]
    ChunkMismatch { audio: usize, visual: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("embedding failed: {0}")]
    Embed(#[from] ClientError),
    #[error(transparent)]
    Scenes(#[from] VsegError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub min_height_px: u32,
    pub required_language: String,
    pub max_subtitle_coverage: f64,
    pub static_frame_diff_threshold: f64,
    pub max_static_fraction: f64,
    pub av_chunk_s: f64,
    pub av_similarity_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_height_px: 360,
            required_language: "en".into(),
            max_subtitle_coverage: 0.95,
            static_frame_diff_threshold: 0.01,
            max_static_fraction: 0.80,
            av_chunk_s: 5.0,
            av_similarity_threshold: 0.25,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FilterError::Config(format!("{name} = {v} not in [0, 1]")))
            }
        };
        unit("max_subtitle_coverage", self.max_subtitle_coverage)?;
        unit("static_frame_diff_threshold", self.static_frame_diff_threshold)?;
        unit("max_static_fraction", self.max_static_fraction)?;
        if !(-1.0..=1.0).contains(&self.av_similarity_threshold) {
            return Err(FilterError::Config(format!(
                "av_similarity_threshold = {} not in [-1, 1]",
                self.av_similarity_threshold
            )));
        }
        if !(self.av_chunk_s > 0.0 && self.av_chunk_s.is_finite()) {
            return Err(FilterError::Config(format!("av_chunk_s must be positive, got {}", self.av_chunk_s)));
        }
        if self.required_language.trim().is_empty() {
            return Err(FilterError::Config("required_language is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Resolution,
    Language,
    NoTranscript,
    SpeechDominance,
    Static,
    AvConsistency,
    Io,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        Self::Resolution,
        Self::Language,
        Self::NoTranscript,
        Self::SpeechDominance,
        Self::Static,
        Self::AvConsistency,
        Self::Io,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Resolution => "resolution",
            Self::Language => "language",
            Self::NoTranscript => "no-transcript",
            Self::SpeechDominance => "speech-dominance",
            Self::Static => "static",
            Self::AvConsistency => "av-consistency",
            Self::Io => "io",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Reject(RejectReason),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        *self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Reject(r) => write!(f, "reject:{r}"),
        }
    }
}

pub fn metadata_gate(meta: &VideoMeta, transcript: Option<&Transcript>, cfg: &FilterConfig) -> Verdict {
    if meta.height < cfg.min_height_px {
        return Verdict::Reject(RejectReason::Resolution);
    }
    let Some(t) = transcript.filter(|_| meta.has_transcript) else {
        return Verdict::Reject(RejectReason::NoTranscript);
    };
    if !t.language.eq_ignore_ascii_case(&cfg.required_language) {
        return Verdict::Reject(RejectReason::Language);
    }
    Verdict::Pass
}

pub fn speech_dominance_gate(transcript: &Transcript, duration_s: f64, cfg: &FilterConfig) -> Verdict {
    if subtitle_coverage(transcript, duration_s) > cfg.max_subtitle_coverage {
        Verdict::Reject(RejectReason::SpeechDominance)
    } else {
        Verdict::Pass
    }
}

/// Total duration of static scenes over `duration_s`.
pub fn static_fraction(analysis: &FrameAnalysis, scenes: &[TimeInterval], duration_s: f64, threshold: f64) -> f64 {
    if !(duration_s > 0.0) {
        return 0.0;
    }
    let total: f64 = scenes
        .iter()
        .filter(|s| analysis.is_static(s, threshold))
        .map(TimeInterval::duration)
        .sum();
    (total / duration_s).clamp(0.0, 1.0)
}

pub fn static_scene_gate(analysis: &FrameAnalysis, scenes: &[TimeInterval], duration_s: f64, cfg: &FilterConfig) -> Verdict {
    if static_fraction(analysis, scenes, duration_s, cfg.static_frame_diff_threshold) > cfg.max_static_fraction {
        Verdict::Reject(RejectReason::Static)
    } else {
        Verdict::Pass
    }
}

/// Largest chunk-aligned cosine.
pub fn max_av_similarity(audio: &EmbeddingSeries, visual: &EmbeddingSeries) -> Result<f64, FilterError> {
    if audio.len() != visual.len() {
        return Err(FilterError::ChunkMismatch { audio: audio.len(), visual: visual.len() });
    }
    Ok(audio
        .vectors()
        .iter()
        .zip(visual.vectors())
        .map(|(a, v)| cosine(a, v))
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn av_consistency_gate(audio: &EmbeddingSeries, visual: &EmbeddingSeries, cfg: &FilterConfig) -> Result<Verdict, FilterError> {
    Ok(if max_av_similarity(audio, visual)? > cfg.av_similarity_threshold {
        Verdict::Pass
    } else {
        Verdict::Reject(RejectReason::AvConsistency)
    })
}

/// `ceil(duration / chunk_s)` consecutive chunks; the last may be short.
pub fn av_chunks(duration_s: f64, chunk_s: f64) -> Vec<TimeInterval> {
    let n = ((duration_s / chunk_s) - 1e-9).ceil().max(1.0) as usize;
    (0..n)
        .filter_map(|i| TimeInterval::new(i as f64 * chunk_s, ((i + 1) as f64 * chunk_s).min(duration_s)).ok())
        .filter(|c| c.duration() > 0.0)
        .collect()
}

/// Audio and visual embeddings for each chunk.
pub fn av_embeddings(
    video_id: &str,
    analysis: &FrameAnalysis,
    track: &AudioTrack,
    embedder: &dyn Embedder,
    duration_s: f64,
    chunk_s: f64,
) -> Result<(EmbeddingSeries, EmbeddingSeries), FilterError> {
    let mut a = Vec::new();
    let mut v = Vec::new();
    for c in av_chunks(duration_s, chunk_s) {
        a.push(embed_audio_clip(embedder, video_id, c, track.slice(c.start(), c.end()), track.sample_rate())?);
        v.push(embed_frames(embedder, video_id, c, &analysis.thumbs[analysis.indices_in(&c)])?);
    }
    Ok((EmbeddingSeries::new(a, chunk_s)?, EmbeddingSeries::new(v, chunk_s)?))
}

/// Inputs shared by every video in a filter run.
pub struct FilterContext<'a> {
    pub embedder: &'a dyn Embedder,
    pub vseg: &'a VsegConfig,
    pub frame_fps: f64,
    pub sample_rate: u32,
}

/// Per-video measurements, present up to the gate that decided.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateMeasurements {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subtitle_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_av_similarity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub video_id: String,
    /// Absent when the metadata itself could not be read.
    pub record: Option<VideoRecord>,
    pub verdict: Verdict,
    pub measurements: GateMeasurements,
    pub error: Option<String>,
}

fn io_outcome(video_id: String, record: Option<VideoRecord>, m: GateMeasurements, err: impl fmt::Display) -> FilterOutcome {
    let record = record.map(|mut r| {
        r.filter_status = FilterStatus::Rejected(RejectReason::Io.as_str().into());
        r
    });
    FilterOutcome {
        video_id,
        record,
        verdict: Verdict::Reject(RejectReason::Io),
        measurements: m,
        error: Some(err.to_string()),
    }
}

fn dir_name(assets: &VideoAssets) -> String {
    assets.root.file_name().map_or_else(|| assets.root.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Applies the gates to one video, loading assets only as gates need them.
pub fn run_filters(assets: &VideoAssets, ctx: &FilterContext<'_>, cfg: &FilterConfig) -> FilterOutcome {
    let mut m = GateMeasurements::default();
    let meta = match assets.load_meta() {
        Ok(meta) => meta,
        Err(e) => return io_outcome(dir_name(assets), None, m, e),
    };
    let fps = meta.fps.unwrap_or(ctx.frame_fps);
    let record = VideoRecord::new(meta.video_id.clone(), meta.duration_s, fps, (meta.width, meta.height));
    let id = meta.video_id.clone();

    let decide = |mut record: VideoRecord, verdict: Verdict, m: GateMeasurements| {
        record.filter_status = match verdict {
            Verdict::Pass => FilterStatus::Retained,
            Verdict::Reject(r) => FilterStatus::Rejected(r.as_str().into()),
        };
        FilterOutcome { video_id: record.video_id.clone(), record: Some(record), verdict, measurements: m, error: None }
    };

    let transcript = match assets.load_transcript() {
        Ok(t) => t,
        Err(e) => return io_outcome(id, Some(record), m, e),
    };
    let v = metadata_gate(&meta, transcript.as_ref(), cfg);
    let Some(transcript) = transcript.filter(|_| v.passed()) else {
        return decide(record, v, m);
    };

    m.subtitle_coverage = Some(subtitle_coverage(&transcript, meta.duration_s));
    let v = speech_dominance_gate(&transcript, meta.duration_s, cfg);
    if !v.passed() {
        return decide(record, v, m);
    }

    let frames = match assets.load_frames(ctx.frame_fps) {
        Ok(f) => f,
        Err(e) => return io_outcome(id, Some(record), m, e),
    };
    let analysis = FrameAnalysis::new(&frames);
    let scenes = match split_scenes(&analysis, ctx.vseg) {
        Ok(s) => s,
        Err(e) => return io_outcome(id, Some(record), m, e),
    };
    m.static_fraction = Some(static_fraction(&analysis, &scenes, meta.duration_s, cfg.static_frame_diff_threshold));
    let v = static_scene_gate(&analysis, &scenes, meta.duration_s, cfg);
    if !v.passed() {
        return decide(record, v, m);
    }

    let track = match assets.load_audio(ctx.sample_rate) {
        Ok(t) => t,
        Err(e) => return io_outcome(id, Some(record), m, e),
    };
    let verdict = av_embeddings(&id, &analysis, &track, ctx.embedder, meta.duration_s, cfg.av_chunk_s)
        .and_then(|(a, vis)| {
            m.max_av_similarity = Some(max_av_similarity(&a, &vis)?);
            av_consistency_gate(&a, &vis, cfg)
        });
    match verdict {
        Ok(v) => decide(record, v, m),
        Err(e) => io_outcome(id, Some(record), m, e),
    }
}

/// Counts per outcome for a filter run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub retained: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl FilterSummary {
    pub fn from_outcomes(outcomes: &[FilterOutcome]) -> Self {
        let mut s = FilterSummary { total: outcomes.len(), ..Default::default() };
        for r in RejectReason::ALL {
            s.rejected.insert(r.as_str().into(), 0);
        }
        for o in outcomes {
            match o.verdict {
                Verdict::Pass => s.retained += 1,
                Verdict::Reject(r) => *s.rejected.entry(r.as_str().into()).or_default() += 1,
            }
        }
        s
    }
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>7}", "outcome", "videos")?;
        writeln!(f, "{:<18} {:>7}", "retained", self.retained)?;
        for r in RejectReason::ALL {
            writeln!(f, "{:<18} {:>7}", r.as_str(), self.rejected.get(r.as_str()).copied().unwrap_or(0))?;
        }
        write!(f, "{:<18} {:>7}", "total", self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mediaio::{FrameSequence, GrayFrame, TranscriptSegment};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn meta(height: u32, has_transcript: bool) -> VideoMeta {
        VideoMeta { video_id: "m".into(), duration_s: 100.0, width: height * 16 / 9, height, has_transcript, fps: None }
    }

    fn transcript(lang: &str, spans: &[(f64, f64)]) -> Transcript {
        let segs = spans.iter().map(|&(a, b)| TranscriptSegment { interval: iv(a, b), text: "w".into() }).collect();
        Transcript::new(lang, segs).unwrap()
    }

    #[test]
    fn metadata_cases() {
        let cfg = FilterConfig::default();
        let en = transcript("en", &[(0.0, 96.0)]);
        assert_eq!(metadata_gate(&meta(1080, true), Some(&en), &cfg), Verdict::Pass);
        assert_eq!(metadata_gate(&meta(240, true), Some(&en), &cfg), Verdict::Reject(RejectReason::Resolution));
        assert_eq!(metadata_gate(&meta(360, true), Some(&en), &cfg), Verdict::Pass);
        assert_eq!(metadata_gate(&meta(720, false), None, &cfg), Verdict::Reject(RejectReason::NoTranscript));
        let de = transcript("de", &[(0.0, 10.0)]);
        assert_eq!(metadata_gate(&meta(720, true), Some(&de), &cfg), Verdict::Reject(RejectReason::Language));
    }

    #[test]
    fn speech_dominance_is_strict() {
        let cfg = FilterConfig::default();
        let g = |end: f64| speech_dominance_gate(&transcript("en", &[(0.0, end)]), 100.0, &cfg);
        assert_eq!(g(96.0), Verdict::Reject(RejectReason::SpeechDominance));
        assert_eq!(g(95.0), Verdict::Pass);
        assert_eq!(speech_dominance_gate(&transcript("en", &[]), 100.0, &cfg), Verdict::Pass);
    }

    fn analysis(frames: Vec<GrayFrame>) -> FrameAnalysis {
        FrameAnalysis::new(&FrameSequence::new(2.0, frames).unwrap())
    }

    #[test]
    fn static_gate_cases() {
        let cfg = FilterConfig::default();
        let still = analysis(vec![GrayFrame::filled(64, 36, 0.5); 20]);
        assert_eq!(static_scene_gate(&still, &[iv(0.0, 10.0)], 10.0, &cfg), Verdict::Reject(RejectReason::Static));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = analysis(
            (0..20)
                .map(|_| GrayFrame { width: 64, height: 36, data: (0..64 * 36).map(|_| rng.gen::<f32>()).collect() })
                .collect(),
        );
        let d = noise.mean_difference(&iv(0.0, 10.0)).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 0.02, "{d}");
        assert_eq!(static_scene_gate(&noise, &[iv(0.0, 10.0)], 10.0, &cfg), Verdict::Pass);

        // 8 s frozen then 2 s changing: exactly 0.80 static passes
        let mut frames = vec![GrayFrame::filled(64, 36, 0.2); 16];
        frames.extend((0..4).map(|i| GrayFrame::filled(64, 36, 0.2 + 0.2 * (i + 1) as f32)));
        let a = analysis(frames);
        let scenes = [iv(0.0, 8.0), iv(8.0, 10.0)];
        assert_eq!(static_fraction(&a, &scenes, 10.0, cfg.static_frame_diff_threshold), 0.8);
        assert_eq!(static_scene_gate(&a, &scenes, 10.0, &cfg), Verdict::Pass);
        let tighter = FilterConfig { max_static_fraction: 0.79, ..cfg };
        assert_eq!(static_scene_gate(&a, &scenes, 10.0, &tighter), Verdict::Reject(RejectReason::Static));
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        crate::capgen::embed::normalize(v).unwrap()
    }

    #[test]
    fn av_gate_cases() {
        let cfg = FilterConfig::default();
        let s = |v: Vec<Vec<f64>>| EmbeddingSeries::new(v, 5.0).unwrap();
        let same = s(vec![vec![1.0, 0.0]]);
        assert!(av_consistency_gate(&same, &same, &cfg).unwrap().passed());
        let ortho = av_consistency_gate(&s(vec![vec![1.0, 0.0]; 3]), &s(vec![vec![0.0, 1.0]; 3]), &cfg).unwrap();
        assert_eq!(ortho, Verdict::Reject(RejectReason::AvConsistency));
        // chunk cosines 0.10, 0.26, 0.05
        let a = s(vec![vec![1.0, 0.0]; 3]);
        let v = s([0.10f64, 0.26, 0.05].iter().map(|&c| unit(&[c, (1.0 - c * c).sqrt()])).collect());
        assert!(av_consistency_gate(&a, &v, &cfg).unwrap().passed());
        assert!(matches!(
            av_consistency_gate(&a, &s(vec![vec![1.0, 0.0]; 2]), &cfg),
            Err(FilterError::ChunkMismatch { audio: 3, visual: 2 })
        ));
    }

    #[test]
    fn chunks_cover_duration() {
        assert_eq!(av_chunks(12.0, 5.0), vec![iv(0.0, 5.0), iv(5.0, 10.0), iv(10.0, 12.0)]);
        assert_eq!(av_chunks(10.0, 5.0).len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        assert!(FilterConfig { av_chunk_s: 0.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { max_static_fraction: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn summary_table_lists_every_reason() {
        let text = FilterSummary::default().to_string();
        for r in RejectReason::ALL {
            assert!(text.contains(r.as_str()));
        }
    }

    proptest! {
        #[test]
        fn loosening_never_rejects_a_pass(
            height in 100u32..1200,
            min_h in 200u32..800,
            loosen_h in 0u32..200,
            cov in 0.0f64..100.0,
            max_cov in 0.5f64..1.0,
            loosen_cov in 0.0f64..0.5,
            cos in -1.0f64..1.0,
            thr in -0.5f64..0.9,
            loosen_thr in 0.0f64..0.5,
        ) {
            let tight = FilterConfig {
                min_height_px: min_h,
                max_subtitle_coverage: max_cov,
                av_similarity_threshold: thr,
                ..Default::default()
            };
            let loose = FilterConfig {
                min_height_px: min_h.saturating_sub(loosen_h),
                max_subtitle_coverage: (max_cov + loosen_cov).min(1.0),
                av_similarity_threshold: thr - loosen_thr,
                ..Default::default()
            };
            let t = transcript("en", &[(0.0, cov.max(0.001))]);
            let m = meta(height, true);
            if metadata_gate(&m, Some(&t), &tight).passed() {
                prop_assert!(metadata_gate(&m, Some(&t), &loose).passed());
            }
            if speech_dominance_gate(&t, 100.0, &tight).passed() {
                prop_assert!(speech_dominance_gate(&t, 100.0, &loose).passed());
            }
            let a = EmbeddingSeries::new(vec![vec![1.0, 0.0]], 5.0).unwrap();
            let v = EmbeddingSeries::new(vec![unit(&[cos, (1.0 - cos * cos).max(0.0).sqrt()])], 5.0).unwrap();
            if av_consistency_gate(&a, &v, &tight).unwrap().passed() {
                prop_assert!(av_consistency_gate(&a, &v, &loose).unwrap().passed());
            }
        }

        #[test]
        fn loosening_static_never_rejects_a_pass(
            values in prop::collection::vec(0.0f32..1.0, 4..30),
            thr in 0.0f64..0.5,
            dthr in 0.0f64..0.5,
            frac in 0.0f64..1.0,
            dfrac in 0.0f64..1.0,
        ) {
            let n = values.len();
            let a = analysis(values.iter().map(|&v| GrayFrame::filled(8, 4, v)).collect());
            let d = n as f64 / 2.0;
            let scenes = [iv(0.0, d / 2.0), iv(d / 2.0, d)];
            let tight = FilterConfig { static_frame_diff_threshold: thr + dthr, max_static_fraction: frac, ..Default::default() };
            let loose = FilterConfig { static_frame_diff_threshold: thr, max_static_fraction: (frac + dfrac).min(1.0), ..Default::default() };
            if static_scene_gate(&a, &scenes, d, &tight).passed() {
                prop_assert!(static_scene_gate(&a, &scenes, d, &loose).passed());
            }
        }
    }
}
