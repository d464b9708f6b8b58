//! Stage drivers over a manifest. Videos run in parallel on a pool of
//! `parallelism` threads; each video is processed sequentially and results
//! are collected in input order, so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aseg::segment_audio;
use crate::capgen::cleanup::cleanup_audio_caption;
use crate::capgen::client::{embed_audio_clip, embed_frames, ClientSet};
use crate::capgen::embed::{Embedder, EmbeddingSeries};
use crate::capgen::{caption_audio_event, caption_visual_event, integrate_omni_caption, tag_correlations, ClipHandle, TagReport};
use crate::config::{ClientMode, PipelineConfig};
use crate::filtergate::{run_filters, FilterContext, FilterOutcome, FilterSummary, RejectReason};
use crate::framediff::FrameAnalysis;
use crate::fuse::{fuse_record, FusionReport};
use crate::manifest::{assign_splits, BoundaryStages, DatasetManifest, FilterStatus, Modality, RunHeader, TimeInterval, VideoRecord};
use crate::metrics::SecondEmbeddings;
use crate::mediaio::{discover_videos, AudioTrack, MediaError, VideoAssets};
use crate::vseg::segment_visual;
use crate::TOOLKIT_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{video_id}: {detail}")]
    Video { video_id: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Filter,
    SegmentVisual,
    SegmentAudio,
    Fuse,
    Caption,
    Split,
    Review,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::SegmentVisual => "segment-visual",
            Stage::SegmentAudio => "segment-audio",
            Stage::Fuse => "fuse",
            Stage::Caption => "caption",
            Stage::Split => "split",
            Stage::Review => "review",
        }
    }
}

pub fn run_header(cfg: &PipelineConfig, stage: Stage) -> RunHeader {
    RunHeader {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        stage: stage.as_str().to_string(),
    }
}

/// Runs `f` on a pool sized by `cfg.parallelism`.
pub fn with_pool<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn assets_for(root: &Path, video_id: &str) -> VideoAssets {
    VideoAssets::new(root.join(video_id))
}

fn reject_io(record: &mut VideoRecord, what: &str, err: impl std::fmt::Display) {
    log::warn!("{}: {what} failed: {err}", record.video_id);
    record.filter_status = FilterStatus::Rejected(RejectReason::Io.as_str().into());
}

/// Filters every video directory under `assets_root` into a fresh manifest.
/// Videos whose metadata is unreadable appear only in the outcomes.
pub fn filter_stage(
    assets_root: &Path,
    cfg: &PipelineConfig,
    clients: &ClientSet,
) -> Result<(DatasetManifest, Vec<FilterOutcome>, FilterSummary), PipelineError> {
    let dirs = discover_videos(assets_root)?;
    let ctx = FilterContext {
        embedder: clients.embedder.as_ref(),
        vseg: &cfg.vseg,
        frame_fps: cfg.media.frame_fps,
        sample_rate: cfg.media.sample_rate,
    };
    let outcomes: Vec<FilterOutcome> =
        with_pool(cfg, || dirs.par_iter().map(|a| run_filters(a, &ctx, &cfg.filter)).collect())?;
    for o in &outcomes {
        if let Some(e) = &o.error {
            log::warn!("{}: {e}", o.video_id);
        }
    }
    let summary = FilterSummary::from_outcomes(&outcomes);
    let mut records: Vec<VideoRecord> = outcomes.iter().filter_map(|o| o.record.clone()).collect();
    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mut dedup: Vec<VideoRecord> = Vec::with_capacity(records.len());
    for r in records {
        if dedup.last().is_some_and(|p| p.video_id == r.video_id) {
            log::warn!("{}: duplicate video id across directories, keeping the first", r.video_id);
            continue;
        }
        dedup.push(r);
    }
    let mut manifest = DatasetManifest::new(dedup);
    manifest.run = Some(run_header(cfg, Stage::Filter));
    Ok((manifest, outcomes, summary))
}

fn map_retained(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    stage: Stage,
    f: impl Fn(&mut VideoRecord) + Sync,
) -> Result<DatasetManifest, PipelineError> {
    let records: Vec<VideoRecord> = with_pool(cfg, || {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let mut r = r.clone();
                if r.is_retained() {
                    f(&mut r);
                }
                r
            })
            .collect()
    })?;
    let mut out = manifest.clone();
    out.records = records;
    out.run = Some(run_header(cfg, stage));
    Ok(out)
}

pub fn segment_visual_stage(
    manifest: &DatasetManifest,
    assets_root: &Path,
    cfg: &PipelineConfig,
    clients: &ClientSet,
) -> Result<DatasetManifest, PipelineError> {
    map_retained(manifest, cfg, Stage::SegmentVisual, |r| {
        let frames = match assets_for(assets_root, &r.video_id).load_frames(cfg.media.frame_fps) {
            Ok(f) => f,
            Err(e) => return reject_io(r, "frame loading", e),
        };
        let analysis = FrameAnalysis::new(&frames);
        match segment_visual(&r.video_id, &analysis, clients.embedder.as_ref(), &cfg.vseg) {
            Ok(seg) => {
                r.visual_events = seg.events;
                r.omni_events.clear();
                r.boundary_stages.get_or_insert_with(BoundaryStages::default).visual_split = seg.split;
            }
            Err(e) => reject_io(r, "visual segmentation", e),
        }
    })
}

pub fn segment_audio_stage(
    manifest: &DatasetManifest,
    assets_root: &Path,
    cfg: &PipelineConfig,
    clients: &ClientSet,
) -> Result<DatasetManifest, PipelineError> {
    map_retained(manifest, cfg, Stage::SegmentAudio, |r| {
        let track = match assets_for(assets_root, &r.video_id).load_audio(cfg.media.sample_rate) {
            Ok(t) => t,
            Err(e) => return reject_io(r, "audio loading", e),
        };
        match segment_audio(&r.video_id, &track, clients.embedder.as_ref(), &cfg.mfcc, &cfg.aseg) {
            Ok(seg) => {
                let d = r.duration_s;
                r.audio_events = seg
                    .events
                    .into_iter()
                    .filter(|e| e.interval.start() < d)
                    .map(|mut e| {
                        if e.interval.end() > d {
                            e.interval = crate::manifest::TimeInterval::new(e.interval.start(), d).expect("start < duration");
                        }
                        e
                    })
                    .collect();
                r.omni_events.clear();
                r.boundary_stages.get_or_insert_with(BoundaryStages::default).audio_split = seg.split;
            }
            Err(e) => reject_io(r, "audio segmentation", e),
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub videos: usize,
    pub omni_events: usize,
    pub absorbed_visual: usize,
    pub mean_coverage: f64,
}

pub fn fuse_stage(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<(DatasetManifest, FuseSummary), PipelineError> {
    let results: Vec<(VideoRecord, Option<FusionReport>)> = with_pool(cfg, || {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let mut r = r.clone();
                if !r.is_retained() {
                    return (r, None);
                }
                match fuse_record(&mut r) {
                    Ok(rep) => (r, Some(rep)),
                    Err(e) => {
                        reject_io(&mut r, "fusion", e);
                        (r, None)
                    }
                }
            })
            .collect()
    })?;
    let mut summary = FuseSummary::default();
    for rep in results.iter().filter_map(|(_, r)| r.as_ref()) {
        summary.videos += 1;
        summary.omni_events += rep.omni_events.len();
        summary.absorbed_visual += rep.absorbed_visual_count;
        summary.mean_coverage += rep.coverage_fraction;
    }
    if summary.videos > 0 {
        summary.mean_coverage /= summary.videos as f64;
    }
    let mut out = manifest.clone();
    out.records = results.into_iter().map(|(r, _)| r).collect();
    out.run = Some(run_header(cfg, Stage::Fuse));
    Ok((out, summary))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionSummary {
    pub visual_captioned: usize,
    pub audio_captioned: usize,
    pub omni_captioned: usize,
    pub failures: usize,
    pub tags: TagReport,
}

fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

#[derive(Default)]
struct CaptionCounts {
    visual: usize,
    audio: usize,
    omni: usize,
    failures: usize,
}

fn caption_record(r: &mut VideoRecord, assets_root: &Path, cfg: &PipelineConfig, clients: &ClientSet) -> CaptionCounts {
    let mut n = CaptionCounts::default();
    let assets = assets_for(assets_root, &r.video_id);
    let transcript = assets.load_transcript().unwrap_or_else(|e| {
        log::warn!("{}: transcript unreadable: {e}", r.video_id);
        None
    });
    let track = if r.audio_events.is_empty() {
        None
    } else {
        assets.load_audio(cfg.media.sample_rate).map_err(|e| log::warn!("{}: audio unreadable: {e}", r.video_id)).ok()
    };
    let clip_path = (cfg.clients.mode == ClientMode::Live).then(|| assets.root.display().to_string());
    let video_id = r.video_id.clone();

    for e in &mut r.visual_events {
        let clip = ClipHandle { video_id: video_id.clone(), clip_path: clip_path.clone(), ..Default::default() };
        match caption_visual_event(e, &clip, clients, cfg.caption.max_chunk_s) {
            Ok(c) => {
                e.caption = Some(c.video_caption);
                e.keyframe_caption = Some(c.keyframe_caption);
                n.visual += 1;
            }
            Err(err) => {
                log::warn!("{video_id}/{}: {err}", e.id);
                n.failures += 1;
            }
        }
    }
    for e in &mut r.audio_events {
        let clip = ClipHandle {
            video_id: video_id.clone(),
            clip_path: clip_path.clone(),
            transcript_hint: transcript.as_ref().map(|t| t.text_in(&e.interval)),
            rms: track.as_ref().map(|t| rms(t.slice(e.interval.start(), e.interval.end()))),
        };
        match caption_audio_event(e, &clip, clients) {
            Ok(c) => {
                e.caption = Some(cleanup_audio_caption(&c.audio_caption, &c.asr_text));
                e.asr_text = (!c.asr_text.is_empty()).then_some(c.asr_text);
                n.audio += 1;
            }
            Err(err) => {
                log::warn!("{video_id}/{}: {err}", e.id);
                n.failures += 1;
            }
        }
    }
    let mut prior: Vec<String> = Vec::new();
    for k in 0..r.omni_events.len() {
        let omni = r.omni_events[k].clone();
        match integrate_omni_caption(r, &omni, &prior, clients, &cfg.caption) {
            Ok(out) => {
                prior.push(out.caption.clone());
                let o = &mut r.omni_events[k];
                o.omni_caption = Some(out.caption);
                o.correlation_tags = out.tags;
                o.has_temporal_dynamics = out.has_temporal_dynamics;
                n.omni += 1;
            }
            Err(err) => {
                log::warn!("{video_id}/{}: {err}", omni.id);
                n.failures += 1;
            }
        }
    }
    n
}

/// Modality captions, omni integration, then correlation tagging by the judge.
pub fn caption_stage(
    manifest: &DatasetManifest,
    assets_root: &Path,
    cfg: &PipelineConfig,
    clients: &ClientSet,
) -> Result<(DatasetManifest, CaptionSummary), PipelineError> {
    let results: Vec<(VideoRecord, CaptionCounts)> = with_pool(cfg, || {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let mut r = r.clone();
                let n = if r.is_retained() { caption_record(&mut r, assets_root, cfg, clients) } else { CaptionCounts::default() };
                (r, n)
            })
            .collect()
    })?;
    let mut summary = CaptionSummary::default();
    let mut captioned = manifest.clone();
    captioned.records = results
        .into_iter()
        .map(|(r, n)| {
            summary.visual_captioned += n.visual;
            summary.audio_captioned += n.audio;
            summary.omni_captioned += n.omni;
            summary.failures += n.failures;
            r
        })
        .collect();
    let (mut tagged, tags) = tag_correlations(&captioned, clients.judge.as_ref(), &clients.retry);
    summary.tags = tags;
    tagged.run = Some(run_header(cfg, Stage::Caption));
    Ok((tagged, summary))
}

/// Paths and summaries of a full run.
/// Assigns train/test splits to retained videos.
pub fn split_stage(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<DatasetManifest, PipelineError> {
    let mut out = assign_splits(manifest, cfg.split.test_fraction, cfg.seed)
        .map_err(|e| PipelineError::Video { video_id: "*".into(), detail: e.to_string() })?;
    out.run = Some(run_header(cfg, Stage::Split));
    Ok(out)
}

/// Per-second embeddings read from the asset tree, one video cached at a time.
pub struct AssetEmbeddings<'a> {
    root: PathBuf,
    cfg: &'a PipelineConfig,
    embedder: &'a dyn Embedder,
    cache: Mutex<Option<(String, Arc<(FrameAnalysis, AudioTrack)>)>>,
}

impl<'a> AssetEmbeddings<'a> {
    pub fn new(root: &Path, cfg: &'a PipelineConfig, embedder: &'a dyn Embedder) -> Self {
        Self { root: root.to_path_buf(), cfg, embedder, cache: Mutex::new(None) }
    }

    fn media(&self, video_id: &str) -> Result<Arc<(FrameAnalysis, AudioTrack)>, String> {
        let mut slot = self.cache.lock().expect("cache lock");
        if let Some((id, m)) = slot.as_ref() {
            if id == video_id {
                return Ok(m.clone());
            }
        }
        let assets = assets_for(&self.root, video_id);
        let frames = assets.load_frames(self.cfg.media.frame_fps).map_err(|e| e.to_string())?;
        let track = assets.load_audio(self.cfg.media.sample_rate).map_err(|e| e.to_string())?;
        let m = Arc::new((FrameAnalysis::new(&frames), track));
        *slot = Some((video_id.to_string(), m.clone()));
        Ok(m)
    }
}

impl SecondEmbeddings for AssetEmbeddings<'_> {
    /// One embedding per whole second `[t, t+1)` inside the span.
    fn per_second(&self, video_id: &str, modality: Modality, span: &TimeInterval) -> Result<EmbeddingSeries, String> {
        let media = self.media(video_id)?;
        let (analysis, track) = (&media.0, &media.1);
        let n = span.duration().floor() as usize;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let s = span.start() + i as f64;
            let sec = TimeInterval::new(s, s + 1.0).map_err(|e| e.to_string())?;
            let v = match modality {
                Modality::Visual => embed_frames(self.embedder, video_id, sec, &analysis.thumbs[analysis.indices_in(&sec)]),
                Modality::Audio => {
                    embed_audio_clip(self.embedder, video_id, sec, track.slice(sec.start(), sec.end()), track.sample_rate())
                }
            }
            .map_err(|e| e.to_string())?;
            out.push(v);
        }
        EmbeddingSeries::new(out, 1.0).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub filter: FilterSummary,
    pub fuse: FuseSummary,
    pub caption: CaptionSummary,
    pub stage_outputs: BTreeMap<String, PathBuf>,
}

/// filter, segment-visual, segment-audio, fuse, caption.
pub fn run_all(assets_root: &Path, cfg: &PipelineConfig, clients: &ClientSet) -> Result<(DatasetManifest, RunSummary), PipelineError> {
    let (m, _, filter) = filter_stage(assets_root, cfg, clients)?;
    let m = segment_visual_stage(&m, assets_root, cfg, clients)?;
    let m = segment_audio_stage(&m, assets_root, cfg, clients)?;
    let (m, fuse) = fuse_stage(&m, cfg)?;
    let (m, caption) = caption_stage(&m, assets_root, cfg, clients)?;
    Ok((m, RunSummary { filter, fuse, caption, stage_outputs: BTreeMap::new() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::write_manifest;
    use crate::synth::{fixture_corpus, write_corpus};

    #[test]
    fn small_corpus_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = fixture_corpus(3, 5);
        write_corpus(dir.path(), &corpus).unwrap();
        let cfg = PipelineConfig { parallelism: 2, ..Default::default() };
        let clients = cfg.clients();
        let (m, summary) = run_all(dir.path(), &cfg, &clients).unwrap();
        m.validate().unwrap();
        assert_eq!(summary.filter.total, 5);
        for ((v, defect), r) in corpus.iter().zip(&m.records) {
            assert_eq!(v.video_id, r.video_id);
            match defect {
                Some(d) => assert_eq!(r.filter_status, FilterStatus::Rejected(d.expected_reason().into())),
                None => {
                    assert_eq!(r.filter_status, FilterStatus::Retained, "{}", r.video_id);
                    assert!(!r.omni_events.is_empty());
                    assert!(r.omni_events.iter().all(|o| o.omni_caption.is_some()));
                }
            }
        }
        let mut bytes = Vec::new();
        write_manifest(&m, &mut bytes).unwrap();
        assert!(!bytes.is_empty());
    }
}
