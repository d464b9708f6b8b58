//! Caption orchestration over pluggable model clients.

pub mod cleanup;
pub mod client;
pub mod embed;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cleanup::cleanup_audio_caption;
pub use client::{
    call_with_retry, ClientError, ClientRequest, ClientResponse, ClientSet, FixedClient, FnClient, HttpClient,
    ModelClient, RetryPolicy, Role, ScriptedClient, StubClient,
};
pub use embed::{cosine, EmbedRequest, Embedder, EmbeddingError, EmbeddingSeries, MediaSlice, StubEmbedder};
use prompts::{vars, Prompt};

use crate::manifest::{CorrelationTag, DatasetManifest, ModalEvent, OmniEvent, TimeInterval, VideoRecord};

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("{role} failed: {source}")]
    Client {
        role: Role,
        #[source]
        source: ClientError,
    },
    #[error("unparseable response after repair: {0}")]
    Unparseable(String),
    #[error("event has zero duration")]
    EmptyEvent,
}

pub type CaptionFilter = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionConfig {
    pub max_chunk_s: f64,
    /// Number of preceding omni captions fed as context.
    pub prior_context: usize,
    #[serde(skip)]
    pub post_filter: Option<CaptionFilter>,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        Self {
            max_chunk_s: 30.0,
            prior_context: 3,
            post_filter: None,
        }
    }
}

impl std::fmt::Debug for CaptionConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaptionConfig")
            .field("max_chunk_s", &self.max_chunk_s)
            .field("prior_context", &self.prior_context)
            .field("post_filter", &self.post_filter.is_some())
            .finish()
    }
}

/// Splits `interval` into `ceil(duration / max_chunk_s)` equal chunks.
pub fn chunk_spans(interval: &TimeInterval, max_chunk_s: f64) -> Vec<TimeInterval> {
    let n = ((interval.duration() / max_chunk_s) - 1e-9).ceil().max(1.0) as usize;
    let step = interval.duration() / n as f64;
    let mut bounds: Vec<f64> = (0..n).map(|i| interval.start() + step * i as f64).collect();
    bounds.push(interval.end());
    bounds
        .windows(2)
        .filter_map(|w| TimeInterval::new(w[0], w[1]).ok())
        .collect()
}

/// Media location passed along to live clients.
#[derive(Debug, Clone, Default)]
pub struct ClipHandle {
    pub video_id: String,
    pub clip_path: Option<String>,
    /// Transcript text overlapping the clip, handed to the ASR role as a hint.
    pub transcript_hint: Option<String>,
    pub rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualCaption {
    pub video_caption: String,
    pub keyframe_caption: String,
    pub chunks: Vec<TimeInterval>,
    /// Absolute keyframe times, one per chunk centre.
    pub keyframes: Vec<f64>,
}

fn fmt_s(t: f64) -> String {
    crate::dialoggen::render_seconds(t)
}

/// Captions a visual event chunk by chunk, with one keyframe per chunk centre.
pub fn caption_visual_event(
    event: &ModalEvent,
    clip: &ClipHandle,
    clients: &ClientSet,
    max_chunk_s: f64,
) -> Result<VisualCaption, CaptionError> {
    if event.interval.duration() <= 0.0 {
        return Err(CaptionError::EmptyEvent);
    }
    let chunks = chunk_spans(&event.interval, max_chunk_s);
    let mut video_parts = Vec::with_capacity(chunks.len());
    let mut key_parts = Vec::with_capacity(chunks.len());
    let mut keyframes = Vec::with_capacity(chunks.len());
    for (i, chunk) in chunks.iter().enumerate() {
        let mut req = ClientRequest::new(Role::VideoCaptioner, &clip.video_id)
            .span(chunk.start(), chunk.end())
            .prompt(Prompt::VideoCaption.render(&vars([
                ("video_id", clip.video_id.clone()),
                ("start", fmt_s(chunk.start())),
                ("end", fmt_s(chunk.end())),
            ])))
            .field("chunk_index", i);
        if let Some(p) = &clip.clip_path {
            req = req.field("clip_path", p);
        }
        let r = clients
            .call(clients.video_captioner.as_ref(), &req)
            .map_err(|source| CaptionError::Client { role: Role::VideoCaptioner, source })?;
        video_parts.push(r.text.trim().to_string());

        let t = chunk.midpoint();
        keyframes.push(t);
        let mut kreq = ClientRequest::new(Role::KeyframeCaptioner, &clip.video_id)
            .span(t, t)
            .prompt(Prompt::KeyframeCaption.render(&vars([
                ("video_id", clip.video_id.clone()),
                ("time", fmt_s(t)),
            ])))
            .field("keyframe_s", t);
        if let Some(p) = &clip.clip_path {
            kreq = kreq.field("clip_path", p);
        }
        let k = clients
            .call(clients.keyframe_captioner.as_ref(), &kreq)
            .map_err(|source| CaptionError::Client { role: Role::KeyframeCaptioner, source })?;
        key_parts.push(k.text.trim().to_string());
    }
    Ok(VisualCaption {
        video_caption: video_parts.join(" "),
        keyframe_caption: key_parts.join(" "),
        chunks,
        keyframes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioCaption {
    pub audio_caption: String,
    /// Empty when the clip holds no speech.
    pub asr_text: String,
}

/// Runs the audio captioner and ASR on one audio event.
pub fn caption_audio_event(
    event: &ModalEvent,
    clip: &ClipHandle,
    clients: &ClientSet,
) -> Result<AudioCaption, CaptionError> {
    if event.interval.duration() <= 0.0 {
        return Err(CaptionError::EmptyEvent);
    }
    let (a, b) = (event.interval.start(), event.interval.end());
    let mut req = ClientRequest::new(Role::AudioCaptioner, &clip.video_id)
        .span(a, b)
        .prompt(Prompt::AudioCaption.render(&vars([
            ("video_id", clip.video_id.clone()),
            ("start", fmt_s(a)),
            ("end", fmt_s(b)),
        ])));
    if let Some(p) = &clip.clip_path {
        req = req.field("clip_path", p);
    }
    let caption = clients
        .call(clients.audio_captioner.as_ref(), &req)
        .map_err(|source| CaptionError::Client { role: Role::AudioCaptioner, source })?;

    let mut asr_req = ClientRequest::new(Role::Asr, &clip.video_id).span(a, b);
    if let Some(p) = &clip.clip_path {
        asr_req = asr_req.field("clip_path", p);
    }
    if let Some(h) = &clip.transcript_hint {
        asr_req = asr_req.field("transcript_hint", h);
    }
    if let Some(rms) = clip.rms {
        asr_req = asr_req.field("rms", rms);
    }
    let asr = clients
        .call(clients.asr.as_ref(), &asr_req)
        .map_err(|source| CaptionError::Client { role: Role::Asr, source })?;
    let asr_text = if asr.has_speech == Some(false) {
        String::new()
    } else {
        asr.text.trim().to_string()
    };
    Ok(AudioCaption {
        audio_caption: caption.text.trim().to_string(),
        asr_text,
    })
}

/// Structured reply of the integrator and the correlation judge.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrated {
    pub caption: String,
    pub tags: BTreeSet<CorrelationTag>,
    pub has_temporal_dynamics: bool,
}

fn tag_list() -> String {
    CorrelationTag::ALL.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ")
}

fn parse_tags(value: &serde_json::Value) -> Result<BTreeSet<CorrelationTag>, String> {
    let names: Vec<String> = match value {
        serde_json::Value::Null => Vec::new(),
        serde_json::Value::String(s) => s.split([',', ';']).map(str::to_string).collect(),
        serde_json::Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| format!("non-string tag {v}")))
            .collect::<Result<_, _>>()?,
        other => return Err(format!("correlations must be a list, got {other}")),
    };
    names
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<CorrelationTag>())
        .collect()
}

fn parse_flag(value: Option<&serde_json::Value>) -> Result<bool, String> {
    match value {
        None | Some(serde_json::Value::Null) => Ok(false),
        Some(serde_json::Value::Bool(b)) => Ok(*b),
        Some(serde_json::Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" | "y" => Ok(true),
            "no" | "false" | "n" => Ok(false),
            other => Err(format!("bad temporal_dynamics value {other:?}")),
        },
        Some(other) => Err(format!("bad temporal_dynamics value {other}")),
    }
}

fn extract_json_object(text: &str) -> Option<serde_json::Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start)
        .then(|| serde_json::from_str(&text[start..=end]).ok())
        .flatten()
        .filter(serde_json::Value::is_object)
}

/// Parses the structured reply. Accepts a JSON object (optionally inside a
/// code fence or surrounded by prose) or `Key: value` lines.
pub fn parse_structured(text: &str, require_caption: bool) -> Result<Integrated, String> {
    if let Some(obj) = extract_json_object(text) {
        let caption = obj.get("caption").and_then(|v| v.as_str()).unwrap_or("").trim().to_string();
        if require_caption && caption.is_empty() {
            return Err("missing caption".into());
        }
        let tags = parse_tags(obj.get("correlations").or_else(|| obj.get("tags")).unwrap_or(&serde_json::Value::Null))?;
        let dynamics = parse_flag(obj.get("temporal_dynamics"))?;
        return Ok(Integrated {
            caption,
            tags,
            has_temporal_dynamics: dynamics,
        });
    }
    let mut caption = None;
    let mut tags = None;
    let mut dynamics = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else { continue };
        match key.trim().to_ascii_lowercase().as_str() {
            "caption" => caption = Some(value.trim().to_string()),
            "correlations" | "correlation" | "tags" => {
                tags = Some(parse_tags(&serde_json::Value::String(value.to_string()))?)
            }
            "temporal dynamics" | "temporal_dynamics" => {
                dynamics = Some(parse_flag(Some(&serde_json::Value::String(value.to_string())))?)
            }
            _ => {}
        }
    }
    match (caption, tags) {
        (Some(c), _) if require_caption && c.is_empty() => Err("missing caption".into()),
        (None, _) if require_caption => Err("no JSON object or Caption line found".into()),
        (None, None) => Err("no JSON object or labelled lines found".into()),
        (c, t) => Ok(Integrated {
            caption: c.unwrap_or_default(),
            tags: t.unwrap_or_default(),
            has_temporal_dynamics: dynamics.unwrap_or(false),
        }),
    }
}

fn describe_visual(e: &ModalEvent) -> String {
    format!(
        "- [{} s, {} s) video: {}; keyframe: {}",
        fmt_s(e.interval.start()),
        fmt_s(e.interval.end()),
        e.caption.as_deref().unwrap_or("(missing)"),
        e.keyframe_caption.as_deref().unwrap_or("(missing)")
    )
}

fn describe_audio(e: &ModalEvent) -> String {
    format!(
        "- [{} s, {} s) sound: {}; speech: {}",
        fmt_s(e.interval.start()),
        fmt_s(e.interval.end()),
        e.caption.as_deref().unwrap_or("(missing)"),
        e.asr_text.as_deref().filter(|s| !s.is_empty()).unwrap_or("(none)")
    )
}

/// Builds the integration request for one omni event.
pub fn integration_request(
    video_id: &str,
    omni: &OmniEvent,
    visual: &[&ModalEvent],
    audio: &[&ModalEvent],
    prior_captions: &[String],
) -> ClientRequest {
    let prior = if prior_captions.is_empty() {
        "(none)".to_string()
    } else {
        prior_captions
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let missing: Vec<&str> = visual
        .iter()
        .filter(|e| e.caption.is_none())
        .chain(audio.iter().filter(|e| e.caption.is_none()))
        .map(|e| e.id.as_str())
        .collect();
    let or_none = |lines: Vec<String>| if lines.is_empty() { "(none)".to_string() } else { lines.join("\n") };
    let prompt = Prompt::Integrate.render(&vars([
        ("start", fmt_s(omni.interval.start())),
        ("end", fmt_s(omni.interval.end())),
        ("prior_captions", prior),
        ("visual_events", or_none(visual.iter().map(|e| describe_visual(e)).collect())),
        ("audio_events", or_none(audio.iter().map(|e| describe_audio(e)).collect())),
        ("missing", if missing.is_empty() { "none".into() } else { missing.join(", ") }),
        ("tag_list", tag_list()),
    ]));
    let summary = |events: &[&ModalEvent]| {
        events
            .iter()
            .filter_map(|e| e.caption.as_deref())
            .collect::<Vec<_>>()
            .join(" ")
    };
    ClientRequest::new(Role::IntegratorLlm, video_id)
        .span(omni.interval.start(), omni.interval.end())
        .prompt(prompt)
        .field("n_visual", visual.len())
        .field("n_audio", audio.len())
        .field("prior_count", prior_captions.len())
        .field("visual_summary", summary(visual))
        .field("audio_summary", summary(audio))
}

fn with_repair(
    client: &dyn ModelClient,
    retry: &RetryPolicy,
    request: &ClientRequest,
    repair: Prompt,
    require_caption: bool,
) -> Result<Integrated, CaptionError> {
    let role = client.role();
    let first = call_with_retry(client, request, retry).map_err(|source| CaptionError::Client { role, source })?;
    match parse_structured(&first.text, require_caption) {
        Ok(v) => Ok(v),
        Err(err) => {
            log::warn!("{role} reply for {} unparseable ({err}); sending repair prompt", request.video_id);
            let mut repaired = request.clone();
            repaired.prompt = Some(repair.render(&vars([
                ("error", err),
                ("previous", first.text.clone()),
                ("tag_list", tag_list()),
            ])));
            repaired.fields.insert("repair".into(), serde_json::Value::Bool(true));
            let second =
                call_with_retry(client, &repaired, retry).map_err(|source| CaptionError::Client { role, source })?;
            parse_structured(&second.text, require_caption).map_err(CaptionError::Unparseable)
        }
    }
}

/// Integrates the modality captions of `omni` into one omni-modal caption.
///
/// `prior_omni_captions` are the captions of earlier events of the same
/// video in temporal order; the last `cfg.prior_context` are sent.
pub fn integrate_omni_caption(
    record: &VideoRecord,
    omni: &OmniEvent,
    prior_omni_captions: &[String],
    clients: &ClientSet,
    cfg: &CaptionConfig,
) -> Result<Integrated, CaptionError> {
    let visual: Vec<&ModalEvent> = omni.visual_event_ids.iter().filter_map(|id| record.modal_event(id)).collect();
    let audio: Vec<&ModalEvent> = omni.audio_event_ids.iter().filter_map(|id| record.modal_event(id)).collect();
    let skip = prior_omni_captions.len().saturating_sub(cfg.prior_context);
    let req = integration_request(&record.video_id, omni, &visual, &audio, &prior_omni_captions[skip..]);
    let mut out = with_repair(clients.integrator.as_ref(), &clients.retry, &req, Prompt::IntegrateRepair, true)?;
    if let Some(filter) = &cfg.post_filter {
        out.caption = filter(&out.caption);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagReport {
    /// Events successfully classified.
    pub tagged: usize,
    pub skipped_empty: usize,
    pub failed: usize,
    pub counts: BTreeMap<CorrelationTag, usize>,
    /// `counts / tagged`.
    pub fractions: BTreeMap<CorrelationTag, f64>,
    pub temporal_dynamics_fraction: f64,
}

/// Classifies every captioned omni event with the judge and records the
/// resulting tags and dynamics flag on the event.
pub fn tag_correlations(manifest: &DatasetManifest, judge: &dyn ModelClient, retry: &RetryPolicy) -> (DatasetManifest, TagReport) {
    let mut out = manifest.clone();
    let mut report = TagReport::default();
    let mut dynamics = 0usize;
    for record in &mut out.records {
        let video_id = record.video_id.clone();
        for omni in &mut record.omni_events {
            let Some(caption) = omni.omni_caption.as_deref().map(str::trim).filter(|c| !c.is_empty()) else {
                log::warn!("{video_id}/{}: empty caption, skipped", omni.id);
                report.skipped_empty += 1;
                continue;
            };
            let prompt = Prompt::AvcClassify.render(&vars([("caption", caption.to_string()), ("tag_list", tag_list())]));
            let req = ClientRequest::new(Role::JudgeLlm, &video_id)
                .span(omni.interval.start(), omni.interval.end())
                .prompt(prompt)
                .field("caption", caption);
            match with_repair(judge, retry, &req, Prompt::IntegrateRepair, false) {
                Ok(result) => {
                    report.tagged += 1;
                    for t in &result.tags {
                        *report.counts.entry(*t).or_insert(0) += 1;
                    }
                    if result.has_temporal_dynamics {
                        dynamics += 1;
                    }
                    omni.correlation_tags = result.tags;
                    omni.has_temporal_dynamics = result.has_temporal_dynamics;
                }
                Err(e) => {
                    log::warn!("{video_id}/{}: correlation tagging failed: {e}", omni.id);
                    report.failed += 1;
                }
            }
        }
    }
    if report.tagged > 0 {
        report.fractions = report
            .counts
            .iter()
            .map(|(t, &n)| (*t, n as f64 / report.tagged as f64))
            .collect();
        report.temporal_dynamics_fraction = dynamics as f64 / report.tagged as f64;
    }
    (out, report)
}
