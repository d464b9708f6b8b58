//! Visual event boundaries: scene splitting on frame differences, semantic
//! stitching of adjacent scenes, then removal of static and transition clips.

use serde::{Deserialize, Serialize};

use crate::capgen::client::{embed_frames, ClientError};
use crate::capgen::embed::{cosine, normalize, Embedder};
use crate::framediff::FrameAnalysis;
use crate::manifest::{quantize_ms, Modality, ModalEvent, TimeInterval};

#[derive(Debug, thiserror::Error)]
pub enum VsegError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{scenes} scenes but {embeddings} embeddings")]
    EmbeddingCount { scenes: usize, embeddings: usize },
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("embedding failed: {0}")]
    Embed(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsegConfig {
    pub cut_threshold: f64,
    pub min_event_s: f64,
    pub max_event_s: f64,
    pub stitch_similarity: f64,
    pub transition_max_s: f64,
    /// Same meaning as the static-scene gate threshold.
    pub static_threshold: f64,
}

impl Default for VsegConfig {
    fn default() -> Self {
        Self {
            cut_threshold: 0.10,
            min_event_s: 2.0,
            max_event_s: 600.0,
            stitch_similarity: 0.85,
            transition_max_s: 0.5,
            static_threshold: 0.01,
        }
    }
}

impl VsegConfig {
    pub fn validate(&self) -> Result<(), VsegError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(VsegError::Config(format!("{name} = {v} not in (0, 1]")))
            }
        };
        unit("cut_threshold", self.cut_threshold)?;
        unit("stitch_similarity", self.stitch_similarity)?;
        unit("static_threshold", self.static_threshold)?;
        if !(self.min_event_s > 0.0 && self.min_event_s < self.max_event_s) {
            return Err(VsegError::Config(format!(
                "need 0 < min_event_s ({}) < max_event_s ({})",
                self.min_event_s, self.max_event_s
            )));
        }
        if self.transition_max_s < 0.0 {
            return Err(VsegError::Config("transition_max_s must be non-negative".into()));
        }
        Ok(())
    }
}

struct Piece {
    start: f64,
    end: f64,
    /// Similarity `1 - diff` across this piece's left boundary.
    left_sim: f64,
}

/// Splits at frame differences above `cut_threshold`, merges pieces shorter
/// than `min_event_s` into the neighbour across the more similar boundary
/// (ties left, shortest piece first), then cuts pieces longer than
/// `max_event_s` into equal parts. The result partitions `[0, duration)`.
pub fn split_scenes(analysis: &FrameAnalysis, cfg: &VsegConfig) -> Result<Vec<TimeInterval>, VsegError> {
    let n = analysis.thumbs.len();
    if n < 2 {
        return Err(VsegError::TooFewFrames(n));
    }
    let duration = quantize_ms(analysis.duration_s());
    let mut pieces = vec![Piece { start: 0.0, end: duration, left_sim: 0.0 }];
    for (t, &d) in analysis.diffs.iter().enumerate() {
        if d > cfg.cut_threshold {
            let cut = quantize_ms(analysis.timestamps[t + 1]);
            let last = pieces.last_mut().expect("non-empty");
            if cut > last.start && cut < last.end {
                last.end = cut;
                pieces.push(Piece { start: cut, end: duration, left_sim: 1.0 - d });
            }
        }
    }

    loop {
        if pieces.len() < 2 {
            break;
        }
        let shortest = (0..pieces.len())
            .filter(|&i| pieces[i].end - pieces[i].start < cfg.min_event_s - 1e-9)
            .min_by(|&a, &b| {
                let (da, db) = (pieces[a].end - pieces[a].start, pieces[b].end - pieces[b].start);
                da.total_cmp(&db).then(a.cmp(&b))
            });
        let Some(i) = shortest else { break };
        let left = (i > 0).then(|| pieces[i].left_sim);
        let right = pieces.get(i + 1).map(|p| p.left_sim);
        let into_left = match (left, right) {
            (Some(l), Some(r)) => l >= r,
            (Some(_), None) => true,
            _ => false,
        };
        if into_left {
            let p = pieces.remove(i);
            pieces[i - 1].end = p.end;
        } else {
            let p = pieces.remove(i + 1);
            pieces[i].end = p.end;
        }
    }

    let mut out = Vec::with_capacity(pieces.len());
    for p in &pieces {
        let len = p.end - p.start;
        let k = ((len / cfg.max_event_s) - 1e-9).ceil().max(1.0) as usize;
        let mut bounds: Vec<f64> = (0..k).map(|j| quantize_ms(p.start + len * j as f64 / k as f64)).collect();
        bounds.push(p.end);
        for w in bounds.windows(2) {
            out.push(TimeInterval::new(w[0], w[1]).expect("ordered bounds"));
        }
    }
    Ok(out)
}

/// Embeddings of a scene's first and last frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEmbedding {
    pub first: Vec<f64>,
    pub last: Vec<f64>,
}

impl SceneEmbedding {
    pub fn uniform(v: Vec<f64>) -> Self {
        Self { first: v.clone(), last: v }
    }

    fn representative(&self) -> Vec<f64> {
        let sum: Vec<f64> = self.first.iter().zip(&self.last).map(|(a, b)| a + b).collect();
        normalize(&sum).unwrap_or(sum)
    }
}

/// Greedy left-to-right merging of adjacent scenes whose representative
/// embeddings (normalized mean of first and last frame) have cosine at least
/// `stitch_similarity`, as long as the union stays within `max_event_s`.
/// Repeats until no merge happens.
pub fn stitch_scenes(
    scenes: &[TimeInterval],
    embeddings: &[SceneEmbedding],
    cfg: &VsegConfig,
) -> Result<Vec<TimeInterval>, VsegError> {
    if scenes.len() != embeddings.len() {
        return Err(VsegError::EmbeddingCount {
            scenes: scenes.len(),
            embeddings: embeddings.len(),
        });
    }
    let mut cur: Vec<(TimeInterval, SceneEmbedding)> = scenes.iter().copied().zip(embeddings.iter().cloned()).collect();
    loop {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < cur.len() {
            let (a, b) = (&cur[i], &cur[i + 1]);
            let merged = a.0.hull(&b.0);
            if cosine(&a.1.representative(), &b.1.representative()) >= cfg.stitch_similarity
                && merged.duration() <= cfg.max_event_s + 1e-9
            {
                let emb = SceneEmbedding {
                    first: a.1.first.clone(),
                    last: b.1.last.clone(),
                };
                cur[i] = (merged, emb);
                cur.remove(i + 1);
                changed = true;
            } else {
                i += 1;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(cur.into_iter().map(|(iv, _)| iv).collect())
}

fn boundary_is_sharp(analysis: &FrameAnalysis, idx: usize, cfg: &VsegConfig) -> bool {
    analysis.diff_before(idx).is_some_and(|d| d > cfg.cut_threshold)
}

/// Why an interval was dropped during post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dropped {
    Transition,
    Static,
}

pub fn classify(analysis: &FrameAnalysis, interval: &TimeInterval, cfg: &VsegConfig) -> Option<Dropped> {
    let r = analysis.indices_in(interval);
    if interval.duration() < cfg.transition_max_s
        && boundary_is_sharp(analysis, r.start, cfg)
        && boundary_is_sharp(analysis, r.end, cfg)
    {
        return Some(Dropped::Transition);
    }
    analysis.is_static(interval, cfg.static_threshold).then_some(Dropped::Static)
}

/// Drops transition flashes and static intervals; the rest become visual
/// events `v0, v1, ...`.
pub fn postprocess_visual(events: &[TimeInterval], analysis: &FrameAnalysis, cfg: &VsegConfig) -> Vec<ModalEvent> {
    events
        .iter()
        .filter(|iv| classify(analysis, iv, cfg).is_none())
        .enumerate()
        .map(|(k, iv)| ModalEvent::new(format!("v{k}"), Modality::Visual, *iv))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualSegmentation {
    pub split: Vec<TimeInterval>,
    pub stitched: Vec<TimeInterval>,
    pub events: Vec<ModalEvent>,
}

/// Full visual pass for one video, embedding scene edge frames with `embedder`.
pub fn segment_visual(
    video_id: &str,
    analysis: &FrameAnalysis,
    embedder: &dyn Embedder,
    cfg: &VsegConfig,
) -> Result<VisualSegmentation, VsegError> {
    cfg.validate()?;
    let split = split_scenes(analysis, cfg)?;
    let mut embeddings = Vec::with_capacity(split.len());
    for scene in &split {
        let r = analysis.indices_in(scene);
        if r.is_empty() {
            return Err(VsegError::EmbeddingCount { scenes: split.len(), embeddings: embeddings.len() });
        }
        let (fa, fb) = (r.start, r.end - 1);
        let at = |i: usize| {
            let t = analysis.timestamps[i];
            TimeInterval::new(t, t + 1.0 / analysis.fps).expect("frame span")
        };
        let first = embed_frames(embedder, video_id, at(fa), &analysis.thumbs[fa..=fa])?;
        let last = embed_frames(embedder, video_id, at(fb), &analysis.thumbs[fb..=fb])?;
        embeddings.push(SceneEmbedding { first, last });
    }
    let stitched = stitch_scenes(&split, &embeddings, cfg)?;
    let events = postprocess_visual(&stitched, analysis, cfg);
    Ok(VisualSegmentation { split, stitched, events })
}
