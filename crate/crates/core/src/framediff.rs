//! Frame content difference shared by scene splitting and the static-scene
//! gate: mean absolute difference of 64×36 box-downsampled luma frames.

use crate::manifest::TimeInterval;
use crate::mediaio::{FrameSequence, GrayFrame};

pub const THUMB_W: usize = 64;
pub const THUMB_H: usize = 36;

/// Box-filtered 64×36 luma thumbnail.
#[derive(Debug, Clone, PartialEq)]
pub struct Thumbnail(pub Vec<f32>);

impl Thumbnail {
    pub fn from_frame(frame: &GrayFrame) -> Self {
        let (w, h) = (frame.width.max(1), frame.height.max(1));
        let mut out = vec![0.0f32; THUMB_W * THUMB_H];
        for ty in 0..THUMB_H {
            let y0 = ty * h / THUMB_H;
            let y1 = ((ty + 1) * h / THUMB_H).max(y0 + 1).min(h);
            for tx in 0..THUMB_W {
                let x0 = tx * w / THUMB_W;
                let x1 = ((tx + 1) * w / THUMB_W).max(x0 + 1).min(w);
                let mut acc = 0.0f64;
                for y in y0..y1 {
                    let row = &frame.data[y * frame.width..(y + 1) * frame.width];
                    acc += row[x0..x1].iter().map(|&v| v as f64).sum::<f64>();
                }
                out[ty * THUMB_W + tx] = (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
        Thumbnail(out)
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().map(|&v| v as f64).sum::<f64>() / self.0.len() as f64
    }
}

/// Mean absolute pixel difference, in `[0, 1]`.
pub fn frame_difference(a: &Thumbnail, b: &Thumbnail) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / a.0.len() as f64
}

/// Thumbnails plus the differences between consecutive frames.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub fps: f64,
    pub timestamps: Vec<f64>,
    pub thumbs: Vec<Thumbnail>,
    /// `diffs[t]` compares frame `t` with frame `t + 1`.
    pub diffs: Vec<f64>,
}

impl FrameAnalysis {
    pub fn new(frames: &FrameSequence) -> Self {
        let thumbs: Vec<Thumbnail> = frames.frames().iter().map(Thumbnail::from_frame).collect();
        let diffs = thumbs.windows(2).map(|w| frame_difference(&w[0], &w[1])).collect();
        Self {
            fps: frames.fps(),
            timestamps: frames.timestamps().to_vec(),
            thumbs,
            diffs,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.thumbs.len() as f64 / self.fps
    }

    pub fn indices_in(&self, interval: &TimeInterval) -> std::ops::Range<usize> {
        let eps = 1e-6;
        let lo = self.timestamps.partition_point(|&t| t < interval.start() - eps);
        let hi = self.timestamps.partition_point(|&t| t < interval.end() - eps);
        lo..hi.max(lo)
    }

    /// Mean adjacent-frame difference inside `interval`; `None` when it
    /// holds fewer than two frames.
    pub fn mean_difference(&self, interval: &TimeInterval) -> Option<f64> {
        let r = self.indices_in(interval);
        if r.len() < 2 {
            return None;
        }
        let d = &self.diffs[r.start..r.end - 1];
        Some(d.iter().sum::<f64>() / d.len() as f64)
    }

    /// A span is static when its mean difference is below `threshold` or it
    /// holds fewer than two frames.
    pub fn is_static(&self, interval: &TimeInterval, threshold: f64) -> bool {
        self.mean_difference(interval).is_none_or(|d| d < threshold)
    }

    /// Difference across the cut at the start of frame `idx`
    /// (between frames `idx - 1` and `idx`), if both exist.
    pub fn diff_before(&self, idx: usize) -> Option<f64> {
        idx.checked_sub(1).and_then(|i| self.diffs.get(i).copied())
    }
}
