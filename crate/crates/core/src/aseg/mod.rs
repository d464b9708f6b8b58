//! Audio event boundaries from MFCC deltas, then semantic stitching.

pub mod mfcc;

use serde::{Deserialize, Serialize};

pub use mfcc::{compute_mfcc, MfccConfig, MfccError, MfccMatrix};

use crate::capgen::client::{embed_audio_clip, ClientError};
use crate::capgen::embed::{cosine, Embedder, EmbeddingError, EmbeddingSeries};
use crate::manifest::{quantize_ms, Modality, ModalEvent, TimeInterval};
use crate::mediaio::AudioTrack;

#[derive(Debug, thiserror::Error)]
pub enum AsegError {
    #[error(transparent)]
    Mfcc(#[from] MfccError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{intervals} intervals but {embeddings} embeddings")]
    EmbeddingCount { intervals: usize, embeddings: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("embedding failed: {0}")]
    Embed(#[from] ClientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ThresholdMode {
    /// `mean + k * std` over the score series (population std).
    Adaptive { k: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsegConfig {
    pub threshold: ThresholdMode,
    pub window_s: f64,
    pub min_event_s: f64,
    pub stitch_similarity: f64,
    pub pause_merge_max_gap_s: f64,
}

impl Default for AsegConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::Adaptive { k: 2.0 },
            window_s: 1.0,
            min_event_s: 1.0,
            stitch_similarity: 0.60,
            pause_merge_max_gap_s: 0.3,
        }
    }
}

impl AsegConfig {
    pub fn validate(&self) -> Result<(), AsegError> {
        if let ThresholdMode::Adaptive { k } = self.threshold {
            if !(k > 0.0) {
                return Err(AsegError::Config(format!("k must be positive, got {k}")));
            }
        }
        if !(self.window_s > 0.0) || self.min_event_s < 0.0 || self.pause_merge_max_gap_s < 0.0 {
            return Err(AsegError::Config("window_s must be positive, lengths non-negative".into()));
        }
        if !(-1.0..=1.0).contains(&self.stitch_similarity) {
            return Err(AsegError::Config(format!("stitch_similarity {} not in [-1, 1]", self.stitch_similarity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionScoreSeries {
    pub scores: Vec<f64>,
    pub window_s: f64,
}

impl TransitionScoreSeries {
    pub fn window_start(&self, i: usize) -> f64 {
        i as f64 * self.window_s
    }
}

/// Window score: mean `|c_{t+1} - c_t|` over coefficients and over the
/// deltas placed in the window. Delta `t` is placed at the end of frame
/// `t + 1`, the first instant its value is determined, so a change at `τ`
/// affects only deltas in `(τ, τ + hop + frame]`. Empty windows score 0.
pub fn transition_scores(mfcc: &MfccMatrix, window_s: f64) -> TransitionScoreSeries {
    let n_windows = ((mfcc.duration_s / window_s) - 1e-9).ceil().max(1.0) as usize;
    let mut sums = vec![0.0f64; n_windows];
    let mut counts = vec![0usize; n_windows];
    for (t, w) in mfcc.coefficients.windows(2).enumerate() {
        let time = mfcc.frame_end(t + 1);
        let idx = ((time / window_s).floor() as usize).min(n_windows - 1);
        let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).sum::<f64>() / w[0].len().max(1) as f64;
        sums[idx] += d;
        counts[idx] += 1;
    }
    TransitionScoreSeries {
        scores: sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect(),
        window_s,
    }
}

pub fn threshold(scores: &[f64], mode: ThresholdMode) -> f64 {
    match mode {
        ThresholdMode::Fixed { value } => value,
        ThresholdMode::Adaptive { k } => {
            if scores.is_empty() {
                return f64::INFINITY;
            }
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            mean + k * var.sqrt()
        }
    }
}

/// Boundaries at windows scoring above the threshold; a run of consecutive
/// above-threshold windows yields one boundary, at the start of its highest
/// window. Pieces shorter than `min_event_s` are merged into the following
/// piece, so only the last may be short.
pub fn split_audio(scores: &TransitionScoreSeries, cfg: &AsegConfig, duration_s: f64) -> Vec<TimeInterval> {
    let duration = quantize_ms(duration_s);
    let theta = threshold(&scores.scores, cfg.threshold);
    let mut cuts = Vec::new();
    let mut i = 0;
    let s = &scores.scores;
    while i < s.len() {
        if s[i] > theta {
            let mut peak = i;
            while i < s.len() && s[i] > theta {
                if s[i] > s[peak] {
                    peak = i;
                }
                i += 1;
            }
            let t = quantize_ms(scores.window_start(peak));
            if t > 0.0 && t < duration {
                cuts.push(t);
            }
        } else {
            i += 1;
        }
    }
    cuts.push(duration);

    let mut out = Vec::new();
    let mut start = 0.0;
    for &c in &cuts {
        if c - start >= cfg.min_event_s - 1e-9 || c == duration {
            out.push(TimeInterval::new(start, c).expect("ordered cuts"));
            start = c;
        }
    }
    out
}

/// Merges runs of adjacent intervals. Boundary `i | i+1` is removed when
/// `cos(e_i, e_{i+1}) >= stitch_similarity`; both boundaries around a short
/// middle piece `i+1` (length at most `pause_merge_max_gap_s`) are removed
/// when `cos(e_i, e_{i+2}) >= stitch_similarity`. Decisions use the
/// embeddings of the input intervals, so raising the similarity threshold
/// never reduces the event count.
pub fn stitch_audio(
    intervals: &[TimeInterval],
    embeddings: &EmbeddingSeries,
    cfg: &AsegConfig,
) -> Result<Vec<ModalEvent>, AsegError> {
    if intervals.len() != embeddings.len() {
        return Err(AsegError::EmbeddingCount {
            intervals: intervals.len(),
            embeddings: embeddings.len(),
        });
    }
    let e = embeddings.vectors();
    let n = intervals.len();
    let mut joined = vec![false; n.saturating_sub(1)];
    for i in 0..n.saturating_sub(1) {
        if cosine(&e[i], &e[i + 1]) >= cfg.stitch_similarity {
            joined[i] = true;
        }
        if i + 2 < n
            && intervals[i + 1].duration() <= cfg.pause_merge_max_gap_s + 1e-9
            && cosine(&e[i], &e[i + 2]) >= cfg.stitch_similarity
        {
            joined[i] = true;
            joined[i + 1] = true;
        }
    }
    let mut out: Vec<ModalEvent> = Vec::new();
    let mut start = 0usize;
    for i in 0..n {
        if i + 1 == n || !joined[i] {
            let iv = intervals[start].hull(&intervals[i]);
            out.push(ModalEvent::new(format!("a{}", out.len()), Modality::Audio, iv));
            start = i + 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegmentation {
    pub scores: TransitionScoreSeries,
    pub split: Vec<TimeInterval>,
    pub events: Vec<ModalEvent>,
}

/// Full audio pass for one track.
pub fn segment_audio(
    video_id: &str,
    track: &AudioTrack,
    embedder: &dyn Embedder,
    mfcc_cfg: &MfccConfig,
    cfg: &AsegConfig,
) -> Result<AudioSegmentation, AsegError> {
    cfg.validate()?;
    let m = compute_mfcc(track, mfcc_cfg)?;
    let scores = transition_scores(&m, cfg.window_s);
    let split = split_audio(&scores, cfg, track.duration_s());
    let vectors = split
        .iter()
        .map(|iv| {
            let clip = track.slice(iv.start(), iv.end());
            embed_audio_clip(embedder, video_id, *iv, clip, track.sample_rate())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let series = EmbeddingSeries::new(vectors, cfg.window_s)?;
    let events = stitch_audio(&split, &series, cfg)?;
    Ok(AudioSegmentation { scores, split, events })
}

#[cfg(test)]
mod tests {
    use super::mfcc::tests::sine;
    use super::*;
    use crate::capgen::embed::StubEmbedder;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn series(scores: Vec<f64>) -> TransitionScoreSeries {
        TransitionScoreSeries { scores, window_s: 1.0 }
    }

    #[test]
    fn constant_mfcc_scores_zero() {
        let m = MfccMatrix {
            coefficients: vec![vec![1.0, 2.0]; 300],
            hop_s: 0.01,
            frame_s: 0.025,
            duration_s: 3.015,
        };
        let s = transition_scores(&m, 1.0);
        assert_eq!(s.scores.len(), 4);
        assert!(s.scores.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_is_local() {
        // 300 frames; coefficient 0 steps between frames 149 and 150
        let coefficients = (0..300).map(|t| vec![if t < 150 { 0.0 } else { 1.0 }, 0.0]).collect();
        let m = MfccMatrix { coefficients, hop_s: 0.01, frame_s: 0.025, duration_s: 3.015 };
        let s = transition_scores(&m, 1.0);
        let nonzero: Vec<usize> = (0..s.scores.len()).filter(|&i| s.scores[i] > 0.0).collect();
        assert_eq!(nonzero, vec![1]);
    }

    #[test]
    fn flat_scores_single_interval() {
        assert_eq!(split_audio(&series(vec![0.0; 10]), &AsegConfig::default(), 10.0), vec![iv(0.0, 10.0)]);
    }

    #[test]
    fn one_spike_splits_at_window_start() {
        let mut s = vec![0.1; 10];
        s[4] = 5.0;
        assert_eq!(split_audio(&series(s), &AsegConfig::default(), 10.0), vec![iv(0.0, 4.0), iv(4.0, 10.0)]);
    }

    #[test]
    fn adjacent_spikes_collapse_to_peak() {
        let mut s = vec![0.0; 20];
        s[4] = 3.0;
        s[5] = 4.0;
        assert_eq!(split_audio(&series(s), &AsegConfig::default(), 20.0), vec![iv(0.0, 5.0), iv(5.0, 20.0)]);
    }

    #[test]
    fn short_piece_merges_forward() {
        let cfg = AsegConfig { threshold: ThresholdMode::Fixed { value: 1.0 }, min_event_s: 2.0, ..Default::default() };
        let mut s = vec![0.0; 10];
        s[3] = 5.0;
        s[5] = 5.0;
        s[9] = 5.0;
        // cuts at 3, 5, 9 -> [0,3) [3,5) [5,9) and a short tail [9,10)
        assert_eq!(split_audio(&series(s.clone()), &cfg, 10.0), vec![iv(0.0, 3.0), iv(3.0, 5.0), iv(5.0, 9.0), iv(9.0, 10.0)]);
        s[4] = 0.0;
        s[1] = 5.0;
        // cut at 1 is too early: [0,3) absorbs it
        assert_eq!(split_audio(&series(s), &cfg, 10.0)[0], iv(0.0, 3.0));
    }

    fn e2(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    #[test]
    fn stitching_cases() {
        let cfg = AsegConfig::default();
        let ivs = [iv(0.0, 2.0), iv(2.0, 5.0), iv(5.0, 9.0)];
        let same = EmbeddingSeries::new(vec![e2(0.0); 3], 1.0).unwrap();
        assert_eq!(stitch_audio(&ivs, &same, &cfg).unwrap().len(), 1);
        let ortho = EmbeddingSeries::new(vec![e2(0.0), e2(1.5707963267948966), e2(0.0)], 1.0).unwrap();
        let out = stitch_audio(&ivs, &ortho, &cfg).unwrap();
        assert_eq!(out.iter().map(|e| e.interval).collect::<Vec<_>>(), ivs.to_vec());
        assert!(stitch_audio(&ivs[..2], &same, &cfg).is_err());
    }

    #[test]
    fn pause_between_words_merges() {
        let cfg = AsegConfig::default();
        let ivs = [iv(0.0, 3.0), iv(3.0, 3.2), iv(3.2, 6.0)];
        // speech, silence axis, speech
        let emb = EmbeddingSeries::new(vec![e2(0.1), e2(1.5707963267948966), e2(0.0)], 1.0).unwrap();
        let out = stitch_audio(&ivs, &emb, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].interval, iv(0.0, 6.0));
    }

    pub(crate) fn three_tones() -> AudioTrack {
        let mut x = sine(440.0, 5.0, 16_000);
        x.extend(sine(880.0, 5.0, 16_000));
        x.extend(sine(220.0, 5.0, 16_000));
        AudioTrack::new(16_000, x).unwrap()
    }

    #[test]
    fn three_tones_three_events() {
        let track = three_tones();
        let cfg = AsegConfig::default();
        let seg = segment_audio("t", &track, &StubEmbedder::default(), &MfccConfig::default(), &cfg).unwrap();
        eprintln!("scores {:?}", seg.scores.scores);
        assert_eq!(seg.events.len(), 3, "{:?}", seg.events);
        assert!((seg.events[0].interval.end() - 5.0).abs() <= cfg.window_s);
        assert!((seg.events[1].interval.end() - 10.0).abs() <= cfg.window_s);
    }

    #[test]
    fn sine_to_noise_peaks_at_five() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut x = sine(440.0, 5.0, 16_000);
        x.extend((0..5 * 16_000).map(|_| rng.gen_range(-0.3..0.3)));
        let track = AudioTrack::new(16_000, x).unwrap();
        let s = transition_scores(&compute_mfcc(&track, &MfccConfig::default()).unwrap(), 1.0);
        let argmax = (0..s.scores.len()).max_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b])).unwrap();
        eprintln!("sine->noise scores {:?}", s.scores);
        assert!(argmax == 4 || argmax == 5, "argmax {argmax}");
    }

    proptest! {
        #[test]
        fn split_is_contiguous_and_long_enough(scores in prop::collection::vec(0.0f64..1.0, 1..40), k in 0.5f64..3.0, min in 0.0f64..4.0) {
            let cfg = AsegConfig { threshold: ThresholdMode::Adaptive { k }, min_event_s: min, ..Default::default() };
            let d = scores.len() as f64;
            let out = split_audio(&series(scores), &cfg, d);
            prop_assert_eq!(out[0].start(), 0.0);
            prop_assert_eq!(out.last().unwrap().end(), d);
            for w in out.windows(2) {
                prop_assert_eq!(w[0].end(), w[1].start());
            }
            for s in &out[..out.len() - 1] {
                prop_assert!(s.duration() >= min - 1e-9);
            }
        }

        #[test]
        fn raising_similarity_never_reduces_events(
            angles in prop::collection::vec(0.0f64..3.0, 1..15),
            lens in prop::collection::vec(prop::sample::select(vec![0.2, 0.3, 1.0, 2.5]), 15),
            t1 in -1.0f64..1.0,
            dt in 0.0f64..1.0,
        ) {
            let mut t = 0.0;
            let ivs: Vec<TimeInterval> = angles.iter().zip(&lens).map(|(_, &l)| { let s = iv(t, t + l); t += l; s }).collect();
            let emb = EmbeddingSeries::new(angles.iter().map(|&a| e2(a)).collect(), 1.0).unwrap();
            let lo = AsegConfig { stitch_similarity: t1, ..Default::default() };
            let hi = AsegConfig { stitch_similarity: (t1 + dt).min(1.0), ..Default::default() };
            let a = stitch_audio(&ivs, &emb, &lo).unwrap().len();
            let b = stitch_audio(&ivs, &emb, &hi).unwrap().len();
            prop_assert!(b >= a);
        }
    }
}
