//! Synthetic asset corpus for tests, demos and the end-to-end check.
//!
//! A video is a sequence of scenes (flat grey level plus a drifting
//! horizontal grating) and an independent sequence of audio segments. Tone
//! frequencies are chosen with [`frequency_for_luma`] so that the offline
//! embedder places a scene and its matching tone at the same code.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::manifest::TimeInterval;
use crate::mediaio::{
    write_frame_png, write_transcript, write_wav, AudioTrack, GrayFrame, MediaError, Transcript, TranscriptSegment,
    VideoAssets, VideoMeta,
};

pub const FRAME_W: usize = 64;
pub const FRAME_H: usize = 36;
/// Grating amplitude; adjacent frames differ by about 0.03, between the
/// static and cut thresholds.
pub const GRATING_AMPLITUDE: f32 = 0.05;
const GRATING_PERIOD_PX: f32 = 16.0;
const GRATING_STEP_RAD: f32 = 1.0;
pub const TONE_AMPLITUDE: f64 = 0.5;
pub const NOISE_AMPLITUDE: f64 = 0.15;

/// Tone whose stub-embedder audio code equals `luma`.
pub fn frequency_for_luma(luma: f64) -> f64 {
    100.0 * 80f64.powf(luma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub duration_s: f64,
    pub luma: f32,
    /// Frozen frames when false.
    pub motion: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AudioKind {
    Tone(f64),
    Noise,
    Silence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegmentSpec {
    pub duration_s: f64,
    pub kind: AudioKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub sample_rate: u32,
    pub scenes: Vec<SceneSpec>,
    pub audio: Vec<AudioSegmentSpec>,
    /// `None` writes no transcript file.
    pub transcript_language: Option<String>,
    pub transcript: Vec<(f64, f64, String)>,
}

fn cumulative(durations: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut t = 0.0;
    durations
        .map(|d| {
            t += d;
            t
        })
        .collect()
}

fn seed_for(video_id: &str) -> u64 {
    let d = Sha256::digest(video_id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

impl SynthVideo {
    pub fn duration_s(&self) -> f64 {
        self.scenes.iter().map(|s| s.duration_s).sum()
    }

    /// Scene end times.
    pub fn scene_boundaries(&self) -> Vec<f64> {
        cumulative(self.scenes.iter().map(|s| s.duration_s))
    }

    /// Audio segment end times.
    pub fn audio_boundaries(&self) -> Vec<f64> {
        cumulative(self.audio.iter().map(|s| s.duration_s))
    }

    pub fn render_frames(&self) -> Vec<GrayFrame> {
        let n = (self.duration_s() * self.fps).round() as usize;
        let ends = self.scene_boundaries();
        (0..n)
            .map(|i| {
                let t = i as f64 / self.fps;
                let k = ends.iter().position(|&e| t < e - 1e-9).unwrap_or(self.scenes.len() - 1);
                let scene = &self.scenes[k];
                let phase = if scene.motion { i as f32 * GRATING_STEP_RAD } else { 0.0 };
                let amp = if scene.motion { GRATING_AMPLITUDE } else { 0.0 };
                let mut data = Vec::with_capacity(FRAME_W * FRAME_H);
                for _y in 0..FRAME_H {
                    for x in 0..FRAME_W {
                        let g = (2.0 * std::f32::consts::PI * x as f32 / GRATING_PERIOD_PX + phase).sin();
                        data.push((scene.luma + amp * g).clamp(0.0, 1.0));
                    }
                }
                GrayFrame { width: FRAME_W, height: FRAME_H, data }
            })
            .collect()
    }

    pub fn render_audio(&self) -> Vec<f64> {
        let sr = self.sample_rate as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&self.video_id));
        let total = (self.duration_s() * sr).round() as usize;
        let mut out = Vec::with_capacity(total);
        let mut start = 0.0;
        for seg in &self.audio {
            let end = start + seg.duration_s;
            let (a, b) = ((start * sr).round() as usize, (end * sr).round() as usize);
            for i in a..b {
                out.push(match seg.kind {
                    AudioKind::Tone(f) => TONE_AMPLITUDE * (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin(),
                    AudioKind::Noise => rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE),
                    AudioKind::Silence => 0.0,
                });
            }
            start = end;
        }
        out.resize(total, 0.0);
        out
    }

    pub fn meta(&self) -> VideoMeta {
        VideoMeta {
            video_id: self.video_id.clone(),
            duration_s: self.duration_s(),
            width: self.width,
            height: self.height,
            has_transcript: self.transcript_language.is_some(),
            fps: Some(self.fps),
        }
    }

    /// Writes `root/<video_id>/{meta.json, audio.wav, frames/, transcript.tsv}`.
    pub fn write(&self, root: &Path) -> Result<VideoAssets, MediaError> {
        let assets = VideoAssets::new(root.join(&self.video_id));
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e: std::io::Error| MediaError::Io { path: p, source: e }
        };
        let frames_dir = assets.frames_dir();
        fs::create_dir_all(&frames_dir).map_err(io(&frames_dir))?;
        for (i, f) in self.render_frames().iter().enumerate() {
            write_frame_png(frames_dir.join(format!("{i:06}.png")), f)?;
        }
        write_wav(assets.audio_path(), &AudioTrack::new(self.sample_rate, self.render_audio())?)?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        fs::write(assets.meta_path(), meta).map_err(io(&assets.meta_path()))?;
        if let Some(lang) = &self.transcript_language {
            let segments = self
                .transcript
                .iter()
                .filter_map(|(a, b, text)| {
                    TimeInterval::new(*a, *b).ok().map(|interval| TranscriptSegment { interval, text: text.clone() })
                })
                .collect();
            write_transcript(assets.transcript_path(), &Transcript::new(lang.clone(), segments)?)?;
        }
        Ok(assets)
    }
}

/// Ways a fixture video is built to fail one gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    LowResolution,
    ForeignLanguage,
    NoTranscript,
    SpeechDominant,
    Static,
    AvMismatch,
}

impl Defect {
    pub const ALL: [Defect; 6] = [
        Defect::LowResolution,
        Defect::ForeignLanguage,
        Defect::NoTranscript,
        Defect::SpeechDominant,
        Defect::Static,
        Defect::AvMismatch,
    ];

    pub fn expected_reason(&self) -> &'static str {
        match self {
            Defect::LowResolution => "resolution",
            Defect::ForeignLanguage => "language",
            Defect::NoTranscript => "no-transcript",
            Defect::SpeechDominant => "speech-dominance",
            Defect::Static => "static",
            Defect::AvMismatch => "av-consistency",
        }
    }
}

const LUMAS: [f32; 5] = [0.2, 0.35, 0.5, 0.65, 0.8];
const WORDS: [&str; 12] = [
    "welcome", "today", "we", "will", "look", "at", "the", "stage", "and", "music", "together", "now",
];

/// A well-formed video: 2 to 4 scenes of 4 to 9 s, one matching tone per
/// scene with boundaries shifted by up to 2 s, and spoken lines covering
/// part of the timeline.
pub fn good_video(video_id: &str, rng: &mut ChaCha8Rng) -> SynthVideo {
    let n = rng.gen_range(2..=4);
    let mut scenes = Vec::with_capacity(n);
    let mut prev = usize::MAX;
    for _ in 0..n {
        let mut k = rng.gen_range(0..LUMAS.len());
        while k == prev || (prev != usize::MAX && k.abs_diff(prev) < 2) {
            k = rng.gen_range(0..LUMAS.len());
        }
        prev = k;
        scenes.push(SceneSpec { duration_s: rng.gen_range(4..=9) as f64, luma: LUMAS[k], motion: true });
    }
    let duration: f64 = scenes.iter().map(|s| s.duration_s).sum();

    let mut cuts: Vec<f64> = cumulative(scenes.iter().map(|s| s.duration_s));
    cuts.pop();
    let mut prev_cut = 0.0;
    let mut audio = Vec::with_capacity(n);
    for (k, scene) in scenes.iter().enumerate() {
        let end = if k + 1 == n {
            duration
        } else {
            let shift = [0.0, 0.0, 1.0, 2.0, -1.0][rng.gen_range(0..5)];
            (cuts[k] + shift).clamp(prev_cut + 2.0, duration - 2.0)
        };
        audio.push(AudioSegmentSpec {
            duration_s: end - prev_cut,
            kind: AudioKind::Tone(frequency_for_luma(scene.luma as f64)),
        });
        prev_cut = end;
    }

    let mut transcript = Vec::new();
    let mut t = rng.gen_range(0..2) as f64;
    while t + 2.0 < duration {
        let len = rng.gen_range(1..=3) as f64;
        let words: Vec<&str> = (0..rng.gen_range(2..6)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        transcript.push((t, (t + len).min(duration), words.join(" ")));
        t += len + rng.gen_range(2..5) as f64;
    }
    SynthVideo {
        video_id: video_id.to_string(),
        width: 640,
        height: 360,
        fps: 2.0,
        sample_rate: 16_000,
        scenes,
        audio,
        transcript_language: Some("en".into()),
        transcript,
    }
}

pub fn apply_defect(mut v: SynthVideo, defect: Defect) -> SynthVideo {
    match defect {
        Defect::LowResolution => {
            v.width = 426;
            v.height = 240;
        }
        Defect::ForeignLanguage => v.transcript_language = Some("fr".into()),
        Defect::NoTranscript => {
            v.transcript_language = None;
            v.transcript.clear();
        }
        Defect::SpeechDominant => {
            let d = v.duration_s();
            v.transcript = vec![(0.0, d, "we keep talking the whole time".into())];
        }
        Defect::Static => {
            for s in &mut v.scenes {
                s.motion = false;
            }
        }
        Defect::AvMismatch => {
            for s in &mut v.scenes {
                s.luma = 0.15;
            }
            for a in &mut v.audio {
                a.kind = AudioKind::Tone(frequency_for_luma(0.9));
            }
        }
    }
    v
}

/// `n` videos `syn000, syn001, ...`; every fifth carries a defect, cycling
/// through [`Defect::ALL`].
pub fn fixture_corpus(seed: u64, n: usize) -> Vec<(SynthVideo, Option<Defect>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v = good_video(&format!("syn{i:03}"), &mut rng);
            if i % 5 == 4 {
                let d = Defect::ALL[(i / 5) % Defect::ALL.len()];
                (apply_defect(v, d), Some(d))
            } else {
                (v, None)
            }
        })
        .collect()
}

pub fn write_corpus(root: &Path, videos: &[(SynthVideo, Option<Defect>)]) -> Result<Vec<VideoAssets>, MediaError> {
    videos.iter().map(|(v, _)| v.write(root)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::embed::StubEmbedder;
    use crate::framediff::FrameAnalysis;
    use crate::mediaio::FrameSequence;

    #[test]
    fn tone_code_matches_luma() {
        for l in LUMAS {
            let f = frequency_for_luma(l as f64);
            let x: Vec<f64> = (0..16_000).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin()).collect();
            let code = StubEmbedder::audio_code(&x, 16_000).unwrap();
            assert!((code - l as f64).abs() < 0.02, "{l}: {code}");
        }
    }

    #[test]
    fn grating_sits_between_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = good_video("g", &mut rng);
        let frames = v.render_frames();
        assert_eq!(frames.len() as f64, v.duration_s() * 2.0);
        let a = FrameAnalysis::new(&FrameSequence::new(2.0, frames).unwrap());
        let first_cut = (v.scene_boundaries()[0] * 2.0) as usize - 1;
        for (t, d) in a.diffs.iter().enumerate() {
            if t == first_cut {
                assert!(*d > 0.10, "cut diff {d}");
            } else if t < first_cut {
                assert!(*d > 0.01 && *d < 0.10, "frame {t}: {d}");
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_consistent() {
        let a = fixture_corpus(7, 10);
        assert_eq!(a, fixture_corpus(7, 10));
        for (v, _) in &a {
            let ends = v.audio_boundaries();
            assert!((ends.last().unwrap() - v.duration_s()).abs() < 1e-9);
            assert_eq!(v.render_audio().len(), (v.duration_s() * 16_000.0).round() as usize);
        }
        assert_eq!(a.iter().filter(|(_, d)| d.is_some()).count(), 2);
    }
}
