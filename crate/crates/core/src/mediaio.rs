//! Decoded-media ingestion: PCM audio, pre-extracted frame images, timed
//! transcripts and per-video metadata.
//!
//! The toolkit never demuxes or decodes containers. An external decoder is
//! expected to produce, per video directory:
//!
//! ```text
//! ffmpeg -i input.mp4 -vn -ac 1 -ar 16000 -c:a pcm_s16le audio.wav
//! ffmpeg -i input.mp4 -vf fps=2,format=gray -start_number 0 frames/%06d.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::manifest::{ManifestError, TimeInterval};

pub const DEFAULT_ANALYSIS_RATE: u32 = 16_000;
pub const MIN_SAMPLE_RATE: u32 = 8_000;

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{0} contains no samples")]
    EmptyAudio(PathBuf),
    #[error("sample rate {0} Hz below the supported minimum")]
    SampleRate(u32),
    #[error("missing frame index {0}")]
    MissingFrame(usize),
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameDimensions {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("image decode failed for {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("transcript {path} line {line}: {detail}")]
    Transcript { path: PathBuf, line: usize, detail: String },
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Interval(#[from] ManifestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MediaError + '_ {
    move |source| MediaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mono PCM audio, samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl AudioTrack {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self, MediaError> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(MediaError::SampleRate(sample_rate));
        }
        Ok(Self { sample_rate, samples })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples covering `[start_s, end_s)`, clamped to the track.
    pub fn slice(&self, start_s: f64, end_s: f64) -> &[f64] {
        let sr = self.sample_rate as f64;
        let a = ((start_s * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = ((end_s * sr).round().max(0.0) as usize).clamp(a, self.samples.len());
        &self.samples[a..b]
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<AudioTrack, MediaError> {
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        Ok(AudioTrack::new(
            target_rate,
            resample_linear(&self.samples, self.sample_rate, target_rate),
        )?)
    }
}

/// Resamples by linear interpolation; output length is
/// `round(len * to / from)`.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n_out = ((samples.len() as u64 * to as u64 + from as u64 / 2) / from as u64) as usize;
    let step = from as f64 / to as f64;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let k = pos.floor() as usize;
            if k >= last {
                samples[last]
            } else {
                let frac = pos - k as f64;
                samples[k] * (1.0 - frac) + samples[k + 1] * frac
            }
        })
        .collect()
}

/// Loads a PCM WAV file, downmixes to mono by channel averaging and
/// resamples to `analysis_rate`.
pub fn load_audio(path: impl AsRef<Path>, analysis_rate: u32) -> Result<AudioTrack, MediaError> {
    let path = path.as_ref();
    let unsupported = |detail: String| MediaError::UnsupportedEncoding {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => MediaError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(unsupported(format!("{channels} channels")));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float if spec.bits_per_sample == 32 => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| unsupported(e.to_string()))?,
        hound::SampleFormat::Int if (8..=32).contains(&spec.bits_per_sample) => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| unsupported(e.to_string()))?
        }
        fmt => return Err(unsupported(format!("{fmt:?} at {} bits", spec.bits_per_sample))),
    };
    if interleaved.is_empty() {
        return Err(MediaError::EmptyAudio(path.to_path_buf()));
    }
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if spec.sample_rate == 0 {
        return Err(unsupported("zero sample rate".into()));
    }
    let resampled = resample_linear(&mono, spec.sample_rate, analysis_rate);
    AudioTrack::new(analysis_rate, resampled)
}

/// Writes mono 16-bit PCM. Used for fixtures and debugging dumps.
pub fn write_wav(path: impl AsRef<Path>, track: &AudioTrack) -> Result<(), MediaError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: track.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| MediaError::UnsupportedEncoding {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &track.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayFrame {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

const FRAME_SPACING_TOL: f64 = 1e-6;

/// Uniformly sampled frames, timestamps `i / fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    fps: f64,
    frames: Vec<GrayFrame>,
    timestamps_s: Vec<f64>,
}

impl FrameSequence {
    pub fn new(fps: f64, frames: Vec<GrayFrame>) -> Result<Self, MediaError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(MediaError::Meta(format!("fps {fps}")));
        }
        if let Some(first) = frames.first() {
            for (index, f) in frames.iter().enumerate() {
                if f.width != first.width || f.height != first.height {
                    return Err(MediaError::FrameDimensions {
                        index,
                        got_w: f.width,
                        got_h: f.height,
                        want_w: first.width,
                        want_h: first.height,
                    });
                }
            }
        }
        let timestamps_s = (0..frames.len()).map(|i| i as f64 / fps).collect();
        Ok(Self {
            fps,
            frames,
            timestamps_s,
        })
    }

    /// Builds a sequence from explicit timestamps, which must be strictly
    /// increasing with spacing `1/fps`.
    pub fn with_timestamps(fps: f64, frames: Vec<GrayFrame>, timestamps_s: Vec<f64>) -> Result<Self, MediaError> {
        let mut seq = Self::new(fps, frames)?;
        if timestamps_s.len() != seq.frames.len() {
            return Err(MediaError::Meta("timestamp count differs from frame count".into()));
        }
        for w in timestamps_s.windows(2) {
            if w[1] <= w[0] || ((w[1] - w[0]) - 1.0 / fps).abs() > FRAME_SPACING_TOL {
                return Err(MediaError::Meta(format!("non-uniform frame spacing at {}", w[0])));
            }
        }
        seq.timestamps_s = timestamps_s;
        Ok(seq)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[GrayFrame] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps_s
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Span covered by the frames: `len / fps`.
    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Indices of frames whose timestamps fall in `interval`.
    pub fn indices_in(&self, interval: &TimeInterval) -> std::ops::Range<usize> {
        let lo = self.timestamps_s.partition_point(|&t| t < interval.start() - FRAME_SPACING_TOL);
        let hi = self.timestamps_s.partition_point(|&t| t < interval.end() - FRAME_SPACING_TOL);
        lo..hi.max(lo)
    }
}

fn frame_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Loads numbered frame images (`000000.png`, `000001.png`, ...) from a
/// directory. Indices start at zero and must be contiguous.
pub fn load_frames(dir: impl AsRef<Path>, fps: f64) -> Result<FrameSequence, MediaError> {
    let dir = dir.as_ref();
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "pgm"))
            .unwrap_or(false);
        if let (true, Some(idx)) = (is_image, frame_index(&path)) {
            indexed.push((idx, path));
        }
    }
    if indexed.is_empty() {
        return Err(MediaError::NoFrames(dir.to_path_buf()));
    }
    indexed.sort();
    for (expected, (idx, _)) in indexed.iter().enumerate() {
        if *idx != expected {
            return Err(MediaError::MissingFrame(expected));
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    for (_, path) in &indexed {
        let img = image::open(path).map_err(|e| MediaError::Image {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        frames.push(GrayFrame {
            width: w as usize,
            height: h as usize,
            data: luma.as_raw().iter().map(|&p| p as f32 / 255.0).collect(),
        });
    }
    FrameSequence::new(fps, frames)
}

/// Writes an 8-bit grayscale PNG.
pub fn write_frame_png(path: impl AsRef<Path>, frame: &GrayFrame) -> Result<(), MediaError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = frame
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(frame.width as u32, frame.height as u32, bytes)
        .ok_or_else(|| MediaError::Meta("frame buffer size mismatch".into()))?;
    img.save(path).map_err(|e| MediaError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub interval: TimeInterval,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub language: String,
    pub segments: Vec<TranscriptSegment>,
}

impl Transcript {
    pub fn new(language: impl Into<String>, mut segments: Vec<TranscriptSegment>) -> Result<Self, MediaError> {
        segments.sort_by(|a, b| a.interval.start().total_cmp(&b.interval.start()));
        for w in segments.windows(2) {
            if w[0].interval.overlaps(&w[1].interval) {
                return Err(MediaError::Meta(format!(
                    "transcript segments overlap at {}",
                    w[1].interval.start()
                )));
            }
        }
        Ok(Self {
            language: language.into(),
            segments,
        })
    }

    /// Text of every segment overlapping `span`, joined by spaces.
    pub fn text_in(&self, span: &TimeInterval) -> String {
        self.segments
            .iter()
            .filter(|s| s.interval.overlaps(span))
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Parses the timed-segment transcript format:
///
/// ```text
/// #lang=en
/// 0.000<TAB>3.250<TAB>hello there
/// ```
pub fn parse_transcript(text: &str, origin: &Path) -> Result<Transcript, MediaError> {
    let mut language = String::from("und");
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(lang) = rest.trim().strip_prefix("lang=") {
                language = lang.trim().to_string();
            }
            continue;
        }
        let bad = |detail: String| MediaError::Transcript {
            path: origin.to_path_buf(),
            line: i + 1,
            detail,
        };
        let mut parts = line.splitn(3, '\t');
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(bad("expected start<TAB>end<TAB>text".into()));
        };
        let start: f64 = a.trim().parse().map_err(|_| bad(format!("bad start {a:?}")))?;
        let end: f64 = b.trim().parse().map_err(|_| bad(format!("bad end {b:?}")))?;
        let interval = TimeInterval::new(start, end).map_err(|e| bad(e.to_string()))?;
        segments.push(TranscriptSegment {
            interval,
            text: parts.next().unwrap_or("").trim().to_string(),
        });
    }
    Transcript::new(language, segments)
}

pub fn load_transcript(path: impl AsRef<Path>) -> Result<Transcript, MediaError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_transcript(&text, path)
}

pub fn write_transcript(path: impl AsRef<Path>, t: &Transcript) -> Result<(), MediaError> {
    let path = path.as_ref();
    let mut out = format!("#lang={}\n", t.language);
    for s in &t.segments {
        out.push_str(&format!("{:.3}\t{:.3}\t{}\n", s.interval.start(), s.interval.end(), s.text));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Fraction of `[0, duration_s)` covered by transcript segments.
///
/// Computed as the measure of the union of segments clipped to the video,
/// which keeps the result monotone under added segments and independent of
/// their order.
pub fn subtitle_coverage(transcript: &Transcript, duration_s: f64) -> f64 {
    if duration_s <= 0.0 {
        return 0.0;
    }
    let mut spans: Vec<(f64, f64)> = transcript
        .segments
        .iter()
        .map(|s| (s.interval.start().max(0.0), s.interval.end().min(duration_s)))
        .filter(|(a, b)| b > a)
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut cursor = 0.0f64;
    for (a, b) in spans {
        let a = a.max(cursor);
        if b > a {
            covered += b - a;
            cursor = b;
        }
    }
    (covered / duration_s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
    pub has_transcript: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<(), MediaError> {
        if self.width == 0 || self.height == 0 {
            return Err(MediaError::Meta(format!("{}: zero resolution", self.video_id)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(MediaError::Meta(format!("{}: duration {}", self.video_id, self.duration_s)));
        }
        Ok(())
    }
}

/// Per-video asset directory: `meta.json`, `audio.wav`, `frames/`, and an
/// optional `transcript.tsv`.
#[derive(Debug, Clone)]
pub struct VideoAssets {
    pub root: PathBuf,
}

impl VideoAssets {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn meta_path(&self) -> PathBuf {
        self.root.join("meta.json")
    }

    pub fn audio_path(&self) -> PathBuf {
        self.root.join("audio.wav")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.root.join("transcript.tsv")
    }

    pub fn load_meta(&self) -> Result<VideoMeta, MediaError> {
        let path = self.meta_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: VideoMeta = serde_json::from_str(&text).map_err(|e| MediaError::Meta(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn load_transcript(&self) -> Result<Option<Transcript>, MediaError> {
        let path = self.transcript_path();
        if !path.exists() {
            return Ok(None);
        }
        load_transcript(path).map(Some)
    }

    pub fn load_audio(&self, rate: u32) -> Result<AudioTrack, MediaError> {
        load_audio(self.audio_path(), rate)
    }

    pub fn load_frames(&self, fps: f64) -> Result<FrameSequence, MediaError> {
        load_frames(self.frames_dir(), fps)
    }
}

/// Sorted per-video asset directories under `root` (those holding a `meta.json`).
pub fn discover_videos(root: impl AsRef<Path>) -> Result<Vec<VideoAssets>, MediaError> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(VideoAssets::new).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn seg(a: f64, b: f64) -> TranscriptSegment {
        TranscriptSegment {
            interval: TimeInterval::new(a, b).unwrap(),
            text: "x".into(),
        }
    }

    fn write_pcm(path: &Path, rate: u32, channels: u16, frames: &[Vec<f64>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for f in frames {
            for &s in f {
                w.write_sample((s * 32767.0).round() as i16).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_resamples_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_pcm(&p, 44_100, 1, &vec![vec![0.0]; 44_100]);
        let t = load_audio(&p, 16_000).unwrap();
        assert_eq!(t.samples().len(), 16_000);
        assert!(t.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn antiphase_stereo_downmixes_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let frames: Vec<Vec<f64>> = (0..8000)
            .map(|i| {
                let v = 0.5 * (i as f64 * 0.01).sin();
                vec![v, -v]
            })
            .collect();
        write_pcm(&p, 16_000, 2, &frames);
        let t = load_audio(&p, 16_000).unwrap();
        assert!(t.samples().iter().all(|&s| s.abs() < 1e-9));
    }

    #[test]
    fn sine_keeps_its_frequency_after_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        let frames: Vec<Vec<f64>> = (0..48_000)
            .map(|i| vec![0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 48_000.0).sin()])
            .collect();
        write_pcm(&p, 48_000, 1, &frames);
        let t = load_audio(&p, 16_000).unwrap();
        assert_eq!(t.samples().len(), 16_000);
        let n = t.samples().len();
        let mut buf: Vec<Complex<f64>> = t.samples().iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        let bin_hz = 16_000.0 / n as f64;
        assert!((peak as f64 * bin_hz - 440.0).abs() <= bin_hz);
    }

    #[test]
    fn resampling_preserves_duration() {
        for (from, to, n) in [(44_100u32, 16_000u32, 12_345usize), (8_000, 16_000, 999), (48_000, 16_000, 48_001)] {
            let out = resample_linear(&vec![0.1; n], from, to);
            let d_in = n as f64 / from as f64;
            let d_out = out.len() as f64 / to as f64;
            assert!((d_in - d_out).abs() <= 1.0 / to as f64);
        }
    }

    #[test]
    fn frames_load_and_normalize() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            write_frame_png(dir.path().join(format!("{i:06}.png")), &GrayFrame::filled(8, 4, 1.0)).unwrap();
        }
        let seq = load_frames(dir.path(), 1.0).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.timestamps(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(seq.frames()[0].data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn missing_frame_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for i in (0..10).filter(|&i| i != 7) {
            write_frame_png(dir.path().join(format!("{i:06}.png")), &GrayFrame::filled(4, 4, 0.5)).unwrap();
        }
        match load_frames(dir.path(), 1.0).unwrap_err() {
            MediaError::MissingFrame(7) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimensions_rejected() {
        let frames = vec![GrayFrame::filled(4, 4, 0.0), GrayFrame::filled(4, 5, 0.0)];
        assert!(matches!(
            FrameSequence::new(2.0, frames),
            Err(MediaError::FrameDimensions { index: 1, .. })
        ));
    }

    #[test]
    fn coverage_examples() {
        let empty = Transcript::new("en", vec![]).unwrap();
        assert_eq!(subtitle_coverage(&empty, 10.0), 0.0);
        let full = Transcript::new("en", vec![seg(0.0, 10.0)]).unwrap();
        assert_eq!(subtitle_coverage(&full, 10.0), 1.0);
        let two = Transcript::new("en", vec![seg(5.0, 9.0), seg(0.0, 3.0)]).unwrap();
        assert!((subtitle_coverage(&two, 10.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn coverage_clips_to_duration() {
        let t = Transcript::new("en", vec![seg(8.0, 14.0)]).unwrap();
        assert!((subtitle_coverage(&t, 10.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn transcript_format_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        let t = Transcript::new("en", vec![seg(0.5, 2.25), seg(3.0, 4.0)]).unwrap();
        write_transcript(&p, &t).unwrap();
        assert_eq!(load_transcript(&p).unwrap(), t);
    }

    #[test]
    fn malformed_transcript_line_reported() {
        let err = parse_transcript("#lang=en\n0.0\t1.0\thi\nnonsense\n", Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, MediaError::Transcript { line: 3, .. }));
    }
}
