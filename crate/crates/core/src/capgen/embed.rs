//! Unit-norm embedding series and the pluggable embedder interface.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::client::ClientError;
use crate::framediff::Thumbnail;
use crate::manifest::{Modality, TimeInterval};

pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingError {
    #[error("vector {index} has norm {norm}, expected 1")]
    NotUnit { index: usize, norm: f64 },
    #[error("vector {index} has dimension {got}, expected {want}")]
    Dimension { index: usize, got: usize, want: usize },
    #[error("vector {0} is zero and cannot be normalized")]
    Zero(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} vectors, got {got}")]
    TooShort { need: usize, got: usize },
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2_norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of unit vectors, i.e. their dot product.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sequence of unit-norm vectors of one dimension, one per item (clip or second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeries {
    vectors: Vec<Vec<f64>>,
    item_span_s: f64,
}

impl EmbeddingSeries {
    /// Validates that every vector is unit-norm and all share a dimension.
    pub fn new(vectors: Vec<Vec<f64>>, item_span_s: f64) -> Result<Self, EmbeddingError> {
        if let Some(first) = vectors.first() {
            let want = first.len();
            for (index, v) in vectors.iter().enumerate() {
                if v.len() != want {
                    return Err(EmbeddingError::Dimension { index, got: v.len(), want });
                }
                let norm = l2_norm(v);
                if (norm - 1.0).abs() > NORM_TOL {
                    return Err(EmbeddingError::NotUnit { index, norm });
                }
            }
        }
        Ok(Self { vectors, item_span_s })
    }

    /// Normalizes raw vectors before validating.
    pub fn from_raw(vectors: Vec<Vec<f64>>, item_span_s: f64) -> Result<Self, EmbeddingError> {
        let normalized = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| normalize(v).ok_or(EmbeddingError::Zero(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(normalized, item_span_s)
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn item_span_s(&self) -> f64 {
        self.item_span_s
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Cosine between the i-th items of two aligned series.
    pub fn pairwise_cosines(&self, other: &EmbeddingSeries) -> Result<Vec<f64>, EmbeddingError> {
        if self.len() != other.len() {
            return Err(EmbeddingError::LengthMismatch(self.len(), other.len()));
        }
        Ok(self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| cosine(a, b))
            .collect())
    }
}

/// Media handed to an embedder. Live clients send only the span metadata;
/// the content is there for in-process providers.
#[derive(Debug, Clone, Copy)]
pub enum MediaSlice<'a> {
    Frames(&'a [Thumbnail]),
    Audio { samples: &'a [f64], sample_rate: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedRequest<'a> {
    pub video_id: &'a str,
    pub modality: Modality,
    pub span: TimeInterval,
    pub media: MediaSlice<'a>,
}

pub trait Embedder: Send + Sync {
    /// Returns a unit-norm vector.
    fn embed(&self, request: &EmbedRequest<'_>) -> Result<Vec<f64>, ClientError>;
}

/// Offline embedder mapping both modalities into one shared space.
///
/// Each clip is reduced to a scalar content code in `[0, 1]`: mean luma for
/// frames, log-scaled spectral centroid for audio. The code is rendered as a
/// Gaussian bump over `bins` evenly spaced centres, so clips with nearby codes
/// have cosine close to one and distant codes are near-orthogonal. Silent or
/// empty clips map to a dedicated extra axis.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    pub bins: usize,
    pub width: f64,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self { bins: 16, width: 0.08 }
    }
}

const SILENCE_ENERGY: f64 = 1e-10;
const CENTROID_LO_HZ: f64 = 100.0;
const CENTROID_HI_HZ: f64 = 8000.0;

impl StubEmbedder {
    pub fn dim(&self) -> usize {
        self.bins + 1
    }

    fn bump(&self, code: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.bins)
            .map(|k| {
                let centre = k as f64 / (self.bins - 1) as f64;
                (-(code - centre).powi(2) / (2.0 * self.width * self.width)).exp()
            })
            .collect();
        v.push(0.0);
        normalize(&v).expect("bump is nonzero")
    }

    fn silence(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[self.bins] = 1.0;
        v
    }

    pub fn visual_code(thumbs: &[Thumbnail]) -> Option<f64> {
        if thumbs.is_empty() {
            return None;
        }
        Some(thumbs.iter().map(Thumbnail::mean).sum::<f64>() / thumbs.len() as f64)
    }

    /// Log-scaled power-spectrum centroid, `None` for silence.
    pub fn audio_code(samples: &[f64], sample_rate: u32) -> Option<f64> {
        const N: usize = 1024;
        if samples.is_empty() {
            return None;
        }
        let fft = FftPlanner::new().plan_fft_forward(N);
        let mut power = vec![0.0f64; N / 2 + 1];
        let mut buf = vec![Complex::new(0.0, 0.0); N];
        for block in samples.chunks(N) {
            for (i, slot) in buf.iter_mut().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / N as f64).cos();
                *slot = Complex::new(block.get(i).copied().unwrap_or(0.0) * w, 0.0);
            }
            fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
        }
        let total: f64 = power.iter().sum();
        if total / samples.len() as f64 <= SILENCE_ENERGY {
            return None;
        }
        let bin_hz = sample_rate as f64 / N as f64;
        let centroid = power.iter().enumerate().map(|(k, p)| k as f64 * bin_hz * p).sum::<f64>() / total;
        let code = (centroid.max(CENTROID_LO_HZ) / CENTROID_LO_HZ).ln() / (CENTROID_HI_HZ / CENTROID_LO_HZ).ln();
        Some(code.clamp(0.0, 1.0))
    }
}

impl Embedder for StubEmbedder {
    fn embed(&self, request: &EmbedRequest<'_>) -> Result<Vec<f64>, ClientError> {
        let code = match request.media {
            MediaSlice::Frames(thumbs) => Self::visual_code(thumbs),
            MediaSlice::Audio { samples, sample_rate } => Self::audio_code(samples, sample_rate),
        };
        Ok(code.map_or_else(|| self.silence(), |c| self.bump(c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64) -> Vec<f64> {
        (0..(secs * 16_000.0) as usize)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect()
    }

    fn embed_audio(samples: &[f64]) -> Vec<f64> {
        StubEmbedder::default()
            .embed(&EmbedRequest {
                video_id: "v",
                modality: Modality::Audio,
                span: TimeInterval::new(0.0, 1.0).unwrap(),
                media: MediaSlice::Audio { samples, sample_rate: 16_000 },
            })
            .unwrap()
    }

    #[test]
    fn series_validation() {
        assert!(EmbeddingSeries::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).is_ok());
        assert!(matches!(
            EmbeddingSeries::new(vec![vec![1.0, 1.0]], 1.0),
            Err(EmbeddingError::NotUnit { index: 0, .. })
        ));
        assert!(matches!(
            EmbeddingSeries::new(vec![vec![1.0], vec![0.0, 1.0]], 1.0),
            Err(EmbeddingError::Dimension { index: 1, .. })
        ));
        assert_eq!(EmbeddingSeries::from_raw(vec![vec![0.0, 0.0]], 1.0), Err(EmbeddingError::Zero(0)));
        let s = EmbeddingSeries::from_raw(vec![vec![3.0, 4.0]], 1.0).unwrap();
        assert!((s.vectors()[0][0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stub_separates_tones_and_matches_repeats() {
        let a = embed_audio(&tone(440.0, 1.0));
        let b = embed_audio(&tone(440.0, 1.0));
        let c = embed_audio(&tone(880.0, 1.0));
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-9);
        assert!(cosine(&a, &c) < 0.6);
    }

    #[test]
    fn silence_has_its_own_axis() {
        let s = embed_audio(&vec![0.0; 16_000]);
        let t = embed_audio(&tone(440.0, 1.0));
        assert!((l2_norm(&s) - 1.0).abs() < 1e-12);
        assert!(cosine(&s, &t).abs() < 1e-12);
    }
}
