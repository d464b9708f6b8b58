//! MFCC extraction.
//!
//! Conventions: pre-emphasis `y[0] = x[0]`, `y[n] = x[n] - 0.97 x[n-1]`;
//! frames of `round(sr * frame_ms / 1000)` samples every
//! `round(sr * hop_ms / 1000)` samples, no padding; symmetric Hann window;
//! FFT size the next power of two at or above the frame length; power
//! spectrum `|X|^2`; HTK-mel triangular filters spanning `0..sr/2` evaluated
//! at each bin's centre frequency; natural log with floor `LOG_FLOOR`, raised per
//! frame to `dynamic_range_db` below the frame's peak mel energy;
//! orthonormal DCT-II; coefficients `1..=n_coeffs` kept.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::mediaio::AudioTrack;

pub const PRE_EMPHASIS: f64 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;
/// Just above the Hann window's first sidelobe (-31.5 dB).
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 30.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MfccError {
    #[error("invalid MFCC config: {0}")]
    Config(String),
    #[error("audio has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_coeffs: usize,
    /// Per-frame floor on mel energies, in dB below the frame's largest
    /// mel energy. `None` keeps only `LOG_FLOOR`.
    pub dynamic_range_db: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 26,
            n_coeffs: 13,
            dynamic_range_db: Some(DEFAULT_DYNAMIC_RANGE_DB),
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<(), MfccError> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.frame_ms) {
            return Err(MfccError::Config(format!("need 0 < hop_ms ({}) <= frame_ms ({})", self.hop_ms, self.frame_ms)));
        }
        // coefficient 0 is dropped, so index n_coeffs must exist
        if self.n_coeffs == 0 || self.n_coeffs >= self.n_mels {
            return Err(MfccError::Config(format!("need 1 <= n_coeffs ({}) < n_mels ({})", self.n_coeffs, self.n_mels)));
        }
        if let Some(db) = self.dynamic_range_db {
            if !(db > 0.0) {
                return Err(MfccError::Config(format!("dynamic_range_db must be positive, got {db}")));
            }
        }
        Ok(())
    }

    pub fn frame_len(&self, sr: u32) -> usize {
        (sr as f64 * self.frame_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sr: u32) -> usize {
        ((sr as f64 * self.hop_ms / 1000.0).round() as usize).max(1)
    }
}

/// `T x n_coeffs` coefficients; row `t` covers samples `[t*hop, t*hop + frame)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccMatrix {
    pub coefficients: Vec<Vec<f64>>,
    pub hop_s: f64,
    pub frame_s: f64,
    /// Duration of the analysed track.
    pub duration_s: f64,
}

impl MfccMatrix {
    pub fn frames(&self) -> usize {
        self.coefficients.len()
    }

    /// Centre time of frame `t`.
    pub fn frame_centre(&self, t: usize) -> f64 {
        t as f64 * self.hop_s + self.frame_s / 2.0
    }

    pub fn frame_end(&self, t: usize) -> f64 {
        t as f64 * self.hop_s + self.frame_s
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels x (n_fft/2 + 1)` triangular weights.
pub fn mel_filterbank(sr: u32, n_fft: usize, n_mels: usize) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sr as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sr as f64 / n_fft as f64;
                    if f > lo && f < mid {
                        (f - lo) / (mid - lo)
                    } else if f >= mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II rows `1..=n_coeffs` for inputs of length `n`.
fn dct_rows(n: usize, n_coeffs: usize) -> Vec<Vec<f64>> {
    let scale = (2.0 / n as f64).sqrt();
    (1..=n_coeffs)
        .map(|k| {
            (0..n)
                .map(|m| scale * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n as f64).cos())
                .collect()
        })
        .collect()
}

pub fn compute_mfcc(audio: &AudioTrack, cfg: &MfccConfig) -> Result<MfccMatrix, MfccError> {
    cfg.validate()?;
    let sr = audio.sample_rate();
    let x = audio.samples();
    let frame = cfg.frame_len(sr);
    let hop = cfg.hop_len(sr);
    if frame == 0 || x.len() < frame {
        return Err(MfccError::TooShort { samples: x.len(), frame });
    }
    let n_frames = (x.len() - frame) / hop + 1;
    let n_fft = frame.next_power_of_two();

    let emphasized: Vec<f64> = (0..x.len())
        .map(|n| if n == 0 { x[0] } else { x[n] - PRE_EMPHASIS * x[n - 1] })
        .collect();
    let window: Vec<f64> = (0..frame)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (frame - 1).max(1) as f64).cos())
        .collect();
    let fb = mel_filterbank(sr, n_fft, cfg.n_mels);
    let dct = dct_rows(cfg.n_mels, cfg.n_coeffs);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);

    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    let mut coefficients = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let seg = &emphasized[t * hop..t * hop + frame];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if i < frame { seg[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let mel: Vec<f64> = fb.iter().map(|w| w.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>()).collect();
        let floor = match cfg.dynamic_range_db {
            Some(db) => (mel.iter().cloned().fold(0.0, f64::max) * 10f64.powf(-db / 10.0)).max(LOG_FLOOR),
            None => LOG_FLOOR,
        };
        let log_mel: Vec<f64> = mel.iter().map(|e| e.max(floor).ln()).collect();
        coefficients.push(dct.iter().map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum()).collect());
    }
    Ok(MfccMatrix {
        coefficients,
        hop_s: hop as f64 / sr as f64,
        frame_s: frame as f64 / sr as f64,
        duration_s: audio.duration_s(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn sine(freq: f64, secs: f64, sr: u32) -> Vec<f64> {
        (0..(secs * sr as f64).round() as usize)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    pub(crate) fn max_relative_step(m: &MfccMatrix) -> f64 {
        m.coefficients
            .windows(2)
            .map(|w| {
                let num: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = w[0].iter().map(|a| a * a).sum::<f64>().sqrt();
                num / den
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn frame_count_formula() {
        let a = AudioTrack::new(16_000, vec![0.0; 16_000]).unwrap();
        let m = compute_mfcc(&a, &MfccConfig::default()).unwrap();
        assert_eq!(m.frames(), (16_000 - 400) / 160 + 1);
        assert_eq!(m.coefficients[0].len(), 13);
    }

    #[test]
    fn silence_is_constant() {
        let a = AudioTrack::new(16_000, vec![0.0; 8_000]).unwrap();
        let m = compute_mfcc(&a, &MfccConfig::default()).unwrap();
        for row in &m.coefficients {
            assert_eq!(row, &m.coefficients[0]);
            assert!(row.iter().all(|c| c.abs() < 1e-9));
        }
    }

    #[test]
    fn too_short_is_error() {
        let a = AudioTrack::new(16_000, vec![0.0; 100]).unwrap();
        assert_eq!(
            compute_mfcc(&a, &MfccConfig::default()),
            Err(MfccError::TooShort { samples: 100, frame: 400 })
        );
    }

    #[test]
    fn steady_sine_with_period_aligned_hop_is_stationary() {
        // 25 ms hop = 400 samples = exactly 11 periods of 440 Hz
        let cfg = MfccConfig { hop_ms: 25.0, ..Default::default() };
        let a = AudioTrack::new(16_000, sine(440.0, 2.0, 16_000)).unwrap();
        let m = compute_mfcc(&a, &cfg).unwrap();
        assert!(max_relative_step(&m) < 1e-6, "{}", max_relative_step(&m));
    }

    #[test]
    fn steady_sine_default_hop_drift_is_small() {
        let a = AudioTrack::new(16_000, sine(440.0, 2.0, 16_000)).unwrap();
        let m = compute_mfcc(&a, &MfccConfig::default()).unwrap();
        let step = max_relative_step(&m);
        eprintln!("440 Hz, 10 ms hop: max relative frame step {step:.3e}");
        assert!(step < 1e-4, "{step}");
        let raw = compute_mfcc(&a, &MfccConfig { dynamic_range_db: None, ..Default::default() }).unwrap();
        assert!(max_relative_step(&raw) > step);
    }

    #[test]
    fn noise_and_sine_separate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cfg = MfccConfig::default();
        let mn = compute_mfcc(&AudioTrack::new(16_000, noise).unwrap(), &cfg).unwrap();
        let ms = compute_mfcc(&AudioTrack::new(16_000, sine(440.0, 1.0, 16_000)).unwrap(), &cfg).unwrap();
        let mean = |m: &MfccMatrix| -> Vec<f64> {
            (0..13).map(|k| m.coefficients.iter().map(|r| r[k]).sum::<f64>() / m.frames() as f64).collect()
        };
        let (a, b) = (mean(&mn), mean(&ms));
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 1.0, "{dist}");
    }

    #[test]
    fn one_hop_delay_shifts_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..8_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut delayed = vec![0.0; 160];
        delayed.extend(&x);
        let cfg = MfccConfig::default();
        let a = compute_mfcc(&AudioTrack::new(16_000, x).unwrap(), &cfg).unwrap();
        let b = compute_mfcc(&AudioTrack::new(16_000, delayed).unwrap(), &cfg).unwrap();
        assert_eq!(b.frames(), a.frames() + 1);
        for t in 0..a.frames() {
            for k in 0..13 {
                assert!((a.coefficients[t][k] - b.coefficients[t + 1][k]).abs() < 1e-9);
            }
        }
    }
}
