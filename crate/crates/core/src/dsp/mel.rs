use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::AudioClip;

/// STFT and mel filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    /// 16 kHz input, 1024-point window, 320-sample hop (50 frames per second), 64 bands.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 320,
            n_mels: 64,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.hop == 0 || self.hop > self.n_fft {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.n_fft));
        }
        if self.n_fft < 2 {
            return bad("n_fft must be at least 2".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad(format!(
                "need 0 <= fmin < fmax <= sample_rate/2, got {}..{}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    /// Frames per second of the STFT.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Time in seconds of the centre of STFT frame `t`.
    pub fn frame_time(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate as f64
    }

    /// STFT frame count for a clip of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Edge and centre frequencies of the `n_mels` triangular bands:
/// band `i` spans `edges[i]..edges[i + 2]` and peaks at `edges[i + 1]`.
pub fn mel_band_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// `n_mels x (n_fft/2 + 1)` triangular filterbank with area (Slaney) normalization.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let edges = mel_band_edges(cfg);
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for band in 0..cfg.n_mels {
        let (l, c, r) = (edges[band], edges[band + 1], edges[band + 2]);
        let norm = 2.0 / (r - l);
        for bin in 0..n_bins {
            let f = bin as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let rising = (f - l) / (c - l);
            let falling = (r - f) / (r - c);
            let w = rising.min(falling).max(0.0);
            fb[[band, bin]] = w * norm;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror-pads by `pad` samples on both sides without repeating the edge sample.
pub(crate) fn reflect_pad(x: &[f32], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            let mut j = i;
            // Repeated reflection handles pads longer than the signal.
            while j < 0 || j >= n {
                if j < 0 {
                    j = -j;
                }
                if j >= n {
                    j = 2 * (n - 1) - j;
                }
            }
            x[j as usize] as f64
        })
        .collect()
}

/// Reusable STFT + filterbank state for one configuration.
pub struct MelSpectrogram {
    cfg: MelConfig,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelSpectrogram {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            window: hann(cfg.n_fft),
            filterbank: mel_filterbank(&cfg),
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// `n_frames x n_mels` mel power spectrogram.
    pub fn compute(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        let cfg = &self.cfg;
        if clip.sample_rate() != cfg.sample_rate {
            return Err(Error::InvalidInput(format!(
                "clip is {} Hz, mel config expects {} Hz",
                clip.sample_rate(),
                cfg.sample_rate
            )));
        }
        if clip.len() < cfg.n_fft {
            return Err(Error::InsufficientFrames {
                needed: cfg.n_fft,
                got: clip.len(),
            });
        }
        let padded = reflect_pad(clip.samples(), cfg.n_fft / 2);
        let n_frames = cfg.n_frames(clip.len());
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let start = t * cfg.hop;
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(padded[start + k] * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(buf.iter()) {
                *p = c.norm_sqr();
            }
            for (band, fb_row) in self.filterbank.outer_iter().enumerate() {
                out[[t, band]] = fb_row.iter().zip(power.iter()).map(|(w, p)| w * p).sum();
            }
        }
        Ok(out)
    }
}

/// Hann-windowed power STFT projected through a Slaney mel filterbank.
/// Frame `t` is centred on sample `t * hop` (reflection padded).
pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<Array2<f64>> {
    MelSpectrogram::new(*cfg)?.compute(clip)
}
