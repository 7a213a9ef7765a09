//! Event extraction: audio beats from the onset pipeline, motion events from
//! thresholded velocity peaks.

use serde::{Deserialize, Serialize};

use crate::dsp::{dp_beat_select, estimate_tempo, mel_spectrogram, onset_strength, MelConfig, DEFAULT_TIGHTNESS};
use crate::error::{Error, Result};
use crate::motion::{velocity_magnitudes, AudioClip, MotionSequence};

/// Share of the RMS onset strength at selected beats below which leading and
/// trailing beats are dropped.
pub const BEAT_TRIM_RATIO: f64 = 0.5;
/// Velocity threshold is `mean + MOTION_THRESHOLD_SIGMAS * std`.
pub const MOTION_THRESHOLD_SIGMAS: f64 = 0.2;

/// Strictly increasing, finite, non-negative event times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventTimes(Vec<f64>);

impl EventTimes {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::InvalidInput(format!("bad event time {t}")));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("event times must be strictly increasing".into()));
        }
        Ok(Self(times))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `delta` to every time, dropping any that would become negative.
    pub fn shifted(&self, delta: f64) -> Self {
        Self(self.0.iter().map(|t| t + delta).filter(|t| *t >= 0.0).collect())
    }
}

/// Drops weak beats at either end of the selection. The DP happily extends
/// a chain through the noise floor at zero transition cost, so without this
/// trailing beats appear wherever the period lands.
fn trim_weak_ends(beats: &mut Vec<usize>, envelope: &[f64]) {
    if beats.is_empty() {
        return;
    }
    let rms = (beats.iter().map(|&b| envelope[b].powi(2)).sum::<f64>() / beats.len() as f64).sqrt();
    let floor = BEAT_TRIM_RATIO * rms;
    let first = beats.iter().position(|&b| envelope[b] >= floor);
    let last = beats.iter().rposition(|&b| envelope[b] >= floor);
    match (first, last) {
        (Some(a), Some(z)) => {
            beats.truncate(z + 1);
            beats.drain(..a);
        }
        _ => beats.clear(),
    }
}

/// Mel spectrogram, onset envelope, tempo, then DP beat selection; beat frames
/// become times `frame * hop / sample_rate`.
pub fn extract_audio_events(clip: &AudioClip, cfg: &MelConfig) -> Result<EventTimes> {
    cfg.validate()?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::InvalidInput(format!(
            "clip is {} Hz, config expects {} Hz",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }
    if clip.len() < cfg.n_fft || cfg.n_frames(clip.len()) < 2 {
        return Ok(EventTimes::empty());
    }
    let mel = mel_spectrogram(clip, cfg)?;
    let env = onset_strength(&mel, cfg.frame_rate())?;
    let tempo = estimate_tempo(&env);
    if tempo.no_signal {
        return Ok(EventTimes::empty());
    }
    let mut beats = dp_beat_select(&env, tempo.bpm, DEFAULT_TIGHTNESS)?;
    trim_weak_ends(&mut beats, &env.values);
    EventTimes::new(beats.into_iter().map(|b| cfg.frame_time(b)).collect())
}

/// Indices of thresholded local maxima: `v[i] > v[i-1]`, `v[i] >= v[i+1]`,
/// `v[i] > mean + 0.2 * std` (population std). Interior indices only.
pub fn velocity_peaks(v: &[f64]) -> Vec<usize> {
    let n = v.len();
    if n < 3 {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let tau = mean + MOTION_THRESHOLD_SIGMAS * var.sqrt();
    (1..n - 1)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] > tau)
        .collect()
}

/// Velocity peaks of a motion; velocity index `i` (displacement between
/// frames `i` and `i+1`) maps to time `(i + 1) / fps`.
pub fn extract_motion_events(motion: &MotionSequence) -> Result<EventTimes> {
    if motion.len() < 3 {
        return Ok(EventTimes::empty());
    }
    let v = velocity_magnitudes(motion)?;
    let fps = motion.fps();
    EventTimes::new(velocity_peaks(&v.values).into_iter().map(|i| (i + 1) as f64 / fps).collect())
}
