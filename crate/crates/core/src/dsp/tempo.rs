use crate::motion::Series;

pub const DEFAULT_BPM: f64 = 120.0;
pub const MIN_BPM: f64 = 30.0;
pub const MAX_BPM: f64 = 300.0;
/// Width of the log-normal tempo prior, in octaves.
pub const PRIOR_SIGMA_OCTAVES: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoEstimate {
    pub bpm: f64,
    /// True when the envelope carries no energy and `bpm` is the default.
    pub no_signal: bool,
}

/// Log-normal prior weight at `bpm`, centred at 120 BPM.
pub fn tempo_prior(bpm: f64) -> f64 {
    let octaves = (bpm / DEFAULT_BPM).log2();
    (-0.5 * (octaves / PRIOR_SIGMA_OCTAVES).powi(2)).exp()
}

/// Global tempo from the autocorrelation of the mean-removed onset envelope,
/// searched over lags spanning 30-300 BPM and weighted by [`tempo_prior`].
pub fn estimate_tempo(envelope: &Series) -> TempoEstimate {
    let fallback = TempoEstimate {
        bpm: DEFAULT_BPM,
        no_signal: true,
    };
    let n = envelope.len();
    if n < 2 {
        return fallback;
    }
    let mean = envelope.values.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = envelope.values.iter().map(|v| v - mean).collect();
    let energy: f64 = centred.iter().map(|v| v * v).sum();
    if energy <= 1e-20 || envelope.values.iter().all(|v| *v == 0.0) {
        return fallback;
    }
    let rate = envelope.rate;
    let min_lag = ((60.0 * rate / MAX_BPM).ceil() as usize).max(1);
    let max_lag = ((60.0 * rate / MIN_BPM).floor() as usize).min(n - 1);
    if min_lag > max_lag {
        return fallback;
    }
    let mut best: Option<(f64, usize)> = None;
    for lag in min_lag..=max_lag {
        let ac: f64 = centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum();
        let bpm = 60.0 * rate / lag as f64;
        let score = ac * tempo_prior(bpm);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, lag));
        }
    }
    let (_, lag) = best.expect("lag range is non-empty");
    TempoEstimate {
        bpm: 60.0 * rate / lag as f64,
        no_signal: false,
    }
}
