use crate::error::{Error, Result};
use crate::motion::Series;

/// Default weight of the tempo-consistency term.
pub const DEFAULT_TIGHTNESS: f64 = 100.0;

/// Beat period in envelope frames for a tempo.
pub fn beat_period_frames(rate: f64, bpm: f64) -> f64 {
    rate * 60.0 / bpm
}

/// Transition score for a gap of `gap` frames: `-tightness * ln(gap / period)^2`.
pub fn gap_score(gap: usize, period: f64, tightness: f64) -> f64 {
    let r = (gap as f64 / period).ln();
    -tightness * r * r
}

/// Objective maximized by [`dp_beat_select`] for an explicit beat set.
pub fn beat_objective(envelope: &[f64], beats: &[usize], period: f64, tightness: f64) -> f64 {
    let onsets: f64 = beats.iter().map(|&b| envelope[b]).sum();
    let transitions: f64 = beats
        .windows(2)
        .map(|w| gap_score(w[1] - w[0], period, tightness))
        .sum();
    onsets + transitions
}

/// Selects the strictly increasing frame set maximizing
/// `sum envelope[b_i] + sum gap_score(b_i - b_{i-1})`.
///
/// Left-to-right DP where each frame either starts a new chain or extends
/// the best earlier chain, then backtracking from the best terminal frame.
/// Ties prefer starting a chain, then the earliest predecessor.
pub fn dp_beat_select(envelope: &Series, bpm: f64, tightness: f64) -> Result<Vec<usize>> {
    if !(bpm.is_finite() && bpm > 0.0) {
        return Err(Error::InvalidInput(format!("bpm must be positive, got {bpm}")));
    }
    if !(tightness.is_finite() && tightness > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tightness must be positive, got {tightness}"
        )));
    }
    let env = &envelope.values;
    if env.is_empty() {
        return Ok(Vec::new());
    }
    let period = beat_period_frames(envelope.rate, bpm);
    let n = env.len();
    let mut best = vec![0.0f64; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        let mut link = 0.0;
        let mut from = None;
        for (i, b) in best[..j].iter().enumerate() {
            let v = b + gap_score(j - i, period, tightness);
            if v > link {
                link = v;
                from = Some(i);
            }
        }
        best[j] = env[j] + link;
        pred[j] = from;
    }
    let mut end = 0;
    for j in 1..n {
        if best[j] > best[end] {
            end = j;
        }
    }
    if best[end] <= 0.0 {
        return Ok(Vec::new());
    }
    let mut beats = vec![end];
    let mut cur = end;
    while let Some(p) = pred[cur] {
        beats.push(p);
        cur = p;
    }
    beats.reverse();
    Ok(beats)
}
