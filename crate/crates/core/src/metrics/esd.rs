use serde::{Deserialize, Serialize};

use super::events::EventTimes;

/// Distance assigned when either side has no events.
pub const ESD_PENALTY: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdReport {
    pub d_audio_to_motion: f64,
    pub d_motion_to_audio: f64,
    pub esd: f64,
    pub n_audio_events: usize,
    pub n_motion_events: usize,
    pub penalized: bool,
}

fn penalized(a: &EventTimes, m: &EventTimes) -> EsdReport {
    EsdReport {
        d_audio_to_motion: ESD_PENALTY,
        d_motion_to_audio: ESD_PENALTY,
        esd: ESD_PENALTY,
        n_audio_events: a.len(),
        n_motion_events: m.len(),
        penalized: true,
    }
}

fn report(a: &EventTimes, m: &EventTimes, row_min: &[f64], col_min: &[f64]) -> EsdReport {
    let d_am = row_min.iter().sum::<f64>() / row_min.len() as f64;
    let d_ma = col_min.iter().sum::<f64>() / col_min.len() as f64;
    EsdReport {
        d_audio_to_motion: d_am,
        d_motion_to_audio: d_ma,
        esd: (d_am + d_ma) / 2.0,
        n_audio_events: a.len(),
        n_motion_events: m.len(),
        penalized: false,
    }
}

/// Bidirectional mean nearest-event distance, from the full `|a_i - m_j|` matrix.
pub fn esd(audio: &EventTimes, motion: &EventTimes) -> EsdReport {
    if audio.is_empty() || motion.is_empty() {
        return penalized(audio, motion);
    }
    let (a, m) = (audio.times(), motion.times());
    let d: Vec<Vec<f64>> = a.iter().map(|x| m.iter().map(|y| (x - y).abs()).collect()).collect();
    let row_min: Vec<f64> = d.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let col_min: Vec<f64> = (0..m.len())
        .map(|j| d.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
        .collect();
    report(audio, motion, &row_min, &col_min)
}

/// Nearest distance from each query to a sorted set by a moving pointer.
fn nearest_by_scan(queries: &[f64], sorted: &[f64]) -> Vec<f64> {
    let mut j = 0;
    queries
        .iter()
        .map(|q| {
            while j + 1 < sorted.len() && sorted[j + 1] <= *q {
                j += 1;
            }
            let here = (q - sorted[j]).abs();
            match sorted.get(j + 1) {
                Some(next) => here.min((q - next).abs()),
                None => here,
            }
        })
        .collect()
}

/// Same as [`esd`] using two linear merge scans over the sorted event lists.
pub fn esd_scan(audio: &EventTimes, motion: &EventTimes) -> EsdReport {
    if audio.is_empty() || motion.is_empty() {
        return penalized(audio, motion);
    }
    let row_min = nearest_by_scan(audio.times(), motion.times());
    let col_min = nearest_by_scan(motion.times(), audio.times());
    report(audio, motion, &row_min, &col_min)
}
