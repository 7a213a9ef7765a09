use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::Series;

/// Spectral flux on log-compressed mel power: per frame, the band mean of
/// `max(0, log1p(mel[t]) - log1p(mel[t-1]))`. The first frame is zero.
pub fn onset_strength(mel: &Array2<f64>, frame_rate: f64) -> Result<Series> {
    if mel.nrows() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: mel.nrows(),
        });
    }
    let bands = mel.ncols().max(1) as f64;
    let mut values = Vec::with_capacity(mel.nrows());
    values.push(0.0);
    for (prev, cur) in mel.outer_iter().zip(mel.outer_iter().skip(1)) {
        let flux: f64 = prev
            .iter()
            .zip(cur.iter())
            .map(|(p, c)| (c.ln_1p() - p.ln_1p()).max(0.0))
            .sum();
        values.push(flux / bands);
    }
    Series::new(frame_rate, values)
}
