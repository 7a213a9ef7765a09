//! Domain types for body motion, facial blendshapes, audio and dialogue
//! turns, plus the small amount of kinematic math shared by the codec and the
//! metrics.
//!
//! All matrices are row-major and frame-major: row `t` holds frame `t`.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Pose channels per body frame (63 joints in 6D rotation plus 15 extra channels).
pub const BODY_DIM: usize = 393;
/// ARKit blendshape coefficients per face frame.
pub const FACE_DIM: usize = 51;
/// Frame rate shared by all aligned modalities.
pub const MOTION_FPS: f64 = 20.0;

fn check_finite(frames: &Array2<f64>) -> Result<()> {
    for ((row, col), v) in frames.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// A `T x D` sequence of pose vectors sampled at `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    frames: Array2<f64>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Array2<f64>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
        }
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::InsufficientFrames {
                needed: 1,
                got: frames.nrows(),
            });
        }
        check_finite(&frames)?;
        Ok(Self { fps, frames })
    }

    pub fn from_rows(fps: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let frames = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(fps, frames)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    /// Concatenates sequences with equal fps and dimension.
    pub fn concat(parts: &[MotionSequence]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        for p in parts {
            if p.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    got: p.dim(),
                });
            }
            if p.fps != first.fps {
                return Err(Error::InvalidInput("fps differs between parts".into()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.frames.view()).collect();
        let frames = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self {
            fps: first.fps,
            frames,
        })
    }
}

/// A `T x 51` track of facial blendshape coefficients.
///
/// Values are stored as given; they are not clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeSequence(MotionSequence);

impl BlendshapeSequence {
    pub fn new(fps: f64, frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != FACE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FACE_DIM,
                got: frames.ncols(),
            });
        }
        MotionSequence::new(fps, frames).map(Self)
    }

    pub fn from_motion(m: MotionSequence) -> Result<Self> {
        if m.dim() != FACE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FACE_DIM,
                got: m.dim(),
            });
        }
        Ok(Self(m))
    }

    pub fn as_motion(&self) -> &MotionSequence {
        &self.0
    }

    pub fn into_motion(self) -> MotionSequence {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.0.fps()
    }
}

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio clip is empty".into()));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "sample {i} is outside [-1, 1]: {}",
                samples[i]
            )));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn silence(sample_rate: u32, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![0.0; len])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of whole motion frames at `fps` covered by this clip (at least one).
    pub fn frame_count(&self, fps: f64) -> usize {
        ((self.samples.len() as f64 * fps / self.sample_rate as f64) + 1e-9)
            .floor()
            .max(1.0) as usize
    }
}

/// One dataset row: expression label, action label, utterance and the
/// aligned audio, body motion and optional face track.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub expression_label: String,
    pub action_label: String,
    pub utterance: String,
    pub audio: AudioClip,
    pub motion: MotionSequence,
    pub face: Option<BlendshapeSequence>,
}

/// Placeholder used when a dataset row has no label.
pub const DEFAULT_LABEL: &str = "<none>";

impl DialogueTurn {
    pub fn new(
        expression_label: impl Into<String>,
        action_label: impl Into<String>,
        utterance: impl Into<String>,
        audio: AudioClip,
        motion: MotionSequence,
        face: Option<BlendshapeSequence>,
    ) -> Result<Self> {
        let period = 1.0 / motion.fps();
        if (audio.duration() - motion.duration()).abs() > period + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "audio lasts {:.3} s but motion lasts {:.3} s",
                audio.duration(),
                motion.duration()
            )));
        }
        if let Some(f) = &face {
            if (f.as_motion().duration() - motion.duration()).abs() > period + 1e-9 {
                return Err(Error::InvalidInput("face and body durations differ".into()));
            }
        }
        let label = |s: String| if s.is_empty() { DEFAULT_LABEL.to_string() } else { s };
        Ok(Self {
            expression_label: label(expression_label.into()),
            action_label: label(action_label.into()),
            utterance: utterance.into(),
            audio,
            motion,
            face,
        })
    }
}

/// A uniformly sampled scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub rate: f64,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(rate: f64, values: Vec<f64>) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidInput(format!("rate must be positive, got {rate}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        Ok(Self { rate, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-step speed `v_t = ||x_{t+1} - x_t||_2`; `T - 1` values at the motion fps.
pub fn velocity_magnitudes(motion: &MotionSequence) -> Result<Series> {
    if motion.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: motion.len(),
        });
    }
    let f = motion.frames();
    let values = f
        .outer_iter()
        .zip(f.outer_iter().skip(1))
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Series::new(motion.fps(), values)
}

/// Linear resampling onto a grid starting at time zero.
///
/// Output length is `floor(duration * dst_rate) + 1` where duration spans the
/// first to the last source sample.
pub fn resample_series(s: &Series, dst_rate: f64) -> Result<Series> {
    if !(dst_rate.is_finite() && dst_rate > 0.0) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {dst_rate}")));
    }
    if s.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty series".into()));
    }
    if dst_rate == s.rate {
        return Ok(s.clone());
    }
    let n = s.len();
    let duration = (n - 1) as f64 / s.rate;
    let out_len = (duration * dst_rate + 1e-9).floor() as usize + 1;
    let values = (0..out_len)
        .map(|j| {
            let pos = j as f64 / dst_rate * s.rate;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            if hi == lo || w <= 0.0 {
                s.values[lo]
            } else {
                s.values[lo] * (1.0 - w) + s.values[hi] * w
            }
        })
        .collect();
    Series::new(dst_rate, values)
}

const SIXD_EPS: f64 = 1e-8;

/// Gram-Schmidt on every 6-value block `(a, b)` of every frame: `a` is
/// normalized, `b` loses its component along `a` and is normalized.
pub fn orthonormalize_sixd(motion: &MotionSequence) -> Result<MotionSequence> {
    let dim = motion.dim();
    if !dim.is_multiple_of(6) {
        return Err(Error::InvalidInput(format!(
            "dimension {dim} is not a multiple of 6"
        )));
    }
    let mut out = motion.frames().clone();
    for (frame, mut row) in out.outer_iter_mut().enumerate() {
        let slice = row.as_slice_mut().expect("standard layout");
        for (joint, block) in slice.chunks_exact_mut(6).enumerate() {
            let degenerate = Error::DegenerateRotation { frame, joint };
            let (a, b) = block.split_at_mut(3);
            let na = norm3(a);
            if na < SIXD_EPS {
                return Err(degenerate);
            }
            a.iter_mut().for_each(|x| *x /= na);
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            b.iter_mut().zip(a.iter()).for_each(|(y, x)| *y -= dot * x);
            let nb = norm3(b);
            if nb < SIXD_EPS {
                return Err(degenerate);
            }
            b.iter_mut().for_each(|y| *y /= nb);
        }
    }
    MotionSequence::new(motion.fps(), out)
}

fn norm3(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: &[Vec<f64>]) -> MotionSequence {
        MotionSequence::from_rows(20.0, rows).unwrap()
    }

    #[test]
    fn constant_pose_has_zero_speed() {
        let rows = vec![vec![0.3; 12]; 10];
        let v = velocity_magnitudes(&seq(&rows)).unwrap();
        assert_eq!(v.values, vec![0.0; 9]);
        assert_eq!(v.rate, 20.0);
    }

    #[test]
    fn three_four_five() {
        let mut a = vec![0.0; BODY_DIM];
        let mut b = vec![0.0; BODY_DIM];
        a[0] = 0.0;
        b[0] = 3.0;
        b[1] = 4.0;
        let v = velocity_magnitudes(&seq(&[a, b])).unwrap();
        assert_eq!(v.values, vec![5.0]);
    }

    #[test]
    fn velocity_matches_diff_and_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let v = velocity_magnitudes(&seq(&rows)).unwrap();
        for t in 0..19 {
            let mut acc = 0.0;
            for d in 0..7 {
                let diff = rows[t + 1][d] - rows[t][d];
                acc += diff * diff;
            }
            assert!((v.values[t] - acc.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_is_an_error() {
        let err = velocity_magnitudes(&seq(&[vec![1.0, 2.0]])).unwrap_err();
        assert!(err.to_string().contains("insufficient frames"));
    }

    #[test]
    fn non_finite_rejected_at_construction() {
        let err = MotionSequence::from_rows(20.0, &[vec![1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let s = Series::new(7.0, vec![1.0, 4.0, 2.0]).unwrap();
        assert_eq!(resample_series(&s, 7.0).unwrap(), s);
        let s = Series::new(1.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(resample_series(&s, 2.0).unwrap().values, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn resample_ramp_matches_dense_oracle() {
        let src: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = Series::new(50.0, src.clone()).unwrap();
        let out = resample_series(&s, 20.0).unwrap();
        assert_eq!(out.len(), 41);
        for (j, v) in out.values.iter().enumerate() {
            // Oracle: locate the bracketing source samples by scanning times.
            let t = j as f64 / 20.0;
            let mut expected = *src.last().unwrap();
            for i in 0..src.len() - 1 {
                let (t0, t1) = (i as f64 / 50.0, (i + 1) as f64 / 50.0);
                if t >= t0 - 1e-12 && t < t1 - 1e-12 {
                    let w = (t - t0) / (t1 - t0);
                    expected = src[i] + w * (src[i + 1] - src[i]);
                    break;
                }
            }
            assert!((v - expected).abs() < 1e-9, "row {j}: {v} vs {expected}");
        }
    }

    #[test]
    fn resample_empty_errors() {
        let s = Series::new(10.0, vec![]).unwrap();
        assert!(resample_series(&s, 5.0).is_err());
    }

    #[test]
    fn sixd_examples() {
        let run = |block: [f64; 6]| {
            let m = seq(&[block.to_vec()]);
            orthonormalize_sixd(&m).unwrap().frame(0).to_vec()
        };
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(run([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), id);
        assert_eq!(run([2.0, 0.0, 0.0, 0.0, 3.0, 0.0]), id);
        assert_eq!(run([1.0, 0.0, 0.0, 1.0, 1.0, 0.0]), id);
    }

    #[test]
    fn sixd_degenerate_blocks_report_location() {
        let good = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let parallel = [1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let rows = vec![
            [good, good].concat(),
            [good, parallel].concat(),
        ];
        let err = orthonormalize_sixd(&seq(&rows)).unwrap_err();
        assert!(matches!(err, Error::DegenerateRotation { frame: 1, joint: 1 }));
        let zero = seq(&[vec![0.0; 6]]);
        assert!(orthonormalize_sixd(&zero).is_err());
        assert!(orthonormalize_sixd(&seq(&[vec![1.0; 5]])).is_err());
    }

    #[test]
    fn turn_duration_agreement() {
        let audio = AudioClip::silence(16_000, 16_000).unwrap();
        let ok = MotionSequence::new(20.0, Array2::zeros((21, 3))).unwrap();
        assert!(DialogueTurn::new("", "wave", "hi", audio.clone(), ok, None).is_ok());
        let bad = MotionSequence::new(20.0, Array2::zeros((25, 3))).unwrap();
        assert!(DialogueTurn::new("", "wave", "hi", audio, bad, None).is_err());
    }

    proptest! {
        #[test]
        fn speeds_are_non_negative(vals in proptest::collection::vec(-5.0f64..5.0, 12..60)) {
            let rows: Vec<Vec<f64>> = vals.chunks_exact(3).map(|c| c.to_vec()).collect();
            let v = velocity_magnitudes(&seq(&rows)).unwrap();
            prop_assert!(v.values.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn resample_is_exact_on_affine(a in -3.0f64..3.0, b in -3.0f64..3.0,
                                       n in 2usize..200, src in 1.0f64..100.0, dst in 1.0f64..100.0) {
            let s = Series::new(src, (0..n).map(|i| a + b * i as f64 / src).collect()).unwrap();
            let out = resample_series(&s, dst).unwrap();
            for (j, v) in out.values.iter().enumerate() {
                let t = j as f64 / dst;
                prop_assert!((v - (a + b * t)).abs() <= 1e-9);
            }
        }

        #[test]
        fn sixd_is_idempotent(vals in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let m = seq(&[vals]);
            if let Ok(once) = orthonormalize_sixd(&m) {
                let twice = orthonormalize_sixd(&once).unwrap();
                for (x, y) in once.frames().iter().zip(twice.frames().iter()) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}
