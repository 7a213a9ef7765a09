//! Continuous audio rows at the motion frame rate and their k-means tokens.

use std::path::Path;

use ndarray::{Array2, Axis};

use crate::dsp::{kmeans_assign, kmeans_fit, onset_strength, Codebook, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::io::binio::{verify_trailing_hash, ByteReader, ByteWriter};
use crate::motion::{resample_series, AudioClip, Series, MOTION_FPS};
use crate::rvq::downsample_pairs;

/// Rows per second of the continuous audio features.
pub const AUDIO_FEATURE_RATE: f64 = MOTION_FPS;
pub const DEFAULT_AUDIO_CODES: usize = 64;

/// Neighbouring onset rows stacked on each side of a feature row. Covers the
/// span of a beat gesture so a single sparse token can locate the beat.
pub const ONSET_CONTEXT: usize = 6;

pub fn feature_dim(n_mels: usize) -> usize {
    n_mels + 1 + 2 * ONSET_CONTEXT
}

const QUANT_MAGIC: &[u8; 4] = b"SAAQ";
const QUANT_VERSION: u32 = 1;

/// One row per motion frame: log-compressed mel bands, onset strength, then
/// onset strength at offsets `-1, +1, -2, +2, ...` out to [`ONSET_CONTEXT`]
/// rows (zero past the clip edges).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatures {
    pub rows: Array2<f64>,
}

impl AudioFeatures {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows averaged in pairs onto the token-step grid.
    pub fn step_rows(&self) -> Array2<f64> {
        downsample_pairs(&self.rows)
    }
}

/// Max of a series over each destination period centred on the destination
/// sample. Keeps one-frame onset spikes that linear interpolation can skip.
fn max_pool(s: &Series, dst_rate: f64, out_len: usize) -> Vec<f64> {
    let ratio = s.rate / dst_rate;
    (0..out_len)
        .map(|r| {
            let c = r as f64 * ratio;
            let lo = (c - ratio / 2.0).ceil().max(0.0) as usize;
            let hi = ((c + ratio / 2.0).floor() as usize).min(s.len() - 1);
            s.values[lo.min(hi)..=hi].iter().copied().fold(0.0, f64::max)
        })
        .collect()
}

/// Continuous features for a clip, truncated to the clip's motion frame count.
pub fn audio_features(clip: &AudioClip, cfg: &MelConfig) -> Result<AudioFeatures> {
    let mel = MelSpectrogram::new(*cfg)?.compute(clip)?;
    features_from_mel(&mel, cfg, clip.frame_count(AUDIO_FEATURE_RATE))
}

fn features_from_mel(mel: &Array2<f64>, cfg: &MelConfig, n_rows: usize) -> Result<AudioFeatures> {
    let rate = cfg.frame_rate();
    let onset = if mel.nrows() >= 2 {
        onset_strength(mel, rate)?
    } else {
        Series::new(rate, vec![0.0; mel.nrows()])?
    };
    let n_bands = mel.ncols();
    let mut rows = Array2::zeros((n_rows, feature_dim(n_bands)));
    for (b, col) in mel.axis_iter(Axis(1)).enumerate() {
        let s = Series::new(rate, col.iter().map(|v| v.ln_1p()).collect())?;
        let r = resample_series(&s, AUDIO_FEATURE_RATE)?;
        for i in 0..n_rows {
            rows[[i, b]] = r.values[i.min(r.len() - 1)];
        }
    }
    let pooled = max_pool(&onset, AUDIO_FEATURE_RATE, n_rows);
    let at = |r: isize| if r < 0 { 0.0 } else { pooled.get(r as usize).copied().unwrap_or(0.0) };
    for r in 0..n_rows {
        rows[[r, n_bands]] = pooled[r];
        for d in 1..=ONSET_CONTEXT {
            let c = n_bands + 2 * d - 1;
            rows[[r, c]] = at(r as isize - d as isize);
            rows[[r, c + 1]] = at((r + d) as isize);
        }
    }
    Ok(AudioFeatures { rows })
}

/// k-means quantizer over continuous feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioQuantizer {
    pub mel: MelConfig,
    pub codebook: Codebook,
}

impl AudioQuantizer {
    pub fn train(features: &[AudioFeatures], k: usize, seed: u64, mel: MelConfig) -> Result<Self> {
        let views: Vec<_> = features.iter().map(|f| f.rows.view()).collect();
        if views.is_empty() {
            return Err(Error::InvalidInput("no audio features to quantize".into()));
        }
        let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut codebook = kmeans_fit(pooled.view(), k, seed)?;
        codebook.round_to_f32();
        Ok(Self { mel, codebook })
    }

    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    /// Token per feature row.
    pub fn assign(&self, features: &AudioFeatures) -> Result<Vec<u32>> {
        Ok(kmeans_assign(&self.codebook, features.rows.view())?
            .into_iter()
            .map(|i| i as u32)
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(QUANT_MAGIC);
        w.u32(QUANT_VERSION);
        let m = &self.mel;
        for v in [m.sample_rate as u64, m.n_fft as u64, m.hop as u64, m.n_mels as u64] {
            w.u64(v);
        }
        w.f64(m.fmin);
        w.f64(m.fmax);
        w.u32(self.codebook.k() as u32);
        w.u32(self.codebook.dim() as u32);
        for v in self.codebook.vectors().iter() {
            w.f32(*v as f32);
        }
        w.finish_with_hash().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut head = ByteReader::new(bytes);
        head.magic(QUANT_MAGIC)?;
        let version = head.u32()?;
        if version != QUANT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (payload, _) = verify_trailing_hash(bytes)?;
        let mut r = ByteReader::new(payload);
        r.take(8)?;
        let mel = MelConfig {
            sample_rate: r.u64()? as u32,
            n_fft: r.u64()? as usize,
            hop: r.u64()? as usize,
            n_mels: r.u64()? as usize,
            fmin: r.f64()?,
            fmax: r.f64()?,
        };
        mel.validate()?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        if r.remaining() != k * d * 4 {
            return Err(Error::Truncated {
                offset: r.offset(),
                needed: k * d * 4,
                len: payload.len(),
            });
        }
        let v: Vec<f64> = (0..k * d).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        let codebook = Codebook::new(Array2::from_shape_vec((k, d), v).map_err(|e| Error::InvalidInput(e.to_string()))?)?;
        Ok(Self { mel, codebook })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Every `stride`-th entry starting at 0.
pub fn subsample(dense: &[u32], stride: usize) -> Vec<u32> {
    dense.iter().step_by(stride.max(1)).copied().collect()
}

/// Continuous features, nearest-centroid token per row, then rows `0, stride, 2*stride, ...`.
pub fn audio_tokens(clip: &AudioClip, quantizer: &Codebook, stride: usize, cfg: &MelConfig) -> Result<Vec<u32>> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".into()));
    }
    let f = audio_features(clip, cfg)?;
    let dense = kmeans_assign(quantizer, f.rows.view())?;
    Ok(subsample(&dense.into_iter().map(|i| i as u32).collect::<Vec<_>>(), stride))
}
