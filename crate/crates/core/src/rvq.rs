//! Residual vector quantization codecs for body motion and face tracks.
//!
//! Frames are averaged in pairs (2x temporal downsampling), standardized per
//! dimension, and quantized by a stack of codebooks where each layer encodes
//! what the previous layers left over. A timestep becomes a [`TokenGroup`]
//! holding one raw index per layer; the unified vocabulary offsets layer `k`
//! indices by `K * (k - 1)`.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dsp::kmeans::{kmeans_fit, Codebook};
use crate::error::{Error, Result};
use crate::io::binio::{verify_trailing_hash, ByteReader, ByteWriter};
use crate::motion::MotionSequence;

pub const BODY_LAYERS: usize = 4;
pub const FACE_LAYERS: usize = 2;
pub const CODES_PER_LAYER: usize = 512;
pub const TEMPORAL_FACTOR: usize = 2;

const CODEC_MAGIC: &[u8; 4] = b"SAVQ";
const CODEC_VERSION: u32 = 1;
const MIN_SCALE: f64 = 1e-8;

/// One raw index per quantizer layer for a single downsampled timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenGroup(SmallVec<[u16; 4]>);

impl TokenGroup {
    pub fn new(residuals: impl IntoIterator<Item = u16>) -> Self {
        Self(residuals.into_iter().collect())
    }

    pub fn residuals(&self) -> &[u16] {
        &self.0
    }

    pub fn n_layers(&self) -> usize {
        self.0.len()
    }

    /// Unified ids, layer by layer.
    pub fn unified_ids(&self, codes_per_layer: usize) -> Vec<u32> {
        self.0
            .iter()
            .enumerate()
            .map(|(layer, &r)| r as u32 + (codes_per_layer * layer) as u32)
            .collect()
    }

    pub fn from_unified_ids(ids: &[u32], vocab: &UnifiedVocab) -> Result<Self> {
        if ids.len() != vocab.n_layers {
            return Err(Error::OutOfRange(format!(
                "group has {} ids, expected {}",
                ids.len(),
                vocab.n_layers
            )));
        }
        let mut out = SmallVec::new();
        for (i, &id) in ids.iter().enumerate() {
            let (layer, r) = vocab.from_unified_id(id)?;
            if layer != i + 1 {
                return Err(Error::OutOfRange(format!(
                    "id {id} belongs to layer {layer}, expected layer {}",
                    i + 1
                )));
            }
            out.push(r as u16);
        }
        Ok(Self(out))
    }

    /// Number of layers where the two groups disagree.
    pub fn mismatches(&self, other: &TokenGroup) -> usize {
        self.0.iter().zip(other.0.iter()).filter(|(a, b)| a != b).count()
            + self.0.len().abs_diff(other.0.len())
    }

    pub fn validate(&self, n_layers: usize, codes_per_layer: usize) -> Result<()> {
        if self.0.len() != n_layers {
            return Err(Error::OutOfRange(format!(
                "token group has {} entries, expected {n_layers}",
                self.0.len()
            )));
        }
        if let Some(r) = self.0.iter().find(|&&r| r as usize >= codes_per_layer) {
            return Err(Error::OutOfRange(format!(
                "raw index {r} is not below {codes_per_layer}"
            )));
        }
        Ok(())
    }
}

/// Layer-offset id space of size `codes_per_layer * n_layers`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedVocab {
    pub codes_per_layer: usize,
    pub n_layers: usize,
}

impl UnifiedVocab {
    pub const BODY: UnifiedVocab = UnifiedVocab {
        codes_per_layer: CODES_PER_LAYER,
        n_layers: BODY_LAYERS,
    };
    pub const FACE: UnifiedVocab = UnifiedVocab {
        codes_per_layer: CODES_PER_LAYER,
        n_layers: FACE_LAYERS,
    };

    pub fn size(&self) -> usize {
        self.codes_per_layer * self.n_layers
    }

    /// `id = r + K * (layer - 1)` for a 1-based `layer`.
    pub fn to_unified_id(&self, layer: usize, r: u32) -> Result<u32> {
        if layer == 0 || layer > self.n_layers {
            return Err(Error::OutOfRange(format!(
                "layer {layer} is outside 1..={}",
                self.n_layers
            )));
        }
        if r as usize >= self.codes_per_layer {
            return Err(Error::OutOfRange(format!(
                "raw index {r} is not below {}",
                self.codes_per_layer
            )));
        }
        Ok(r + (self.codes_per_layer * (layer - 1)) as u32)
    }

    /// Inverse of [`Self::to_unified_id`]: `(layer, raw index)`.
    pub fn from_unified_id(&self, id: u32) -> Result<(usize, u32)> {
        if id as usize >= self.size() {
            return Err(Error::OutOfRange(format!(
                "unified id {id} is not below {}",
                self.size()
            )));
        }
        let k = self.codes_per_layer as u32;
        Ok(((id / k) as usize + 1, id % k))
    }
}

/// Token groups for one sequence plus the identity of the codec that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedMotion {
    pub codec_id: String,
    pub source_fps: f64,
    /// Source frame count; odd counts mean the final step covers a single frame.
    pub n_frames: usize,
    pub groups: Vec<TokenGroup>,
}

impl TokenizedMotion {
    pub fn odd_tail(&self) -> bool {
        self.n_frames % 2 == 1
    }
}

/// Statistics gathered while training a codec, in standardized feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared norm of the residual left after each layer.
    pub layer_residual_energy: Vec<f64>,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodec {
    layers: Vec<Codebook>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    id: String,
}

/// Averages adjacent frame pairs; an odd final frame stands alone.
pub fn downsample_pairs(frames: &Array2<f64>) -> Array2<f64> {
    let (t, d) = frames.dim();
    let steps = t.div_ceil(TEMPORAL_FACTOR);
    let mut out = Array2::zeros((steps, d));
    for s in 0..steps {
        let a = frames.row(2 * s);
        let mut row = out.row_mut(s);
        if 2 * s + 1 < t {
            let b = frames.row(2 * s + 1);
            for j in 0..d {
                row[j] = 0.5 * (a[j] + b[j]);
            }
        } else {
            row.assign(&a);
        }
    }
    out
}

/// Doubles the frame rate while preserving every pair mean: each step
/// becomes two frames offset by a quarter of the step's central-difference
/// slope. A final odd step maps to one frame equal to the step value.
pub fn upsample_pairs(steps: &Array2<f64>, n_frames: usize) -> Result<Array2<f64>> {
    let (s, d) = steps.dim();
    if n_frames != 2 * s && !(n_frames + 1 == 2 * s) {
        return Err(Error::InvalidInput(format!(
            "{n_frames} frames cannot come from {s} steps"
        )));
    }
    let mut out = Array2::zeros((n_frames, d));
    for i in 0..s {
        let (lo, hi, span) = match (i.checked_sub(1), (i + 1 < s).then_some(i + 1)) {
            (Some(a), Some(b)) => (a, b, 2.0),
            (None, Some(b)) => (i, b, 1.0),
            (Some(a), None) => (a, i, 1.0),
            (None, None) => (i, i, 1.0),
        };
        let v = steps.row(i);
        if 2 * i + 1 < n_frames {
            for j in 0..d {
                let slope = (steps[[hi, j]] - steps[[lo, j]]) / span;
                out[[2 * i, j]] = v[j] - 0.25 * slope;
                out[[2 * i + 1, j]] = v[j] + 0.25 * slope;
            }
        } else {
            out.row_mut(2 * i).assign(&v);
        }
    }
    Ok(out)
}

impl RvqCodec {
    /// Builds a codec from parts, rounding every parameter to single
    /// precision so the in-memory codec equals its serialized form.
    pub fn from_parts(layers: Vec<Codebook>, mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidInput("codec needs at least one layer".into()))?;
        let (k, d) = (first.k(), first.dim());
        if layers.iter().any(|l| l.k() != k || l.dim() != d) {
            return Err(Error::InvalidInput("layers must share K and D".into()));
        }
        if k > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!("K = {k} does not fit 16-bit indices")));
        }
        if mean.len() != d || scale.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mean.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput("scales must be positive".into()));
        }
        let mut layers = layers;
        layers.iter_mut().for_each(Codebook::round_to_f32);
        let round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
        let mut codec = Self {
            layers,
            mean: round(mean),
            scale: round(scale),
            id: String::new(),
        };
        codec.id = hex::encode(codec.serialize().1);
        Ok(codec)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn codes_per_layer(&self) -> usize {
        self.layers[0].k()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn temporal_factor(&self) -> usize {
        TEMPORAL_FACTOR
    }

    pub fn vocab(&self) -> UnifiedVocab {
        UnifiedVocab {
            codes_per_layer: self.codes_per_layer(),
            n_layers: self.n_layers(),
        }
    }

    /// Hex SHA-256 of the serialized codec.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layer(&self, i: usize) -> &Codebook {
        &self.layers[i]
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn check_dim(&self, m: &MotionSequence) -> Result<()> {
        if m.dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: m.dim(),
            });
        }
        Ok(())
    }

    /// Standardized, downsampled features (`ceil(T/2) x D`).
    pub fn features(&self, motion: &MotionSequence) -> Result<Array2<f64>> {
        self.check_dim(motion)?;
        let mut f = downsample_pairs(motion.frames());
        for mut row in f.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(f)
    }

    /// Greedy residual descent: each layer takes the centroid nearest to what is left.
    pub fn quantize(&self, features: &Array2<f64>) -> Vec<TokenGroup> {
        let mut residual = vec![0.0; self.feature_dim()];
        features
            .outer_iter()
            .map(|row| {
                residual.iter_mut().zip(row.iter()).for_each(|(r, v)| *r = *v);
                TokenGroup(
                    self.layers
                        .iter()
                        .map(|cb| {
                            let (j, _) = cb.nearest(&residual);
                            for (r, c) in residual.iter_mut().zip(cb.centroid(j).iter()) {
                                *r -= c;
                            }
                            j as u16
                        })
                        .collect(),
                )
            })
            .collect()
    }

    /// Sum of the selected centroids from the first `n_layers` layers.
    pub fn reconstruct(&self, groups: &[TokenGroup], n_layers: usize) -> Result<Array2<f64>> {
        let d = self.feature_dim();
        let mut out = Array2::zeros((groups.len(), d));
        for (g, mut row) in groups.iter().zip(out.outer_iter_mut()) {
            g.validate(self.n_layers(), self.codes_per_layer())?;
            for (layer, &r) in g.residuals().iter().enumerate().take(n_layers) {
                row += &self.layers[layer].centroid(r as usize);
            }
        }
        Ok(out)
    }

    pub fn encode(&self, motion: &MotionSequence) -> Result<TokenizedMotion> {
        let features = self.features(motion)?;
        Ok(TokenizedMotion {
            codec_id: self.id.clone(),
            source_fps: motion.fps(),
            n_frames: motion.len(),
            groups: self.quantize(&features),
        })
    }

    pub fn decode(&self, tokens: &TokenizedMotion) -> Result<MotionSequence> {
        self.decode_layers(tokens, self.n_layers())
    }

    /// Decodes using only the first `n_layers` quantizer layers.
    pub fn decode_layers(&self, tokens: &TokenizedMotion, n_layers: usize) -> Result<MotionSequence> {
        if tokens.codec_id != self.id {
            return Err(Error::CodecMismatch {
                expected: tokens.codec_id.clone(),
                got: self.id.clone(),
            });
        }
        if tokens.groups.is_empty() {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        let mut steps = self.reconstruct(&tokens.groups, n_layers)?;
        for mut row in steps.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        let frames = upsample_pairs(&steps, tokens.n_frames)?;
        MotionSequence::new(tokens.source_fps, frames)
    }

    /// Time-mean of the standardized downsampled features.
    pub fn latent_features(&self, motion: &MotionSequence) -> Result<Vec<f64>> {
        let f = self.features(motion)?;
        Ok(f.mean_axis(Axis(0)).expect("at least one step").to_vec())
    }

    /// Serialized bytes (including trailing digest) and the digest.
    pub fn serialize(&self) -> (Vec<u8>, [u8; 32]) {
        let mut w = ByteWriter::new();
        w.bytes(CODEC_MAGIC);
        w.u32(CODEC_VERSION);
        w.u32(self.n_layers() as u32);
        w.u32(self.codes_per_layer() as u32);
        w.u32(self.feature_dim() as u32);
        w.u32(TEMPORAL_FACTOR as u32);
        for v in self.mean.iter().chain(self.scale.iter()) {
            w.f32(*v as f32);
        }
        for layer in &self.layers {
            for v in layer.vectors().iter() {
                w.f32(*v as f32);
            }
        }
        w.finish_with_hash()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.serialize().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut head = ByteReader::new(bytes);
        head.magic(CODEC_MAGIC)?;
        let version = head.u32()?;
        if version != CODEC_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (payload, _) = verify_trailing_hash(bytes)?;
        let mut r = ByteReader::new(payload);
        r.take(8)?;
        let n_layers = r.u32()? as usize;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let factor = r.u32()? as usize;
        if factor != TEMPORAL_FACTOR {
            return Err(Error::Format {
                offset: 20,
                message: format!("temporal factor {factor} is not supported"),
            });
        }
        let expected = (2 * d + n_layers * k * d) * 4;
        if r.remaining() != expected {
            return Err(Error::Truncated {
                offset: r.offset(),
                needed: expected,
                len: payload.len(),
            });
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| r.f32().map(f64::from)).collect()
        };
        let mean = read_vec(d)?;
        let scale = read_vec(d)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let v = Array2::from_shape_vec((k, d), read_vec(k * d)?)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            layers.push(Codebook::new(v)?);
        }
        Self::from_parts(layers, mean, scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Trains a codec on pooled, standardized, downsampled frames: layer 1 runs
/// k-means on the features, layer `j` on what layers `< j` leave behind.
pub fn train_codec(
    corpus: &[MotionSequence],
    n_layers: usize,
    k: usize,
    seed: u64,
) -> Result<(RvqCodec, TrainReport)> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("training corpus is empty".into()))?;
    if n_layers == 0 {
        return Err(Error::InvalidInput("need at least one layer".into()));
    }
    let d = first.dim();
    let mut parts = Vec::with_capacity(corpus.len());
    for m in corpus {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m.dim(),
            });
        }
        parts.push(downsample_pairs(m.frames()));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = pooled.nrows();
    if n < k {
        return Err(Error::InsufficientFrames { needed: k, got: n });
    }
    let mean: Array1<f64> = pooled.mean_axis(Axis(0)).expect("non-empty");
    let scale: Vec<f64> = pooled
        .std_axis(Axis(0), 0.0)
        .iter()
        .map(|s| if *s < MIN_SCALE { 1.0 } else { *s })
        .collect();
    let mean: Vec<f64> = mean.iter().map(|m| *m as f32 as f64).collect();
    let scale: Vec<f64> = scale.iter().map(|s| *s as f32 as f64).collect();

    let mut residual = pooled;
    for mut row in residual.outer_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - m) / s;
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut energy = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let mut cb = kmeans_fit(residual.view(), k, seed.wrapping_add(layer as u64))?;
        cb.round_to_f32();
        let mut total = 0.0;
        for mut row in residual.outer_iter_mut() {
            let slice = row.as_slice_mut().expect("standard layout");
            let (j, _) = cb.nearest(slice);
            for (r, c) in slice.iter_mut().zip(cb.centroid(j).iter()) {
                *r -= c;
            }
            total += slice.iter().map(|v| v * v).sum::<f64>();
        }
        energy.push(total / n as f64);
        layers.push(cb);
    }
    let codec = RvqCodec::from_parts(layers, mean, scale)?;
    Ok((
        codec,
        TrainReport {
            layer_residual_energy: energy,
            n_features: n,
        },
    ))
}
