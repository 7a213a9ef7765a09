//! Nearest-neighbour slot scorer over a stored window index.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::binio::{verify_trailing_hash, ByteReader, ByteWriter};
use crate::plan::infill::{InfillWindow, SlotPrediction, SlotScorer};
use crate::rvq::{TokenGroup, UnifiedVocab};

pub const DEFAULT_K_NN: usize = 8;
pub const DEFAULT_LAMBDA: f64 = 1.0;

const INDEX_MAGIC: &[u8; 4] = b"SAIX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k_nn: usize,
    /// Weight of the audio term.
    pub lambda: f64,
    /// Per-layer weight of a token mismatch.
    pub layer_weights: Vec<f64>,
}

/// Coarse layer dominates: 8 for layer 0, 1 for layer 1, 0.25 beyond. A
/// layer-0 mismatch is a large pose difference while fine-layer codes mostly
/// disagree over noise.
pub fn default_layer_weights(n_layers: usize) -> Vec<f64> {
    (0..n_layers).map(|l| [8.0, 1.0].get(l).copied().unwrap_or(0.25)).collect()
}

impl RetrievalConfig {
    pub fn new(n_layers: usize) -> Self {
        Self {
            k_nn: DEFAULT_K_NN,
            lambda: DEFAULT_LAMBDA,
            layer_weights: default_layer_weights(n_layers),
        }
    }

    fn validate(&self, n_layers: usize) -> Result<()> {
        if self.k_nn == 0 {
            return Err(Error::InvalidInput("k_nn must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.layer_weights.len() != n_layers || self.layer_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("need one non-negative weight per layer".into()));
        }
        Ok(())
    }
}

/// A training window with its ground-truth interior.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredWindow {
    pub left: Option<TokenGroup>,
    pub right: Option<TokenGroup>,
    pub interior: Vec<TokenGroup>,
    /// One row per position, like [`InfillWindow::audio`].
    pub audio: Array2<f64>,
}

impl StoredWindow {
    fn n_positions(&self) -> usize {
        self.left.is_some() as usize + self.interior.len() + self.right.is_some() as usize
    }
}

/// Stored windows with audio rows standardized per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowIndex {
    vocab: UnifiedVocab,
    config: RetrievalConfig,
    mean: Vec<f64>,
    scale: Vec<f64>,
    windows: Vec<StoredWindow>,
}

impl WindowIndex {
    pub fn build(windows: Vec<StoredWindow>, vocab: UnifiedVocab, config: RetrievalConfig) -> Result<Self> {
        config.validate(vocab.n_layers)?;
        let first = windows.first().ok_or_else(|| Error::InvalidInput("window index is empty".into()))?;
        let f = first.audio.ncols();
        for w in &windows {
            if w.audio.ncols() != f {
                return Err(Error::DimensionMismatch { expected: f, got: w.audio.ncols() });
            }
            if w.audio.nrows() != w.n_positions() {
                return Err(Error::DimensionMismatch {
                    expected: w.n_positions(),
                    got: w.audio.nrows(),
                });
            }
            for g in w.left.iter().chain(w.right.iter()).chain(w.interior.iter()) {
                g.validate(vocab.n_layers, vocab.codes_per_layer)?;
            }
        }
        let views: Vec<_> = windows.iter().map(|w| w.audio.view()).collect();
        let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mean: Vec<f64> = pooled.mean_axis(Axis(0)).expect("rows").iter().map(|v| *v as f32 as f64).collect();
        let scale: Vec<f64> = pooled
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|s| if *s < 1e-8 { 1.0 } else { *s as f32 as f64 })
            .collect();
        let mut windows = windows;
        for w in &mut windows {
            w.audio.mapv_inplace(|v| v as f32 as f64);
            standardize(&mut w.audio, &mean, &scale);
        }
        Ok(Self {
            vocab,
            config,
            mean,
            scale,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn vocab(&self) -> &UnifiedVocab {
        &self.vocab
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn with_config(mut self, config: RetrievalConfig) -> Result<Self> {
        config.validate(self.vocab.n_layers)?;
        self.config = config;
        Ok(self)
    }

    pub fn audio_dim(&self) -> usize {
        self.mean.len()
    }

    fn mismatch(&self, a: &TokenGroup, b: &TokenGroup) -> f64 {
        a.residuals()
            .iter()
            .zip(b.residuals())
            .zip(&self.config.layer_weights)
            .filter(|((x, y), _)| x != y)
            .map(|(_, w)| w)
            .sum()
    }

    /// Distance from a (standardized) query to stored window `i`, or `None`
    /// when the shapes are incompatible.
    fn distance(&self, q: &InfillWindow, q_audio: &Array2<f64>, i: usize) -> Option<f64> {
        let w = &self.windows[i];
        if q.left.is_some() != w.left.is_some() || q.slots.len() > w.interior.len() {
            return None;
        }
        // A query without a right boundary compares against a prefix.
        if q.right.is_some() && (w.right.is_none() || q.slots.len() != w.interior.len()) {
            return None;
        }
        let mut tokens = 0.0;
        if let (Some(a), Some(b)) = (&q.left, &w.left) {
            tokens += self.mismatch(a, b);
        }
        if let (Some(a), Some(b)) = (&q.right, &w.right) {
            tokens += self.mismatch(a, b);
        }
        for (s, known) in q.slots.iter().enumerate() {
            if let Some(g) = known {
                tokens += self.mismatch(g, &w.interior[s]);
            }
        }
        let mut sq = 0.0;
        let lead = q.left.is_some() as usize;
        let n_rows = lead + q.slots.len();
        for r in 0..n_rows {
            sq += sq_row(q_audio.row(r), w.audio.row(r));
        }
        if q.right.is_some() {
            sq += sq_row(q_audio.row(n_rows), w.audio.row(w.audio.nrows() - 1));
        }
        let compared = (q_audio.nrows() * q_audio.ncols()).max(1) as f64;
        Some(tokens + self.config.lambda * (sq / compared).sqrt())
    }

    fn standardized(&self, audio: &Array2<f64>) -> Result<Array2<f64>> {
        if audio.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: audio.ncols(),
            });
        }
        let mut a = audio.mapv(|v| v as f32 as f64);
        standardize(&mut a, &self.mean, &self.scale);
        Ok(a)
    }

    /// The `k_nn` nearest stored windows as `(index, distance)`, ties by index.
    pub fn neighbours(&self, q: &InfillWindow) -> Result<Vec<(usize, f64)>> {
        q.validate()?;
        let qa = self.standardized(&q.audio)?;
        let mut d: Vec<(usize, f64)> = (0..self.windows.len())
            .filter_map(|i| self.distance(q, &qa, i).map(|d| (i, d)))
            .collect();
        if d.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no stored window is compatible with a query of {} slots",
                q.slots.len()
            )));
        }
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(self.config.k_nn);
        Ok(d)
    }

    pub fn window(&self, i: usize) -> &StoredWindow {
        &self.windows[i]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.u32(self.vocab.n_layers as u32);
        w.u32(self.vocab.codes_per_layer as u32);
        w.u32(self.config.k_nn as u32);
        w.f64(self.config.lambda);
        for lw in &self.config.layer_weights {
            w.f64(*lw);
        }
        w.u32(self.mean.len() as u32);
        for v in self.mean.iter().chain(&self.scale) {
            w.f32(*v as f32);
        }
        w.u32(self.windows.len() as u32);
        let group = |w: &mut ByteWriter, g: &TokenGroup| g.residuals().iter().for_each(|r| w.u16(*r));
        for sw in &self.windows {
            w.u8(sw.left.is_some() as u8 | (sw.right.is_some() as u8) << 1);
            w.u32(sw.interior.len() as u32);
            for g in sw.left.iter().chain(sw.interior.iter()).chain(sw.right.iter()) {
                group(&mut w, g);
            }
            // Stored rows are standardized; write the raw values back out.
            for row in sw.audio.outer_iter() {
                for (j, v) in row.iter().enumerate() {
                    w.f32((v * self.scale[j] + self.mean[j]) as f32);
                }
            }
        }
        w.finish_with_hash().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut head = ByteReader::new(bytes);
        head.magic(INDEX_MAGIC)?;
        let version = head.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (payload, _) = verify_trailing_hash(bytes)?;
        let mut r = ByteReader::new(payload);
        r.take(8)?;
        let n_layers = r.u32()? as usize;
        let k = r.u32()? as usize;
        let vocab = UnifiedVocab {
            codes_per_layer: k,
            n_layers,
        };
        let k_nn = r.u32()? as usize;
        let lambda = r.f64()?;
        let layer_weights = (0..n_layers).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let f = r.count(8)?;
        let mean = (0..f).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let scale = (0..f).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let n = r.count(5)?;
        let mut windows = Vec::with_capacity(n);
        for _ in 0..n {
            let flags = r.u8()?;
            let m = r.count(2 * n_layers)?;
            let mut read = || -> Result<TokenGroup> {
                Ok(TokenGroup::new((0..n_layers).map(|_| r.u16()).collect::<Result<Vec<_>>>()?))
            };
            let left = if flags & 1 != 0 { Some(read()?) } else { None };
            let interior = (0..m).map(|_| read()).collect::<Result<Vec<_>>>()?;
            let right = if flags & 2 != 0 { Some(read()?) } else { None };
            let rows = (flags & 1) as usize + m + ((flags >> 1) & 1) as usize;
            let vals = (0..rows * f).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            let mut audio = Array2::from_shape_vec((rows, f), vals).map_err(|e| Error::InvalidInput(e.to_string()))?;
            standardize(&mut audio, &mean, &scale);
            windows.push(StoredWindow {
                left,
                right,
                interior,
                audio,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.offset(),
                message: "trailing bytes in window index".into(),
            });
        }
        let config = RetrievalConfig {
            k_nn,
            lambda,
            layer_weights,
        };
        config.validate(n_layers)?;
        if windows.is_empty() {
            return Err(Error::InvalidInput("window index is empty".into()));
        }
        for w in &windows {
            for g in w.left.iter().chain(w.right.iter()).chain(w.interior.iter()) {
                g.validate(n_layers, k)?;
            }
        }
        Ok(Self {
            vocab,
            config,
            mean,
            scale,
            windows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn standardize(a: &mut Array2<f64>, mean: &[f64], scale: &[f64]) {
    for mut row in a.outer_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
}

fn sq_row(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scores masked slots by votes of the nearest stored windows. Exact
/// matches (distance 0) vote alone with equal weight; otherwise each
/// neighbour votes `1 / distance`. Confidence is the top vote share.
#[derive(Debug, Clone)]
pub struct RetrievalScorer<'a> {
    index: &'a WindowIndex,
}

impl<'a> RetrievalScorer<'a> {
    pub fn new(index: &'a WindowIndex) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::InvalidInput("window index is empty".into()));
        }
        Ok(Self { index })
    }
}

impl SlotScorer for RetrievalScorer<'_> {
    fn score(&self, window: &InfillWindow) -> Result<Vec<SlotPrediction>> {
        let nn = self.index.neighbours(window)?;
        let exact = nn[0].1 == 0.0;
        let voters: Vec<(usize, f64)> = nn
            .into_iter()
            .filter(|(_, d)| !exact || *d == 0.0)
            .map(|(i, d)| (i, if exact { 1.0 } else { 1.0 / d }))
            .collect();
        let total: f64 = voters.iter().map(|(_, w)| w).sum();
        Ok(window
            .masked()
            .into_iter()
            .map(|slot| {
                let mut votes: BTreeMap<&TokenGroup, f64> = BTreeMap::new();
                for (i, w) in &voters {
                    *votes.entry(&self.index.windows[*i].interior[slot]).or_default() += w / total;
                }
                let candidates: Vec<(TokenGroup, f64)> = votes.into_iter().map(|(g, p)| (g.clone(), p)).collect();
                let confidence = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
                SlotPrediction {
                    slot,
                    candidates,
                    confidence,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::infill::infill_window;
    use crate::synth::planted_windows;

    fn to_stored(p: &crate::synth::PlantedWindow) -> StoredWindow {
        StoredWindow {
            left: Some(p.left.clone()),
            right: Some(p.right.clone()),
            interior: p.interior.clone(),
            audio: p.audio.clone(),
        }
    }

    fn query(s: &StoredWindow) -> InfillWindow {
        InfillWindow {
            left: s.left.clone(),
            right: s.right.clone(),
            slots: vec![None; s.interior.len()],
            audio: s.audio.clone(),
        }
    }

    fn index(n: usize, k_nn: usize) -> (WindowIndex, Vec<StoredWindow>) {
        let raw: Vec<StoredWindow> = planted_windows(n, 4, 5, 4, 6, 1).iter().map(to_stored).collect();
        let mut cfg = RetrievalConfig::new(4);
        cfg.k_nn = k_nn;
        (WindowIndex::build(raw.clone(), UnifiedVocab::BODY, cfg).unwrap(), raw)
    }

    #[test]
    fn exact_query_returns_stored_interior() {
        let (idx, raw) = index(40, 4);
        let scorer = RetrievalScorer::new(&idx).unwrap();
        let q = query(&raw[7]);
        let preds = scorer.score(&q).unwrap();
        assert!(preds.iter().all(|p| p.confidence == 1.0));
        let (filled, _) = infill_window(&q, &scorer, 6, &UnifiedVocab::BODY).unwrap();
        assert_eq!(filled, raw[7].interior);
    }

    #[test]
    fn single_neighbour_is_copied() {
        let (idx, raw) = index(60, 1);
        let scorer = RetrievalScorer::new(&idx).unwrap();
        let mut q = query(&raw[3]);
        q.audio.mapv_inplace(|v| v + 0.01);
        let nn = idx.neighbours(&q).unwrap();
        assert_eq!(nn.len(), 1);
        let (filled, _) = infill_window(&q, &scorer, 6, &UnifiedVocab::BODY).unwrap();
        assert_eq!(filled, idx.window(nn[0].0).interior);
    }

    #[test]
    fn terminal_query_uses_prefix() {
        let (idx, raw) = index(40, 3);
        let scorer = RetrievalScorer::new(&idx).unwrap();
        let s = &raw[5];
        let q = InfillWindow {
            left: s.left.clone(),
            right: None,
            slots: vec![None; 2],
            audio: s.audio.slice(ndarray::s![0..3, ..]).to_owned(),
        };
        let preds = scorer.score(&q).unwrap();
        assert_eq!(preds.len(), 2);
    }

    #[test]
    fn empty_index_is_an_error() {
        assert!(WindowIndex::build(vec![], UnifiedVocab::BODY, RetrievalConfig::new(4)).is_err());
    }

    #[test]
    fn bytes_roundtrip() {
        let (idx, _) = index(20, 3);
        let back = WindowIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), idx.to_bytes());
        for (a, b) in back.windows.iter().zip(&idx.windows) {
            assert_eq!(a.interior, b.interior);
            for (x, y) in a.audio.iter().zip(b.audio.iter()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
