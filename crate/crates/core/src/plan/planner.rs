//! Count-based autoregressive keyframe planner.
//!
//! Next-group counts are keyed by (label class, up to `order` previous
//! keyframe groups, aligned audio token). Unseen contexts back off to shorter
//! histories, then to the label class alone, then to a flagged uniform.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::binio::{verify_trailing_hash, ByteReader, ByteWriter};
use crate::plan::vocab::{PlannerExample, PlannerVocab};
use crate::rvq::{TokenGroup, UnifiedVocab};

pub const DEFAULT_ORDER: usize = 2;
pub const DEFAULT_ALPHA: f64 = 0.1;

const PLANNER_MAGIC: &[u8; 4] = b"SAPL";
const PLANNER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ContextKey {
    class: u32,
    audio: Option<u32>,
    history: Vec<TokenGroup>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Counts {
    total: u64,
    /// Target index -> count.
    by_target: BTreeMap<u32, u64>,
}

/// Which table produced a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackoffLevel {
    /// Class, audio token and this many previous groups.
    History(usize),
    LabelOnly,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NextDistribution {
    /// Probability per target group, in target order.
    pub probs: Vec<(TokenGroup, f64)>,
    pub level: BackoffLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// Argmax; ties go to the lowest group.
    Greedy,
    Sample(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub history: Vec<TokenGroup>,
    pub level: BackoffLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub class: u32,
    /// The label was unseen and the default class was used.
    pub label_fallback: bool,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerModel {
    vocab: PlannerVocab,
    order: usize,
    alpha: f64,
    seed: u64,
    labels: Vec<String>,
    label_counts: Vec<u64>,
    default_class: u32,
    targets: Vec<TokenGroup>,
    target_index: HashMap<TokenGroup, u32>,
    tables: HashMap<ContextKey, Counts>,
}

fn keys_for(class: u32, audio: u32, history: &[TokenGroup], order: usize) -> impl Iterator<Item = ContextKey> + '_ {
    let h = history.len().min(order);
    (0..=h)
        .rev()
        .map(move |n| ContextKey {
            class,
            audio: Some(audio),
            history: history[history.len() - n..].to_vec(),
        })
        .chain(std::iter::once(ContextKey {
            class,
            audio: None,
            history: Vec::new(),
        }))
}

impl PlannerModel {
    /// Fits counts on every keyframe of every example. `seed` is kept as the
    /// model's default sampling seed; counting itself is deterministic.
    pub fn fit(examples: &[PlannerExample], vocab: PlannerVocab, order: usize, alpha: f64, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidInput("planner needs at least one example".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be non-negative, got {alpha}")));
        }
        let mut label_tally: BTreeMap<&str, u64> = BTreeMap::new();
        let mut target_set = std::collections::BTreeSet::new();
        for ex in examples {
            *label_tally.entry(ex.label.as_str()).or_default() += 1;
            if ex.audio.len() != ex.keyframes.len() {
                return Err(Error::DimensionMismatch {
                    expected: ex.keyframes.len(),
                    got: ex.audio.len(),
                });
            }
            for g in ex.keyframes.iter().chain(ex.prefix.iter().map(|(_, g)| g)) {
                g.validate(vocab.motion.n_layers, vocab.motion.codes_per_layer)?;
            }
            for a in ex.audio.iter().chain(ex.prefix.iter().map(|(a, _)| a)) {
                if *a as usize >= vocab.audio_size {
                    return Err(Error::OutOfRange(format!("audio token {a} is not below {}", vocab.audio_size)));
                }
            }
            target_set.extend(ex.keyframes.iter().cloned());
        }
        let labels: Vec<String> = label_tally.keys().map(|s| s.to_string()).collect();
        let label_counts: Vec<u64> = label_tally.values().copied().collect();
        let default_class = (0..label_counts.len())
            .max_by(|a, b| label_counts[*a].cmp(&label_counts[*b]).then(b.cmp(a)))
            .unwrap_or(0) as u32;
        let targets: Vec<TokenGroup> = target_set.into_iter().collect();
        let target_index: HashMap<TokenGroup, u32> =
            targets.iter().enumerate().map(|(i, g)| (g.clone(), i as u32)).collect();
        let mut tables: HashMap<ContextKey, Counts> = HashMap::new();
        for ex in examples {
            let class = labels.binary_search(&ex.label).expect("label collected above") as u32;
            let mut history: Vec<TokenGroup> = ex.prefix.iter().map(|(_, g)| g.clone()).collect();
            for (g, a) in ex.keyframes.iter().zip(&ex.audio) {
                let idx = target_index[g];
                for key in keys_for(class, *a, &history, order) {
                    let c = tables.entry(key).or_default();
                    c.total += 1;
                    *c.by_target.entry(idx).or_default() += 1;
                }
                history.push(g.clone());
            }
        }
        Ok(Self {
            vocab,
            order,
            alpha,
            seed,
            labels,
            label_counts,
            default_class,
            targets,
            target_index,
            tables,
        })
    }

    pub fn vocab(&self) -> &PlannerVocab {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn targets(&self) -> &[TokenGroup] {
        &self.targets
    }

    /// Class id for a label, or the most frequent class with the fallback flag set.
    pub fn label_class(&self, label: &str) -> (u32, bool) {
        match self.labels.binary_search_by(|l| l.as_str().cmp(label)) {
            Ok(i) => (i as u32, false),
            Err(_) => {
                log::warn!("unknown label {label:?}; planning with {:?}", self.labels[self.default_class as usize]);
                (self.default_class, true)
            }
        }
    }

    fn lookup(&self, class: u32, audio: u32, history: &[TokenGroup]) -> (Option<&Counts>, BackoffLevel) {
        for key in keys_for(class, audio, history, self.order) {
            if let Some(c) = self.tables.get(&key) {
                if c.total > 0 {
                    let level = match key.audio {
                        Some(_) => BackoffLevel::History(key.history.len()),
                        None => BackoffLevel::LabelOnly,
                    };
                    return (Some(c), level);
                }
            }
        }
        (None, BackoffLevel::Uniform)
    }

    /// Laplace-smoothed `P(next | class, history, audio)` over all target groups.
    pub fn distribution(&self, class: u32, history: &[TokenGroup], audio: u32) -> NextDistribution {
        let v = self.targets.len() as f64;
        let (counts, level) = self.lookup(class, audio, history);
        let probs = match counts {
            Some(c) => {
                let denom = c.total as f64 + self.alpha * v;
                self.targets
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let n = c.by_target.get(&(i as u32)).copied().unwrap_or(0) as f64;
                        (g.clone(), (n + self.alpha) / denom)
                    })
                    .collect()
            }
            None => self.targets.iter().map(|g| (g.clone(), 1.0 / v)).collect(),
        };
        NextDistribution { probs, level }
    }

    fn choose(&self, counts: Option<&Counts>, decoding: Decoding, rng: &mut Option<ChaCha8Rng>) -> u32 {
        let n_targets = self.targets.len() as u32;
        match (decoding, counts) {
            (Decoding::Greedy, Some(c)) => {
                let mut best = (0u32, 0u64);
                for (&i, &n) in &c.by_target {
                    if n > best.1 {
                        best = (i, n);
                    }
                }
                best.0
            }
            (Decoding::Greedy, None) => 0,
            (Decoding::Sample(_), counts) => {
                let rng = rng.as_mut().expect("sampling rng");
                let (total, smooth) = match counts {
                    Some(c) => (c.total as f64, self.alpha * n_targets as f64),
                    None => (0.0, 1.0),
                };
                let u: f64 = rng.random::<f64>() * (total + smooth);
                if let (Some(c), true) = (counts, u < total) {
                    let mut acc = 0.0;
                    for (&i, &n) in &c.by_target {
                        acc += n as f64;
                        if u < acc {
                            return i;
                        }
                    }
                    *c.by_target.keys().next_back().expect("non-empty counts")
                } else {
                    rng.random_range(0..n_targets)
                }
            }
        }
    }

    /// One keyframe group per audio token. A continuation prefix of exactly
    /// two `(audio, group)` pairs seeds the history.
    pub fn plan_keyframes(
        &self,
        label: &str,
        audio: &[u32],
        prefix: Option<&[(u32, TokenGroup)]>,
        decoding: Decoding,
    ) -> Result<(Vec<TokenGroup>, PlanTrace)> {
        if audio.is_empty() {
            return Err(Error::InvalidInput("planning needs at least one audio token".into()));
        }
        if let Some(p) = prefix {
            if p.len() != 2 {
                return Err(Error::InvalidInput(format!(
                    "continuation prefix must hold exactly 2 pairs, got {}",
                    p.len()
                )));
            }
        }
        if let Some(a) = audio.iter().find(|a| **a as usize >= self.vocab.audio_size) {
            return Err(Error::OutOfRange(format!("audio token {a} is not below {}", self.vocab.audio_size)));
        }
        let (class, label_fallback) = self.label_class(label);
        let mut history: Vec<TokenGroup> = prefix.unwrap_or(&[]).iter().map(|(_, g)| g.clone()).collect();
        let mut rng = match decoding {
            Decoding::Sample(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };
        let mut out = Vec::with_capacity(audio.len());
        let mut steps = Vec::with_capacity(audio.len());
        for &a in audio {
            let (counts, level) = self.lookup(class, a, &history);
            let ctx_len = match level {
                BackoffLevel::History(n) => n,
                _ => 0,
            };
            steps.push(PlanStep {
                history: history[history.len().saturating_sub(self.order.max(ctx_len))..].to_vec(),
                level,
            });
            let g = self.targets[self.choose(counts, decoding, &mut rng) as usize].clone();
            history.push(g.clone());
            out.push(g);
        }
        Ok((
            out,
            PlanTrace {
                class,
                label_fallback,
                steps,
            },
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(PLANNER_MAGIC);
        w.u32(PLANNER_VERSION);
        w.u32(self.vocab.t as u32);
        w.u32(self.vocab.motion.n_layers as u32);
        w.u32(self.vocab.motion.codes_per_layer as u32);
        w.u32(self.vocab.audio_size as u32);
        w.u32(self.order as u32);
        w.f64(self.alpha);
        w.u64(self.seed);
        w.u32(self.labels.len() as u32);
        for (l, c) in self.labels.iter().zip(&self.label_counts) {
            w.str(l);
            w.u64(*c);
        }
        w.u32(self.default_class);
        let write_group = |w: &mut ByteWriter, g: &TokenGroup| g.residuals().iter().for_each(|r| w.u16(*r));
        w.u32(self.targets.len() as u32);
        for g in &self.targets {
            write_group(&mut w, g);
        }
        let mut keys: Vec<&ContextKey> = self.tables.keys().collect();
        keys.sort();
        w.u32(keys.len() as u32);
        for key in keys {
            let c = &self.tables[key];
            w.u32(key.class);
            w.u8(key.audio.is_some() as u8);
            w.u32(key.audio.unwrap_or(0));
            w.u32(key.history.len() as u32);
            for g in &key.history {
                write_group(&mut w, g);
            }
            w.u32(c.by_target.len() as u32);
            for (i, n) in &c.by_target {
                w.u32(*i);
                w.u64(*n);
            }
        }
        w.finish_with_hash().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut head = ByteReader::new(bytes);
        head.magic(PLANNER_MAGIC)?;
        let version = head.u32()?;
        if version != PLANNER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (payload, _) = verify_trailing_hash(bytes)?;
        let mut r = ByteReader::new(payload);
        r.take(8)?;
        let t = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        let k = r.u32()? as usize;
        let audio_size = r.u32()? as usize;
        let vocab = PlannerVocab::new(
            UnifiedVocab {
                codes_per_layer: k,
                n_layers,
            },
            audio_size,
            t,
        )?;
        let order = r.u32()? as usize;
        let alpha = r.f64()?;
        let seed = r.u64()?;
        let n_labels = r.count(12)?;
        let mut labels = Vec::with_capacity(n_labels);
        let mut label_counts = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            labels.push(r.str()?);
            label_counts.push(r.u64()?);
        }
        let default_class = r.u32()?;
        let read_group = |r: &mut ByteReader| -> Result<TokenGroup> {
            let g = TokenGroup::new((0..n_layers).map(|_| r.u16()).collect::<Result<Vec<_>>>()?);
            g.validate(n_layers, k)?;
            Ok(g)
        };
        let n_targets = r.count(2 * n_layers)?;
        let targets = (0..n_targets).map(|_| read_group(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_keys = r.count(17)?;
        let mut tables = HashMap::with_capacity(n_keys);
        for _ in 0..n_keys {
            let class = r.u32()?;
            let has_audio = r.u8()? != 0;
            let audio = r.u32()?;
            let h = r.count(2 * n_layers)?;
            let history = (0..h).map(|_| read_group(&mut r)).collect::<Result<Vec<_>>>()?;
            let n = r.count(12)?;
            let mut c = Counts::default();
            for _ in 0..n {
                let at = r.offset();
                let i = r.u32()?;
                if i as usize >= targets.len() {
                    return Err(Error::Format {
                        offset: at,
                        message: format!("target index {i} out of range"),
                    });
                }
                let v = r.u64()?;
                c.total += v;
                c.by_target.insert(i, v);
            }
            tables.insert(
                ContextKey {
                    class,
                    audio: has_audio.then_some(audio),
                    history,
                },
                c,
            );
        }
        if r.remaining() != 0 || labels.is_empty() || default_class as usize >= labels.len() {
            return Err(Error::Format {
                offset: r.offset(),
                message: "inconsistent planner payload".into(),
            });
        }
        let target_index = targets.iter().enumerate().map(|(i, g)| (g.clone(), i as u32)).collect();
        Ok(Self {
            vocab,
            order,
            alpha,
            seed,
            labels,
            label_counts,
            default_class,
            targets,
            target_index,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Index of `g` among the target groups.
    pub fn target_id(&self, g: &TokenGroup) -> Option<u32> {
        self.target_index.get(g).copied()
    }
}
