//! Model bundle, end-to-end training and single-turn generation.

use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::motion::{AudioClip, BlendshapeSequence, DialogueTurn, MotionSequence};
use crate::plan::audio::{audio_features, AudioFeatures, AudioQuantizer, DEFAULT_AUDIO_CODES};
use crate::plan::infill::{infill_window, InfillWindow, SlotScorer, WindowTrace, REFINEMENT_STEPS};
use crate::plan::planner::{Decoding, PlanTrace, PlannerModel, DEFAULT_ALPHA, DEFAULT_ORDER};
use crate::plan::retrieval::{default_layer_weights, RetrievalConfig, StoredWindow, WindowIndex, DEFAULT_K_NN, DEFAULT_LAMBDA};
use crate::plan::session::Session;
use crate::plan::vocab::{example_from_tokens, PlannerVocab};
use crate::rvq::{train_codec, RvqCodec, TokenGroup, TokenizedMotion, BODY_LAYERS, CODES_PER_LAYER, FACE_LAYERS};

pub const DEFAULT_T: usize = 4;

pub const BODY_CODEC_FILE: &str = "body.codec";
pub const FACE_CODEC_FILE: &str = "face.codec";
pub const AUDIO_QUANT_FILE: &str = "audio.quant";
pub const PLANNER_FILE: &str = "planner.bin";
pub const BODY_INDEX_FILE: &str = "body.index";
pub const FACE_INDEX_FILE: &str = "face.index";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub t: usize,
    pub body_layers: usize,
    pub face_layers: usize,
    pub codes_per_layer: usize,
    pub audio_codes: usize,
    pub order: usize,
    pub alpha: f64,
    pub k_nn: usize,
    pub lambda: f64,
    /// Step between stored index windows.
    pub index_stride: usize,
    pub seed: u64,
    pub mel: MelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_T,
            body_layers: BODY_LAYERS,
            face_layers: FACE_LAYERS,
            codes_per_layer: CODES_PER_LAYER,
            audio_codes: DEFAULT_AUDIO_CODES,
            order: DEFAULT_ORDER,
            alpha: DEFAULT_ALPHA,
            k_nn: DEFAULT_K_NN,
            lambda: DEFAULT_LAMBDA,
            index_stride: 1,
            seed: 0,
            mel: MelConfig::default(),
        }
    }
}

/// Everything generation needs. Immutable once built.
#[derive(Debug, Clone)]
pub struct Models {
    pub body_codec: RvqCodec,
    pub face_codec: RvqCodec,
    pub audio: AudioQuantizer,
    pub planner: PlannerModel,
    pub body_index: WindowIndex,
    pub face_index: WindowIndex,
}

impl Models {
    pub fn t(&self) -> usize {
        self.planner.vocab().t
    }

    pub fn mel(&self) -> &MelConfig {
        &self.audio.mel
    }

    /// Checks that the parts agree on vocabularies and feature widths.
    pub fn validate(&self) -> Result<()> {
        let mismatch = |what: &str| Err(Error::InvalidInput(format!("incompatible models: {what}")));
        if self.planner.vocab().motion != self.body_codec.vocab() {
            return mismatch("planner and body codec vocabularies differ");
        }
        if self.planner.vocab().audio_size != self.audio.k() {
            return mismatch("planner audio vocabulary differs from the audio quantizer");
        }
        if *self.body_index.vocab() != self.body_codec.vocab() {
            return mismatch("body index and body codec vocabularies differ");
        }
        if *self.face_index.vocab() != self.face_codec.vocab() {
            return mismatch("face index and face codec vocabularies differ");
        }
        let f = self.audio.codebook.dim();
        if self.body_index.audio_dim() != f || self.face_index.audio_dim() != f {
            return mismatch("index audio width differs from the audio features");
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.body_codec.save(&dir.join(BODY_CODEC_FILE))?;
        self.face_codec.save(&dir.join(FACE_CODEC_FILE))?;
        self.audio.save(&dir.join(AUDIO_QUANT_FILE))?;
        self.planner.save(&dir.join(PLANNER_FILE))?;
        self.body_index.save(&dir.join(BODY_INDEX_FILE))?;
        self.face_index.save(&dir.join(FACE_INDEX_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = Self {
            body_codec: RvqCodec::load(&dir.join(BODY_CODEC_FILE))?,
            face_codec: RvqCodec::load(&dir.join(FACE_CODEC_FILE))?,
            audio: AudioQuantizer::load(&dir.join(AUDIO_QUANT_FILE))?,
            planner: PlannerModel::load(&dir.join(PLANNER_FILE))?,
            body_index: WindowIndex::load(&dir.join(BODY_INDEX_FILE))?,
            face_index: WindowIndex::load(&dir.join(FACE_INDEX_FILE))?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Interpolation windows `(g[s], g[s+1..s+t], g[s+t])` every `stride` steps.
pub fn body_windows(groups: &[TokenGroup], step_rows: &Array2<f64>, t: usize, stride: usize) -> Vec<StoredWindow> {
    let n = groups.len().min(step_rows.nrows());
    if n < t + 1 {
        return Vec::new();
    }
    (0..n - t)
        .step_by(stride.max(1))
        .map(|s| StoredWindow {
            left: Some(groups[s].clone()),
            right: Some(groups[s + t].clone()),
            interior: groups[s + 1..s + t].to_vec(),
            audio: step_rows.slice(s![s..=s + t, ..]).to_owned(),
        })
        .collect()
}

/// Boundary-free chunks of `t` groups every `stride` steps.
pub fn face_windows(groups: &[TokenGroup], step_rows: &Array2<f64>, t: usize, stride: usize) -> Vec<StoredWindow> {
    let n = groups.len().min(step_rows.nrows());
    if n < t {
        return Vec::new();
    }
    (0..=n - t)
        .step_by(stride.max(1))
        .map(|s| StoredWindow {
            left: None,
            right: None,
            interior: groups[s..s + t].to_vec(),
            audio: step_rows.slice(s![s..s + t, ..]).to_owned(),
        })
        .collect()
}

fn corpus_features(turns: &[DialogueTurn], mel: &MelConfig) -> Result<Vec<AudioFeatures>> {
    turns.par_iter().map(|t| audio_features(&t.audio, mel)).collect()
}

fn face_tracks(turns: &[DialogueTurn]) -> Result<Vec<MotionSequence>> {
    turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.face
                .as_ref()
                .map(|f| f.as_motion().clone())
                .ok_or_else(|| Error::InvalidInput(format!("turn {i} has no face track")))
        })
        .collect()
}

fn fit_planner(
    turns: &[DialogueTurn],
    feats: &[AudioFeatures],
    body_codec: &RvqCodec,
    cfg: &TrainConfig,
) -> Result<(AudioQuantizer, PlannerModel)> {
    let audio = AudioQuantizer::train(feats, cfg.audio_codes, cfg.seed.wrapping_add(2), cfg.mel)?;
    let examples = turns
        .par_iter()
        .zip(feats)
        .map(|(turn, f)| {
            let body = body_codec.encode(&turn.motion)?;
            example_from_tokens(&turn.action_label, &body.groups, &audio.assign(f)?, cfg.t, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab = PlannerVocab::new(body_codec.vocab(), audio.k(), cfg.t)?;
    let planner = PlannerModel::fit(&examples, vocab, cfg.order, cfg.alpha, cfg.seed)?;
    Ok((audio, planner))
}

fn fit_indices(
    turns: &[DialogueTurn],
    faces: &[MotionSequence],
    feats: &[AudioFeatures],
    body_codec: &RvqCodec,
    face_codec: &RvqCodec,
    cfg: &TrainConfig,
) -> Result<(WindowIndex, WindowIndex)> {
    let mut body_stored = Vec::new();
    let mut face_stored = Vec::new();
    for ((turn, face), f) in turns.iter().zip(faces).zip(feats) {
        let body = body_codec.encode(&turn.motion)?;
        let face = face_codec.encode(face)?;
        let rows = f.step_rows();
        body_stored.extend(body_windows(&body.groups, &rows, cfg.t, cfg.index_stride));
        face_stored.extend(face_windows(&face.groups, &rows, cfg.t, cfg.index_stride));
    }
    let retrieval = |n_layers| RetrievalConfig {
        k_nn: cfg.k_nn,
        lambda: cfg.lambda,
        layer_weights: default_layer_weights(n_layers),
    };
    let body_index = WindowIndex::build(body_stored, body_codec.vocab(), retrieval(body_codec.n_layers()))?;
    let face_index = WindowIndex::build(face_stored, face_codec.vocab(), retrieval(face_codec.n_layers()))?;
    Ok((body_index, face_index))
}

/// Audio quantizer and keyframe planner for an already trained body codec.
pub fn train_planner(turns: &[DialogueTurn], body_codec: &RvqCodec, cfg: &TrainConfig) -> Result<(AudioQuantizer, PlannerModel)> {
    if turns.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    fit_planner(turns, &corpus_features(turns, &cfg.mel)?, body_codec, cfg)
}

/// Body and face retrieval indices for already trained codecs.
pub fn train_indices(
    turns: &[DialogueTurn],
    body_codec: &RvqCodec,
    face_codec: &RvqCodec,
    cfg: &TrainConfig,
) -> Result<(WindowIndex, WindowIndex)> {
    if turns.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    PlannerVocab::new(body_codec.vocab(), 1, cfg.t)?;
    let faces = face_tracks(turns)?;
    fit_indices(turns, &faces, &corpus_features(turns, &cfg.mel)?, body_codec, face_codec, cfg)
}

/// Trains every model on a corpus of turns, each of which needs a face track.
pub fn train_all(turns: &[DialogueTurn], cfg: &TrainConfig) -> Result<Models> {
    if turns.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    // Reject a bad keyframe step before any training work.
    PlannerVocab::new(crate::rvq::UnifiedVocab::BODY, cfg.audio_codes.max(1), cfg.t)?;
    let faces = face_tracks(turns)?;
    let motions: Vec<MotionSequence> = turns.iter().map(|t| t.motion.clone()).collect();
    let (body_codec, _) = train_codec(&motions, cfg.body_layers, cfg.codes_per_layer, cfg.seed)?;
    let (face_codec, _) = train_codec(&faces, cfg.face_layers, cfg.codes_per_layer, cfg.seed.wrapping_add(1))?;

    let feats = corpus_features(turns, &cfg.mel)?;
    let (audio, planner) = fit_planner(turns, &feats, &body_codec, cfg)?;
    let (body_index, face_index) = fit_indices(turns, &faces, &feats, &body_codec, &face_codec, cfg)?;
    let models = Models {
        body_codec,
        face_codec,
        audio,
        planner,
        body_index,
        face_index,
    };
    models.validate()?;
    Ok(models)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateConfig {
    pub refinement_steps: usize,
    pub decoding: Decoding,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            refinement_steps: REFINEMENT_STEPS,
            decoding: Decoding::Greedy,
        }
    }
}

/// One body interpolation window as run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    /// Token step of the left boundary, relative to the turn start. Negative
    /// when the boundary comes from the previous turn.
    pub start: isize,
    pub left: Option<TokenGroup>,
    pub right: Option<TokenGroup>,
    pub accepted_per_round: Vec<usize>,
    pub accepted_slots: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub features: f64,
    pub plan: f64,
    pub body_infill: f64,
    pub body_decode: f64,
    pub face: f64,
    pub total: f64,
    /// Wall time over audio duration.
    pub realtime_factor: f64,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub motion: MotionSequence,
    pub face: BlendshapeSequence,
    pub body_tokens: TokenizedMotion,
    pub face_tokens: TokenizedMotion,
    pub keyframes: Vec<TokenGroup>,
    pub keyframe_steps: Vec<usize>,
    /// Continuation pairs the planner was given.
    pub prefix: Option<Vec<(u32, TokenGroup)>>,
    pub plan: Option<PlanTrace>,
    pub windows: Vec<WindowRecord>,
    pub face_windows: Vec<WindowTrace>,
    pub timings_ms: Timings,
}

#[derive(Serialize)]
struct RoundsOnly<'a> {
    accepted_per_round: &'a [usize],
}

#[derive(Serialize)]
struct TraceJson<'a> {
    keyframes: &'a [TokenGroup],
    keyframe_steps: &'a [usize],
    prefix: &'a Option<Vec<(u32, TokenGroup)>>,
    windows: &'a [WindowRecord],
    face_windows: Vec<RoundsOnly<'a>>,
    timings_ms: &'a Timings,
}

impl GenerationResult {
    pub fn trace_json(&self) -> serde_json::Value {
        let t = TraceJson {
            keyframes: &self.keyframes,
            keyframe_steps: &self.keyframe_steps,
            prefix: &self.prefix,
            windows: &self.windows,
            face_windows: self
                .face_windows
                .iter()
                .map(|w| RoundsOnly {
                    accepted_per_round: &w.accepted_per_round,
                })
                .collect(),
            timings_ms: &self.timings_ms,
        };
        serde_json::to_value(t).expect("trace serializes")
    }

    /// Hex SHA-256 over everything except timings.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.motion, self.face.as_motion()] {
            h.update((m.len() as u64).to_le_bytes());
            for v in m.frames().iter() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        for g in self.body_tokens.groups.iter().chain(&self.face_tokens.groups).chain(&self.keyframes) {
            for r in g.residuals() {
                h.update(r.to_le_bytes());
            }
        }
        let json = serde_json::to_string(&(&self.windows, &self.prefix, &self.keyframe_steps)).expect("serializable");
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Runs every window, in parallel, keeping input order.
pub(crate) fn fill_windows(
    windows: &[InfillWindow],
    scorer: &dyn SlotScorer,
    steps: usize,
    vocab: &crate::rvq::UnifiedVocab,
) -> Result<Vec<(Vec<TokenGroup>, WindowTrace)>> {
    windows.par_iter().map(|w| infill_window(w, scorer, steps, vocab)).collect()
}

/// Continuous audio rows and their dense tokens for one clip.
pub(crate) fn clip_features(models: &Models, clip: &AudioClip) -> Result<(AudioFeatures, Vec<u32>)> {
    let f = audio_features(clip, models.mel())?;
    if f.is_empty() {
        return Err(Error::InsufficientFrames { needed: 1, got: 0 });
    }
    let dense = models.audio.assign(&f)?;
    Ok((f, dense))
}

/// Generates one turn without conversational history.
pub fn generate_turn(models: &Models, label: &str, clip: &AudioClip, cfg: &GenerateConfig) -> Result<GenerationResult> {
    Session::open(models, *cfg)?.push_turn(label, clip)
}
