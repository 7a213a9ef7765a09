//! Multi-turn streaming generation. Each turn continues the previous one:
//! the planner sees the last two keyframe pairs and the first window starts
//! from the last keyframe already emitted.

use std::time::Instant;

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::motion::{AudioClip, BlendshapeSequence, MOTION_FPS};
use crate::plan::infill::{InfillWindow, WindowTrace};
use crate::plan::pipeline::{clip_features, fill_windows, GenerateConfig, GenerationResult, Models, Timings, WindowRecord};
use crate::plan::planner::Decoding;
use crate::plan::retrieval::RetrievalScorer;
use crate::rvq::{TokenGroup, TokenizedMotion};
use crate::synth::derive_seed;

#[derive(Debug, Clone)]
struct Context {
    last_key: TokenGroup,
    last_row: Array1<f64>,
    /// Groups after the last keyframe, with their audio rows.
    tail: Vec<(TokenGroup, Array1<f64>)>,
    /// Most recent `(audio, keyframe)` pairs, at most two.
    pairs: Vec<(u32, TokenGroup)>,
}

#[derive(Debug)]
pub struct Session<'m> {
    models: &'m Models,
    cfg: GenerateConfig,
    ctx: Option<Context>,
    turns: u64,
    closed: bool,
}

fn stack(rows: &[Array1<f64>], dim: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), dim));
    for (mut dst, r) in a.outer_iter_mut().zip(rows) {
        dst.assign(r);
    }
    a
}

impl<'m> Session<'m> {
    pub fn open(models: &'m Models, cfg: GenerateConfig) -> Result<Self> {
        models.validate()?;
        if cfg.refinement_steps == 0 {
            return Err(Error::InvalidInput("need at least one refinement round".into()));
        }
        Ok(Self {
            models,
            cfg,
            ctx: None,
            turns: 0,
            closed: false,
        })
    }

    pub fn turns(&self) -> u64 {
        self.turns
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Generates the next turn. State only changes when the turn succeeds.
    pub fn push_turn(&mut self, label: &str, clip: &AudioClip) -> Result<GenerationResult> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let started = Instant::now();
        let models = self.models;
        let t = models.t();
        let steps = self.cfg.refinement_steps;
        let mut timings = Timings::default();

        let (feats, dense) = clip_features(models, clip)?;
        let rows = feats.step_rows();
        let n = rows.nrows();
        let dim = rows.ncols();
        timings.features = ms(started);

        let decoding = match self.cfg.decoding {
            Decoding::Sample(seed) => Decoding::Sample(derive_seed(seed, self.turns)),
            greedy => greedy,
        };
        let ctx = self.ctx.as_ref();

        let body = || -> Result<_> {
            let t0 = Instant::now();
            let offset = ctx.map_or(0, |c| t - 1 - c.tail.len());
            let key_steps: Vec<usize> = (offset..n).step_by(t).collect();
            let audio_toks: Vec<u32> = key_steps.iter().map(|s| dense[2 * s]).collect();
            let prefix = ctx.filter(|c| c.pairs.len() == 2).map(|c| c.pairs.clone());
            let (keyframes, plan) = if key_steps.is_empty() {
                (Vec::new(), None)
            } else {
                let (k, tr) = models.planner.plan_keyframes(label, &audio_toks, prefix.as_deref(), decoding)?;
                (k, Some(tr))
            };
            let plan_ms = ms(t0);

            let t1 = Instant::now();
            let mut groups: Vec<Option<TokenGroup>> = vec![None; n];
            for (s, k) in key_steps.iter().zip(&keyframes) {
                groups[*s] = Some(k.clone());
            }
            // (window, local step of its first slot, left boundary step)
            let mut windows: Vec<(InfillWindow, isize, isize)> = Vec::new();
            if let Some(c) = ctx {
                let fresh = key_steps.first().copied().unwrap_or(n);
                let mut audio_rows = vec![c.last_row.clone()];
                audio_rows.extend(c.tail.iter().map(|(_, r)| r.clone()));
                audio_rows.extend((0..fresh).map(|i| rows.row(i).to_owned()));
                let right = keyframes.first().cloned();
                if right.is_some() {
                    audio_rows.push(rows.row(fresh).to_owned());
                }
                let mut slots: Vec<Option<TokenGroup>> = c.tail.iter().map(|(g, _)| Some(g.clone())).collect();
                slots.extend(std::iter::repeat_n(None, fresh));
                let back = c.tail.len() as isize;
                windows.push((
                    InfillWindow {
                        left: Some(c.last_key.clone()),
                        right,
                        slots,
                        audio: stack(&audio_rows, dim),
                    },
                    -back,
                    -back - 1,
                ));
            }
            for (j, &s) in key_steps.iter().enumerate() {
                let end = key_steps.get(j + 1).copied();
                let last = end.unwrap_or(n);
                if end.is_none() && s + 1 >= n {
                    break;
                }
                let rows_end = end.map_or(n, |e| e + 1);
                windows.push((
                    InfillWindow {
                        left: Some(keyframes[j].clone()),
                        right: end.map(|_| keyframes[j + 1].clone()),
                        slots: vec![None; last - s - 1],
                        audio: rows.slice(s![s..rows_end, ..]).to_owned(),
                    },
                    s as isize + 1,
                    s as isize,
                ));
            }
            let scorer = RetrievalScorer::new(&models.body_index)?;
            let just_windows: Vec<InfillWindow> = windows.iter().map(|w| w.0.clone()).collect();
            let filled = fill_windows(&just_windows, &scorer, steps, models.body_index.vocab())?;
            let mut records = Vec::with_capacity(windows.len());
            for ((w, first, start), (interior, trace)) in windows.into_iter().zip(filled) {
                for (i, g) in interior.into_iter().enumerate() {
                    let step = first + i as isize;
                    if step >= 0 {
                        groups[step as usize] = Some(g);
                    }
                }
                records.push(WindowRecord {
                    start,
                    left: w.left,
                    right: w.right,
                    accepted_per_round: trace.accepted_per_round,
                    accepted_slots: trace.accepted_slots,
                });
            }
            let groups: Vec<TokenGroup> = groups
                .into_iter()
                .map(|g| g.expect("every step lies in a window or on a keyframe"))
                .collect();
            let infill_ms = ms(t1);

            let t2 = Instant::now();
            let tokens = TokenizedMotion {
                codec_id: models.body_codec.id().to_string(),
                source_fps: MOTION_FPS,
                n_frames: feats.len(),
                groups,
            };
            let motion = models.body_codec.decode(&tokens)?;
            Ok((motion, tokens, keyframes, key_steps, audio_toks, prefix, plan, records, (plan_ms, infill_ms, ms(t2))))
        };

        let face = || -> Result<_> {
            let t0 = Instant::now();
            let chunks: Vec<InfillWindow> = (0..n)
                .step_by(t)
                .map(|s0| {
                    let e = (s0 + t).min(n);
                    InfillWindow {
                        left: None,
                        right: None,
                        slots: vec![None; e - s0],
                        audio: rows.slice(s![s0..e, ..]).to_owned(),
                    }
                })
                .collect();
            let scorer = RetrievalScorer::new(&models.face_index)?;
            let filled = fill_windows(&chunks, &scorer, steps, models.face_index.vocab())?;
            let mut groups = Vec::with_capacity(n);
            let mut traces: Vec<WindowTrace> = Vec::with_capacity(filled.len());
            for (g, tr) in filled {
                groups.extend(g);
                traces.push(tr);
            }
            let tokens = TokenizedMotion {
                codec_id: models.face_codec.id().to_string(),
                source_fps: MOTION_FPS,
                n_frames: feats.len(),
                groups,
            };
            let face = BlendshapeSequence::from_motion(models.face_codec.decode(&tokens)?)?;
            Ok((face, tokens, traces, ms(t0)))
        };

        let (body, face) = rayon::join(body, face);
        let (motion, body_tokens, keyframes, key_steps, audio_toks, prefix, plan, windows, (p, i, d)) =
            body.map_err(|e| Error::pathway("body", e))?;
        let (face, face_tokens, face_windows, face_ms) = face.map_err(|e| Error::pathway("face", e))?;
        timings.plan = p;
        timings.body_infill = i;
        timings.body_decode = d;
        timings.face = face_ms;
        timings.total = ms(started);
        timings.realtime_factor = timings.total / 1000.0 / clip.duration();

        self.ctx = Some(next_context(self.ctx.take(), &body_tokens.groups, &rows, &key_steps, &audio_toks));
        self.turns += 1;
        Ok(GenerationResult {
            motion,
            face,
            body_tokens,
            face_tokens,
            keyframes,
            keyframe_steps: key_steps,
            prefix,
            plan,
            windows,
            face_windows,
            timings_ms: timings,
        })
    }
}

fn next_context(prev: Option<Context>, groups: &[TokenGroup], rows: &Array2<f64>, key_steps: &[usize], audio: &[u32]) -> Context {
    let mut pairs = prev.as_ref().map(|c| c.pairs.clone()).unwrap_or_default();
    pairs.extend(audio.iter().copied().zip(key_steps.iter().map(|s| groups[*s].clone())));
    let keep = pairs.len().saturating_sub(2);
    pairs.drain(..keep);
    let row = |i: usize| rows.index_axis(Axis(0), i).to_owned();
    match (key_steps.last(), prev) {
        (Some(&last), _) => Context {
            last_key: groups[last].clone(),
            last_row: row(last),
            tail: (last + 1..groups.len()).map(|i| (groups[i].clone(), row(i))).collect(),
            pairs,
        },
        (None, Some(mut c)) => {
            c.tail.extend((0..groups.len()).map(|i| (groups[i].clone(), row(i))));
            c.pairs = pairs;
            c
        }
        (None, None) => unreachable!("a turn without history always has a keyframe at step 0"),
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}
