//! Deterministic synthetic turns with planted ground truth: click-train
//! audio, beat-locked motion loops on label-specific base poses, beat-locked
//! face tracks, plus token corpora for planner and infill tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{AudioClip, BlendshapeSequence, DialogueTurn, MotionSequence, BODY_DIM, FACE_DIM, MOTION_FPS};
use crate::rvq::TokenGroup;

pub const ACTION_CLASSES: [&str; 8] = ["wave", "nod", "shrug", "point", "clap", "bow", "beckon", "shake_head"];
pub const EXPRESSIONS: [&str; 3] = ["neutral", "happy", "surprised"];

pub const CLICK_SECONDS: f64 = 0.005;
pub const CLICK_AMPLITUDE: f64 = 0.8;
/// Pink-noise floor RMS (-40 dB re full scale).
pub const NOISE_FLOOR_RMS: f64 = 0.01;
/// Beats are planted only this far from either end of the turn.
pub const BEAT_MARGIN: f64 = 0.4;
/// Width of each velocity bump, in frames.
pub const BUMP_SIGMA_FRAMES: f64 = 2.0;
/// Radius of the per-beat excursion loop.
pub const LOOP_RADIUS: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub duration: f64,
    pub fps: f64,
    pub sample_rate: u32,
    pub beat_period: f64,
    pub beat_offset: f64,
    /// Index into [`ACTION_CLASSES`].
    pub label_class: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Extra delay applied to motion beats only.
    #[serde(default)]
    pub motion_offset: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration: 4.0,
            fps: MOTION_FPS,
            sample_rate: 16_000,
            beat_period: 0.8,
            beat_offset: 0.0,
            label_class: 0,
            noise_level: 0.0,
            seed: 0,
            motion_offset: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.duration >= 1.0 && self.duration.is_finite()) {
            return bad(format!("duration must be at least 1 s, got {}", self.duration));
        }
        if !(self.beat_period > 0.0 && self.beat_period <= self.duration) {
            return bad(format!("beat period {} is outside (0, duration]", self.beat_period));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) || self.sample_rate == 0 {
            return bad("rates must be positive".into());
        }
        if self.label_class >= ACTION_CLASSES.len() {
            return bad(format!("label class {} is not below {}", self.label_class, ACTION_CLASSES.len()));
        }
        if !(self.noise_level >= 0.0 && self.beat_offset.is_finite() && self.motion_offset.is_finite()) {
            return bad("noise level must be non-negative and offsets finite".into());
        }
        Ok(())
    }

    /// Planted beat times in seconds.
    pub fn beat_times(&self) -> Vec<f64> {
        let phase = self.beat_offset.rem_euclid(self.beat_period);
        let mut t = phase;
        while t < BEAT_MARGIN {
            t += self.beat_period;
        }
        let mut out = Vec::new();
        while t <= self.duration - BEAT_MARGIN + 1e-9 {
            out.push(t);
            t += self.beat_period;
        }
        out
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps + 1e-9).floor() as usize
    }

    pub fn n_samples(&self) -> usize {
        (self.n_frames() as f64 / self.fps * self.sample_rate as f64).round() as usize
    }
}

/// SplitMix64 finalizer over `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Paul Kellet's pink filter over seeded white noise, scaled to `rms`.
fn pink_noise(n: usize, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b.iter().sum::<f64>() + w * 0.5362);
        b[6] = w * 0.115926;
    }
    let got = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if got > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / got);
    }
    out
}

fn synth_audio(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<AudioClip> {
    let sr = spec.sample_rate as f64;
    let n = spec.n_samples();
    let mut x = pink_noise(n, NOISE_FLOOR_RMS, rng);
    let width = (CLICK_SECONDS * sr).round() as usize;
    for b in spec.beat_times() {
        let start = (b * sr).round() as usize;
        for i in 0..width {
            let Some(s) = x.get_mut(start + i) else { break };
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / width as f64).cos();
            let carrier: f64 = rng.sample(StandardNormal);
            *s += CLICK_AMPLITUDE * env * carrier.clamp(-1.0, 1.0);
        }
    }
    AudioClip::new(spec.sample_rate, x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect())
}

/// Unit vector with a fixed seed.
fn direction(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Per-class geometry shared by every turn of that class.
struct ClassShape {
    base: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    drift: Vec<f64>,
}

fn class_shape(class: usize) -> ClassShape {
    let k = 0xC1A5_5000 + class as u64 * 7;
    let mut rng = ChaCha8Rng::seed_from_u64(k);
    let base = (0..BODY_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u = direction(BODY_DIM, k + 1);
    // Second loop axis orthogonal to the first.
    let raw = direction(BODY_DIM, k + 2);
    let dot: f64 = raw.iter().zip(&u).map(|(a, b)| a * b).sum();
    let mut w: Vec<f64> = raw.iter().zip(&u).map(|(a, b)| a - dot * b).collect();
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= n);
    ClassShape {
        base,
        u,
        w,
        drift: direction(BODY_DIM, k + 3),
    }
}

/// Loop angle per frame for a beat at `b`: the increment between frames `i`
/// and `i+1` is a Gaussian in `(i+1)/fps - b`, normalized to one full turn.
fn loop_angles(n: usize, fps: f64, b: f64) -> Vec<f64> {
    let sigma = BUMP_SIGMA_FRAMES;
    let norm = (2.0 * std::f64::consts::PI).sqrt() * sigma;
    let mut theta = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let z = ((i + 1) as f64 - b * fps) / sigma;
        theta[i + 1] = theta[i] + 2.0 * std::f64::consts::PI * (-0.5 * z * z).exp() / norm;
    }
    theta
}

fn synth_motion(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<MotionSequence> {
    let n = spec.n_frames();
    let shape = class_shape(spec.label_class);
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut frames = Array2::zeros((n, BODY_DIM));
    for (i, mut row) in frames.outer_iter_mut().enumerate() {
        let t = i as f64 / spec.fps;
        let sway = 0.05 * (2.0 * std::f64::consts::PI * 0.25 * t).sin();
        for j in 0..BODY_DIM {
            row[j] = shape.base[j] + sway * shape.drift[j];
        }
    }
    for b in spec.beat_times() {
        let angles = loop_angles(n, spec.fps, b + spec.motion_offset);
        for (i, mut row) in frames.outer_iter_mut().enumerate() {
            let (s, c) = angles[i].sin_cos();
            let (du, dw) = (LOOP_RADIUS * (c - 1.0), LOOP_RADIUS * s);
            if du == 0.0 && dw == 0.0 {
                continue;
            }
            for j in 0..BODY_DIM {
                row[j] += du * shape.u[j] + dw * shape.w[j];
            }
        }
    }
    if spec.noise_level > 0.0 {
        frames.mapv_inplace(|v| v + noise.sample(rng));
    }
    frames.mapv_inplace(|v| v as f32 as f64);
    MotionSequence::new(spec.fps, frames)
}

fn synth_face(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<BlendshapeSequence> {
    let n = spec.n_frames();
    let mut prng = ChaCha8Rng::seed_from_u64(0xFACE_0000 + spec.label_class as u64);
    let phases: Vec<f64> = (0..FACE_DIM).map(|_| prng.random_range(0.0..std::f64::consts::TAU)).collect();
    let levels: Vec<f64> = (0..FACE_DIM).map(|_| prng.random_range(0.2..0.6)).collect();
    let noise = Normal::new(0.0, 0.1 * spec.noise_level.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let anchor = spec.beat_offset + spec.motion_offset;
    let mut frames = Array2::zeros((n, FACE_DIM));
    for (i, mut row) in frames.outer_iter_mut().enumerate() {
        let t = i as f64 / spec.fps;
        let phase = std::f64::consts::TAU * (t - anchor) / spec.beat_period;
        for j in 0..FACE_DIM {
            let mut v = levels[j] + 0.2 * (phase + phases[j]).cos();
            if spec.noise_level > 0.0 {
                v += noise.sample(rng);
            }
            row[j] = v as f32 as f64;
        }
    }
    BlendshapeSequence::new(spec.fps, frames)
}

/// One turn whose audio clicks, motion velocity peaks and face cycles all
/// follow [`SynthSpec::beat_times`].
pub fn synth_turn(spec: &SynthSpec) -> Result<DialogueTurn> {
    spec.validate()?;
    let mut audio_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let mut motion_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut face_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2));
    let audio = synth_audio(spec, &mut audio_rng)?;
    let motion = synth_motion(spec, &mut motion_rng)?;
    let face = synth_face(spec, &mut face_rng)?;
    DialogueTurn::new(
        EXPRESSIONS[spec.label_class % EXPRESSIONS.len()],
        ACTION_CLASSES[spec.label_class],
        format!("synthetic {} utterance", ACTION_CLASSES[spec.label_class]),
        audio,
        motion,
        Some(face),
    )
}

/// Per-turn specs for a corpus: seeds from `(seed, index)`, classes cycled,
/// beat phase drawn from one period and the period jittered by up to 10%.
pub fn corpus_specs(n: usize, base: &SynthSpec, seed: u64) -> Vec<SynthSpec> {
    (0..n)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let period = base.beat_period * rng.random_range(0.9..1.1);
            SynthSpec {
                beat_period: period,
                beat_offset: rng.random_range(0.0..period),
                label_class: i % ACTION_CLASSES.len(),
                seed: s,
                ..base.clone()
            }
        })
        .collect()
}

/// `(id, turn)` pairs for [`corpus_specs`], generated in parallel.
pub fn synth_corpus(n: usize, base: &SynthSpec, seed: u64) -> Result<Vec<(String, DialogueTurn)>> {
    use rayon::prelude::*;
    if n == 0 {
        return Err(Error::InvalidInput("corpus needs at least one turn".into()));
    }
    corpus_specs(n, base, seed)
        .par_iter()
        .enumerate()
        .map(|(i, spec)| Ok((format!("turn_{i:05}"), synth_turn(spec)?)))
        .collect()
}

/// A first-order Markov chain over `n_states` token groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub states: Vec<TokenGroup>,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    /// Random chain whose rows are Dirichlet-like draws with visible structure.
    pub fn random(n_states: usize, n_layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = (0..n_states)
            .map(|s| TokenGroup::new((0..n_layers).map(|l| (s * 37 + l * 11) as u16 % 512)))
            .collect();
        let row = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.0f64..1.0).powi(3)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|v| v / z).collect::<Vec<_>>()
        };
        Self {
            initial: row(&mut rng),
            transition: (0..n_states).map(|_| row(&mut rng)).collect(),
            states,
        }
    }

    fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// `n_sequences` state paths of length `len`.
    pub fn sample_paths(&self, n_sequences: usize, len: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sequences)
            .map(|_| {
                let mut s = Self::draw(&self.initial, &mut rng);
                let mut path = vec![s];
                for _ in 1..len {
                    s = Self::draw(&self.transition[s], &mut rng);
                    path.push(s);
                }
                path
            })
            .collect()
    }
}

/// Window with interior groups fully determined by its boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWindow {
    pub left: TokenGroup,
    pub right: TokenGroup,
    pub interior: Vec<TokenGroup>,
    /// `(t + 1) x n_audio` feature rows.
    pub audio: Array2<f64>,
}

/// Planted-function window corpus: boundaries from a small palette,
/// interiors a fixed function of the `(left, right)` pair, audio rows a
/// function of the pair plus light noise.
pub fn planted_windows(n: usize, t: usize, palette: usize, n_layers: usize, n_audio: usize, seed: u64) -> Vec<PlantedWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = |a: usize, b: usize, slot: usize| {
        TokenGroup::new((0..n_layers).map(|l| ((a * 131 + b * 29 + slot * 7 + l * 17) % 512) as u16))
    };
    let palette_group = |a: usize| TokenGroup::new((0..n_layers).map(|l| ((a * 53 + l * 3) % 512) as u16));
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..palette);
            let b = rng.random_range(0..palette);
            let mut audio = Array2::zeros((t + 1, n_audio));
            for ((r, c), v) in audio.indexed_iter_mut() {
                let x = ((a * 7 + b * 3 + r * 5 + c) % 11) as f64 / 11.0;
                *v = x + 0.05 * rng.sample::<f64, _>(StandardNormal);
            }
            PlantedWindow {
                left: palette_group(a),
                right: palette_group(b),
                interior: (1..t).map(|s| group(a, b, s)).collect(),
                audio,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{esd, extract_audio_events, extract_motion_events};
    use crate::dsp::MelConfig;

    #[test]
    fn same_spec_same_turn() {
        let spec = SynthSpec {
            noise_level: 0.01,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(synth_turn(&spec).unwrap(), synth_turn(&spec).unwrap());
    }

    #[test]
    fn clean_motion_events_hit_beats() {
        let spec = SynthSpec {
            beat_offset: 0.13,
            label_class: 3,
            ..Default::default()
        };
        let turn = synth_turn(&spec).unwrap();
        let ev = extract_motion_events(&turn.motion).unwrap();
        let beats = spec.beat_times();
        assert_eq!(ev.len(), beats.len(), "{:?} vs {beats:?}", ev.times());
        for (e, b) in ev.times().iter().zip(&beats) {
            assert!((e - b).abs() <= 1.0 / 20.0 + 1e-9, "{e} vs {b}");
        }
    }

    #[test]
    fn clean_turn_is_synchronized() {
        let spec = SynthSpec {
            beat_offset: 0.31,
            seed: 4,
            ..Default::default()
        };
        let turn = synth_turn(&spec).unwrap();
        let a = extract_audio_events(&turn.audio, &MelConfig::default()).unwrap();
        let m = extract_motion_events(&turn.motion).unwrap();
        let r = esd(&a, &m);
        assert!(r.esd <= 0.075, "{r:?} {:?} {:?}", a.times(), m.times());
    }

    #[test]
    fn durations_agree() {
        let turn = synth_turn(&SynthSpec {
            duration: 2.55,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(turn.motion.len(), 51);
        assert_eq!(turn.audio.len(), 40_800);
        assert_eq!(turn.face.as_ref().unwrap().len(), 51);
    }

    #[test]
    fn corpus_cycles_labels() {
        let specs = corpus_specs(10, &SynthSpec::default(), 1);
        let classes: Vec<usize> = specs.iter().map(|s| s.label_class).collect();
        assert_eq!(classes, vec![0, 1, 2, 3, 4, 5, 6, 7, 0, 1]);
        assert_ne!(specs[0].seed, specs[1].seed);
        assert!(specs.iter().all(|s| s.beat_offset < s.beat_period));
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_turn(&SynthSpec { duration: 0.5, ..Default::default() }).is_err());
        assert!(synth_turn(&SynthSpec { label_class: 8, ..Default::default() }).is_err());
        assert!(synth_turn(&SynthSpec { beat_period: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn markov_rows_are_distributions() {
        let c = MarkovChain::random(8, 4, 3);
        for row in c.transition.iter().chain(std::iter::once(&c.initial)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let paths = c.sample_paths(3, 10, 1);
        assert!(paths.iter().all(|p| p.len() == 10 && p.iter().all(|s| *s < 8)));
    }
}
