//! Planner token layout and training-example construction.
//!
//! Integer layout: motion ids `[0, M)`, audio ids `[M, M + A)`, then the step
//! token, the length token and the label placeholder. The label text rides
//! alongside the integer sequence.

use serde::{Deserialize, Serialize};

use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::motion::DialogueTurn;
use crate::plan::audio::{audio_features, AudioQuantizer};
use crate::rvq::{RvqCodec, TokenGroup, UnifiedVocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerVocab {
    pub motion: UnifiedVocab,
    pub audio_size: usize,
    pub t: usize,
}

impl PlannerVocab {
    pub fn new(motion: UnifiedVocab, audio_size: usize, t: usize) -> Result<Self> {
        if t < 2 || !t.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("keyframe step must be even and at least 2, got {t}")));
        }
        if audio_size == 0 {
            return Err(Error::InvalidInput("audio vocabulary is empty".into()));
        }
        Ok(Self { motion, audio_size, t })
    }

    pub fn audio_offset(&self) -> u32 {
        self.motion.size() as u32
    }

    pub fn step_token(&self) -> u32 {
        (self.motion.size() + self.audio_size) as u32
    }

    pub fn len_token(&self) -> u32 {
        self.step_token() + 1
    }

    pub fn label_token(&self) -> u32 {
        self.step_token() + 2
    }

    pub fn size(&self) -> usize {
        self.label_token() as usize + 1
    }

    fn audio_id(&self, a: u32) -> Result<u32> {
        if a as usize >= self.audio_size {
            return Err(Error::OutOfRange(format!("audio token {a} is not below {}", self.audio_size)));
        }
        Ok(self.audio_offset() + a)
    }

    fn group_ids(&self, g: &TokenGroup) -> Result<Vec<u32>> {
        g.validate(self.motion.n_layers, self.motion.codes_per_layer)?;
        Ok(g.unified_ids(self.motion.codes_per_layer))
    }
}

/// One planner training pair. `prefix` is empty in standard mode and holds
/// the two context `(audio, keyframe)` pairs in continuation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerExample {
    pub label: String,
    pub prefix: Vec<(u32, TokenGroup)>,
    pub audio: Vec<u32>,
    pub keyframes: Vec<TokenGroup>,
}

/// Flat integer form: standard mode is `T + audio -> [S_t] + groups`,
/// continuation mode `prefix audio + prefix groups + T + audio -> [len] + groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSequence {
    pub label: String,
    pub input: Vec<u32>,
    pub output: Vec<u32>,
}

impl PlannerExample {
    pub fn is_continuation(&self) -> bool {
        !self.prefix.is_empty()
    }

    pub fn to_sequence(&self, vocab: &PlannerVocab) -> Result<PlannerSequence> {
        let mut input = Vec::new();
        for (a, _) in &self.prefix {
            input.push(vocab.audio_id(*a)?);
        }
        for (_, g) in &self.prefix {
            input.extend(vocab.group_ids(g)?);
        }
        input.push(vocab.label_token());
        for a in &self.audio {
            input.push(vocab.audio_id(*a)?);
        }
        let mut output = vec![if self.is_continuation() { vocab.len_token() } else { vocab.step_token() }];
        for g in &self.keyframes {
            output.extend(vocab.group_ids(g)?);
        }
        Ok(PlannerSequence {
            label: self.label.clone(),
            input,
            output,
        })
    }

    /// Inverse of [`Self::to_sequence`].
    pub fn parse(seq: &PlannerSequence, vocab: &PlannerVocab) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("malformed planner sequence: {m}"));
        let label_at = seq
            .input
            .iter()
            .position(|&i| i == vocab.label_token())
            .ok_or_else(|| bad("missing label placeholder"))?;
        let audio_range = vocab.audio_offset()..vocab.step_token();
        let head = &seq.input[..label_at];
        let n_prefix_audio = head.iter().take_while(|i| audio_range.contains(i)).count();
        let layers = vocab.motion.n_layers;
        if head.len() - n_prefix_audio != n_prefix_audio * layers {
            return Err(bad("prefix audio and motion counts differ"));
        }
        let mut prefix = Vec::with_capacity(n_prefix_audio);
        for (i, a) in head[..n_prefix_audio].iter().enumerate() {
            let ids = &head[n_prefix_audio + i * layers..n_prefix_audio + (i + 1) * layers];
            prefix.push((a - vocab.audio_offset(), TokenGroup::from_unified_ids(ids, &vocab.motion)?));
        }
        let audio = seq.input[label_at + 1..]
            .iter()
            .map(|i| {
                if audio_range.contains(i) {
                    Ok(i - vocab.audio_offset())
                } else {
                    Err(bad("non-audio id after label"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let lead = if prefix.is_empty() { vocab.step_token() } else { vocab.len_token() };
        match seq.output.first() {
            Some(&x) if x == lead => {}
            _ => return Err(bad("wrong leading output token")),
        }
        let body = &seq.output[1..];
        if !body.len().is_multiple_of(layers) {
            return Err(bad("output is not a whole number of groups"));
        }
        let keyframes = body
            .chunks(layers)
            .map(|c| TokenGroup::from_unified_ids(c, &vocab.motion))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: seq.label.clone(),
            prefix,
            audio,
            keyframes,
        })
    }
}

/// Keyframe positions `0, t, 2t, ...` over `n_steps` token steps.
pub fn keyframe_steps(n_steps: usize, t: usize) -> Vec<usize> {
    (0..n_steps).step_by(t.max(1)).collect()
}

/// Planner example for one turn: audio tokens on the keyframe grid (feature
/// row `2s` for token step `s`) and the body groups at those steps. With
/// `continuation_split = Some(k)` the keyframes before `k` become history,
/// the last two of them the prefix.
pub fn build_training_sequences(
    turn: &DialogueTurn,
    codec: &RvqCodec,
    quantizer: &AudioQuantizer,
    t: usize,
    continuation_split: Option<usize>,
    mel: &MelConfig,
) -> Result<PlannerExample> {
    let tokens = codec.encode(&turn.motion)?;
    let dense = quantizer.assign(&audio_features(&turn.audio, mel)?)?;
    example_from_tokens(&turn.action_label, &tokens.groups, &dense, t, continuation_split)
}

/// Same as [`build_training_sequences`] from already tokenized streams;
/// `dense_audio` holds one audio token per motion frame.
pub fn example_from_tokens(
    label: &str,
    groups: &[TokenGroup],
    dense_audio: &[u32],
    t: usize,
    continuation_split: Option<usize>,
) -> Result<PlannerExample> {
    if t == 0 {
        return Err(Error::InvalidInput("keyframe step must be positive".into()));
    }
    let steps: Vec<usize> = keyframe_steps(groups.len(), t)
        .into_iter()
        .filter(|s| 2 * s < dense_audio.len())
        .collect();
    let audio: Vec<u32> = steps.iter().map(|s| dense_audio[2 * s]).collect();
    let keyframes: Vec<TokenGroup> = steps.iter().map(|s| groups[*s].clone()).collect();
    match continuation_split {
        None => Ok(PlannerExample {
            label: label.to_string(),
            prefix: Vec::new(),
            audio,
            keyframes,
        }),
        Some(k) => {
            if keyframes.len() < 3 {
                return Err(Error::InsufficientFrames {
                    needed: 3,
                    got: keyframes.len(),
                });
            }
            if k < 2 || k >= keyframes.len() {
                return Err(Error::InvalidInput(format!(
                    "continuation split {k} must lie in 2..{}",
                    keyframes.len()
                )));
            }
            let prefix = (k - 2..k).map(|i| (audio[i], keyframes[i].clone())).collect();
            Ok(PlannerExample {
                label: label.to_string(),
                prefix,
                audio: audio[k..].to_vec(),
                keyframes: keyframes[k..].to_vec(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups(n: usize) -> Vec<TokenGroup> {
        (0..n).map(|i| TokenGroup::new([i as u16, (i * 3) as u16, 5, 511])).collect()
    }

    fn vocab() -> PlannerVocab {
        PlannerVocab::new(UnifiedVocab::BODY, 64, 4).unwrap()
    }

    #[test]
    fn layout_is_disjoint() {
        let v = vocab();
        assert_eq!(v.audio_offset(), 2048);
        assert_eq!(v.step_token(), 2112);
        assert_eq!(v.len_token(), 2113);
        assert_eq!(v.label_token(), 2114);
        assert!(PlannerVocab::new(UnifiedVocab::BODY, 64, 3).is_err());
        assert!(PlannerVocab::new(UnifiedVocab::BODY, 64, 0).is_err());
    }

    #[test]
    fn sixteen_groups_stride_four() {
        let g = groups(16);
        let ex = example_from_tokens("wave", &g, &(0..32).collect::<Vec<u32>>(), 4, None).unwrap();
        assert_eq!(ex.keyframes, vec![g[0].clone(), g[4].clone(), g[8].clone(), g[12].clone()]);
        assert_eq!(ex.audio, vec![0, 8, 16, 24]);
        let seq = ex.to_sequence(&vocab()).unwrap();
        assert_eq!(seq.output[0], vocab().step_token());
        assert_eq!(seq.output.len(), 1 + 16);
    }

    #[test]
    fn continuation_split_two() {
        let g = groups(16);
        let ex = example_from_tokens("wave", &g, &(0..32).collect::<Vec<u32>>(), 4, Some(2)).unwrap();
        assert_eq!(ex.prefix, vec![(0, g[0].clone()), (8, g[4].clone())]);
        assert_eq!(ex.keyframes, vec![g[8].clone(), g[12].clone()]);
        assert_eq!(ex.audio, vec![16, 24]);
        let seq = ex.to_sequence(&vocab()).unwrap();
        assert_eq!(seq.output[0], vocab().len_token());
        // [a_1][a_{1+t}][r_1][r_{1+t}] then the label.
        assert_eq!(&seq.input[..2], &[2048, 2056]);
        assert_eq!(seq.input[10], vocab().label_token());
    }

    #[test]
    fn continuation_needs_three_keyframes() {
        let g = groups(8);
        let err = example_from_tokens("nod", &g, &[0; 16], 4, Some(2)).unwrap_err();
        assert!(matches!(err, Error::InsufficientFrames { needed: 3, got: 2 }));
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(n in 1usize..30, split in proptest::option::of(2usize..6), seed in 0u16..500) {
            let g: Vec<TokenGroup> = (0..n).map(|i| TokenGroup::new([(i as u16 * 7 + seed) % 512, seed, 0, (i as u16) % 512])).collect();
            let dense: Vec<u32> = (0..2 * n as u32).map(|i| (i * 5 + seed as u32) % 64).collect();
            if let Ok(ex) = example_from_tokens("shrug", &g, &dense, 4, split) {
                let seq = ex.to_sequence(&vocab()).unwrap();
                prop_assert_eq!(PlannerExample::parse(&seq, &vocab()).unwrap(), ex);
            }
        }
    }
}
