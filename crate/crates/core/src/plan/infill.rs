//! Boundary-anchored masked infilling with confidence-ranked refinement.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvq::{TokenGroup, UnifiedVocab};

pub const REFINEMENT_STEPS: usize = 6;
const PROB_TOLERANCE: f64 = 1e-6;

/// A run of interior slots between optional boundary groups. `audio` holds
/// one row per present position in order: left boundary, slots, right
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct InfillWindow {
    pub left: Option<TokenGroup>,
    pub right: Option<TokenGroup>,
    pub slots: Vec<Option<TokenGroup>>,
    pub audio: Array2<f64>,
}

impl InfillWindow {
    pub fn n_positions(&self) -> usize {
        self.left.is_some() as usize + self.slots.len() + self.right.is_some() as usize
    }

    /// Audio row for interior slot `i`.
    pub fn slot_row(&self, i: usize) -> usize {
        i + self.left.is_some() as usize
    }

    pub fn masked(&self) -> Vec<usize> {
        self.slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio.nrows() != self.n_positions() {
            return Err(Error::DimensionMismatch {
                expected: self.n_positions(),
                got: self.audio.nrows(),
            });
        }
        Ok(())
    }
}

/// Candidate distribution for one masked slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPrediction {
    pub slot: usize,
    pub candidates: Vec<(TokenGroup, f64)>,
    pub confidence: f64,
}

impl SlotPrediction {
    /// Most probable candidate; ties go to the lowest group.
    pub fn best(&self) -> &TokenGroup {
        let mut best = &self.candidates[0];
        for c in &self.candidates[1..] {
            if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
                best = c;
            }
        }
        &best.0
    }
}

/// Produces a prediction for every masked slot of a window.
pub trait SlotScorer: Send + Sync {
    fn score(&self, window: &InfillWindow) -> Result<Vec<SlotPrediction>>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    /// Count of slots accepted in each round.
    pub accepted_per_round: Vec<usize>,
    /// Slot indices accepted in each round.
    pub accepted_slots: Vec<Vec<usize>>,
}

fn check_predictions(preds: &[SlotPrediction], masked: &[usize], vocab: &UnifiedVocab) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidDistribution(m));
    let mut got: Vec<usize> = preds.iter().map(|p| p.slot).collect();
    got.sort_unstable();
    if got != masked {
        return bad(format!("predictions cover slots {got:?}, masked slots are {masked:?}"));
    }
    for p in preds {
        if p.candidates.is_empty() {
            return bad(format!("slot {} has no candidates", p.slot));
        }
        if !p.confidence.is_finite() {
            return bad(format!("slot {} confidence is not finite", p.slot));
        }
        let mut total = 0.0;
        for (g, prob) in &p.candidates {
            if !(prob.is_finite() && *prob >= 0.0) {
                return bad(format!("slot {} has probability {prob}", p.slot));
            }
            if g.validate(vocab.n_layers, vocab.codes_per_layer).is_err() {
                return bad(format!("slot {} proposes an out-of-range group", p.slot));
            }
            total += prob;
        }
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return bad(format!("slot {} probabilities sum to {total}", p.slot));
        }
    }
    Ok(())
}

/// Slots to accept in a round: `ceil(remaining / rounds_left)`.
pub fn acceptance_count(remaining: usize, rounds_left: usize) -> usize {
    if rounds_left == 0 {
        remaining
    } else {
        remaining.div_ceil(rounds_left)
    }
}

/// Fills every masked slot in `steps` rounds. Each round rescores the window
/// and freezes the most confident predictions (ties to the leftmost slot).
/// Boundaries and already known slots are never touched.
pub fn infill_window(
    window: &InfillWindow,
    scorer: &dyn SlotScorer,
    steps: usize,
    vocab: &UnifiedVocab,
) -> Result<(Vec<TokenGroup>, WindowTrace)> {
    window.validate()?;
    if steps == 0 && !window.masked().is_empty() {
        return Err(Error::InvalidInput("need at least one refinement round".into()));
    }
    let mut work = window.clone();
    let mut trace = WindowTrace::default();
    for round in 0..steps {
        let masked = work.masked();
        let take = acceptance_count(masked.len(), steps - round);
        if take == 0 {
            trace.accepted_per_round.push(0);
            trace.accepted_slots.push(Vec::new());
            continue;
        }
        let mut preds = scorer.score(&work)?;
        check_predictions(&preds, &masked, vocab)?;
        preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.slot.cmp(&b.slot)));
        let mut accepted: Vec<usize> = Vec::with_capacity(take);
        for p in preds.iter().take(take) {
            work.slots[p.slot] = Some(p.best().clone());
            accepted.push(p.slot);
        }
        accepted.sort_unstable();
        trace.accepted_per_round.push(accepted.len());
        trace.accepted_slots.push(accepted);
    }
    let filled = work
        .slots
        .into_iter()
        .map(|s| s.expect("all slots resolved after the final round"))
        .collect();
    Ok((filled, trace))
}
