//! Masked training windows for an infill scorer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvq::{TokenGroup, TokenizedMotion};

pub const CORRUPT_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedWindow {
    /// Token step of the left boundary.
    pub start: usize,
    pub left: TokenGroup,
    pub right: TokenGroup,
    /// Model input: `None` where masked, possibly corrupted groups elsewhere.
    pub slots: Vec<Option<TokenGroup>>,
    /// Ground-truth interior.
    pub targets: Vec<TokenGroup>,
    /// Per slot, per layer: the input token was replaced.
    pub corrupted: Vec<Vec<bool>>,
    /// Over all `t + 1` positions; false at both boundaries.
    pub loss_mask: Vec<bool>,
}

/// Windows of `t + 1` groups at stride `t`. Interior slots are masked
/// independently at `mask_rate` (at least one per window); each surviving
/// token is replaced by a uniform in-layer value with probability
/// `corrupt_rate`.
pub fn mask_training_windows(
    tokens: &TokenizedMotion,
    t: usize,
    mask_rate: f64,
    corrupt_rate: f64,
    codes_per_layer: usize,
    seed: u64,
) -> Result<Vec<MaskedWindow>> {
    if t < 2 {
        return Err(Error::InvalidInput(format!("window step must be at least 2, got {t}")));
    }
    for (name, p) in [("mask_rate", mask_rate), ("corrupt_rate", corrupt_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if codes_per_layer == 0 || codes_per_layer > u16::MAX as usize + 1 {
        return Err(Error::InvalidInput(format!("bad codebook size {codes_per_layer}")));
    }
    let g = &tokens.groups;
    if g.len() < t + 1 {
        return Err(Error::InsufficientFrames {
            needed: t + 1,
            got: g.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_windows = (g.len() - 1) / t;
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let start = w * t;
        let targets: Vec<TokenGroup> = g[start + 1..start + t].to_vec();
        let mut masked: Vec<bool> = (0..t - 1).map(|_| rng.random::<f64>() < mask_rate).collect();
        if !masked.iter().any(|m| *m) {
            masked[rng.random_range(0..t - 1)] = true;
        }
        let mut slots = Vec::with_capacity(t - 1);
        let mut corrupted = Vec::with_capacity(t - 1);
        for (truth, &m) in targets.iter().zip(&masked) {
            if m {
                slots.push(None);
                corrupted.push(vec![false; truth.n_layers()]);
                continue;
            }
            let mut flags = Vec::with_capacity(truth.n_layers());
            let vals: Vec<u16> = truth
                .residuals()
                .iter()
                .map(|&r| {
                    let hit = rng.random::<f64>() < corrupt_rate;
                    flags.push(hit);
                    if hit {
                        rng.random_range(0..codes_per_layer) as u16
                    } else {
                        r
                    }
                })
                .collect();
            slots.push(Some(TokenGroup::new(vals)));
            corrupted.push(flags);
        }
        let mut loss_mask = vec![true; t + 1];
        loss_mask[0] = false;
        loss_mask[t] = false;
        out.push(MaskedWindow {
            start,
            left: g[start].clone(),
            right: g[start + t].clone(),
            slots,
            targets,
            corrupted,
            loss_mask,
        });
    }
    Ok(out)
}
