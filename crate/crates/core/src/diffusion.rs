//! Absorbing-state forward corruption and the ancestral reverse step.
//!
//! Forward: each clean token survives to time `t` with probability
//! `alpha_t`, otherwise it becomes the mask. Reverse from `t` to `s < t`: a
//! masked position unmasks with probability `(alpha_s - alpha_t) / (1 - alpha_t)`
//! and then draws its token from the estimated clean distribution; it stays
//! masked with probability `(1 - alpha_s) / (1 - alpha_t)`. Revealed tokens
//! never change.

use crate::error::{Error, Result};
use crate::predictor::MarginalEstimate;
use crate::rng::DeterministicRng;
use crate::schedule::AlphaSchedule;
use crate::scheduler::sample_token;
use crate::state::SequenceState;

pub const FORWARD_STREAM: &str = "forward";
pub const UNMASK_STREAM: &str = "unmask";
pub const ANCESTRAL_TOKEN_STREAM: &str = "ancestral-token";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseTransition {
    pub stay_mask_prob: f64,
    pub unmask_prob: f64,
}

/// Masks each token of a clean sequence independently, keeping it with probability `alpha_t`.
///
/// Position `i` is kept iff `rng.uniform("forward", i) < alpha_t`, so runs
/// sharing an rng are coupled across `t`.
pub fn forward_corrupt(
    x0: &SequenceState,
    t: f64,
    alpha: AlphaSchedule,
    rng: &DeterministicRng,
) -> Result<SequenceState> {
    if let Some(pos) = x0.masked_positions().next() {
        return Err(Error::Contract(format!(
            "forward corruption needs clean data; position {pos} is masked"
        )));
    }
    let keep = alpha.alpha(t)?;
    Ok(mask_where(x0, |i| {
        rng.uniform(FORWARD_STREAM, i as u64) >= keep
    }))
}

/// Forward transition from time `s` to a later time `t`: a revealed token
/// survives with probability `alpha_t / alpha_s`.
///
/// With the same rng as [`forward_corrupt`], corrupting to `s` and then
/// advancing to `t` gives exactly the state corrupted straight to `t`.
pub fn forward_advance(
    state: &SequenceState,
    s: f64,
    t: f64,
    alpha: AlphaSchedule,
    rng: &DeterministicRng,
) -> Result<SequenceState> {
    if s > t {
        return Err(Error::Contract(format!(
            "forward process runs toward t = 1; got s = {s} > t = {t}"
        )));
    }
    let (alpha_s, alpha_t) = (alpha.alpha(s)?, alpha.alpha(t)?);
    if alpha_s == 0.0 {
        return Ok(state.clone());
    }
    // kept at s means u < alpha_s; conditioned on that, u < alpha_t has probability alpha_t / alpha_s
    Ok(mask_where(state, |i| {
        !state.is_masked(i) && rng.uniform(FORWARD_STREAM, i as u64) >= alpha_t
    }))
}

fn mask_where(state: &SequenceState, mut masked: impl FnMut(usize) -> bool) -> SequenceState {
    let mask = state.mask_id();
    let tokens = state
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, &tok)| if masked(i) { mask } else { tok })
        .collect();
    SequenceState::from_tokens(tokens, state.step_index(), mask)
}

pub fn reverse_transition(t: f64, s: f64, alpha: AlphaSchedule) -> Result<ReverseTransition> {
    if s >= t {
        return Err(Error::Contract(format!(
            "reverse step needs s < t, got s = {s}, t = {t}"
        )));
    }
    let alpha_t = alpha.alpha(t)?;
    let alpha_s = alpha.alpha(s)?;
    if alpha_t >= 1.0 {
        return Err(Error::DegenerateAlpha { t });
    }
    let denom = 1.0 - alpha_t;
    Ok(ReverseTransition {
        stay_mask_prob: ((1.0 - alpha_s) / denom).clamp(0.0, 1.0),
        unmask_prob: ((alpha_s - alpha_t) / denom).clamp(0.0, 1.0),
    })
}

/// Samples `x_s` from `x_t` position by position, without a remasking scheduler.
pub fn ancestral_sample_step(
    state: &SequenceState,
    estimate: &MarginalEstimate,
    t: f64,
    s: f64,
    alpha: AlphaSchedule,
    rng: &DeterministicRng,
) -> Result<SequenceState> {
    if state.is_complete() {
        return Ok(state.clone());
    }
    let transition = reverse_transition(t, s, alpha)?;
    let mut tokens = state.tokens().to_vec();
    for pos in state.masked_positions() {
        let row = estimate.row_for(pos).ok_or_else(|| {
            Error::Contract(format!("estimate has no row for masked position {pos}"))
        })?;
        if rng.uniform(UNMASK_STREAM, pos as u64) < transition.unmask_prob {
            tokens[pos] = sample_token(row, rng.uniform(ANCESTRAL_TOKEN_STREAM, pos as u64));
        }
    }
    Ok(SequenceState::from_tokens(
        tokens,
        state.step_index(),
        state.mask_id(),
    ))
}
