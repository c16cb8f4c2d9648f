//! Sequence states and unmask decision sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::TokenId;

/// A partially masked sequence sitting at some step of a time schedule.
///
/// States are values: decoders derive new states and never mutate old ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceState {
    tokens: Vec<TokenId>,
    step_index: usize,
    mask_id: TokenId,
}

impl SequenceState {
    pub fn all_masked(length: usize, mask_id: TokenId) -> Self {
        Self {
            tokens: vec![mask_id; length],
            step_index: 0,
            mask_id,
        }
    }

    pub fn from_tokens(tokens: Vec<TokenId>, step_index: usize, mask_id: TokenId) -> Self {
        Self {
            tokens,
            step_index,
            mask_id,
        }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.tokens[position] == self.mask_id
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t == self.mask_id)
            .map(|(i, _)| i)
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == self.mask_id).count()
    }

    pub fn is_complete(&self) -> bool {
        !self.tokens.contains(&self.mask_id)
    }

    /// Revealed `(position, token)` pairs in ascending position order.
    pub fn revealed(&self) -> impl Iterator<Item = (usize, TokenId)> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t != self.mask_id)
            .map(|(i, &t)| (i, t))
    }

    /// Same tokens, relabelled to another step.
    pub fn at_step(&self, step_index: usize) -> Self {
        Self {
            tokens: self.tokens.clone(),
            step_index,
            mask_id: self.mask_id,
        }
    }

    /// Writes `decisions` into a copy of this state and moves it to `target_step`.
    pub fn apply(&self, decisions: &DecisionSet, target_step: usize) -> Result<Self> {
        if target_step <= self.step_index {
            return Err(Error::Contract(format!(
                "target step {target_step} does not advance past step {}",
                self.step_index
            )));
        }
        self.reveal(decisions, target_step)
    }

    /// Like [`apply`](Self::apply) but only requires `step` not to go backwards.
    /// Threshold decoding can reveal tokens without crossing a schedule step.
    pub(crate) fn reveal(&self, decisions: &DecisionSet, target_step: usize) -> Result<Self> {
        if target_step < self.step_index {
            return Err(Error::Contract(format!(
                "step {target_step} moves backwards from {}",
                self.step_index
            )));
        }
        let mut tokens = self.tokens.clone();
        for &(pos, tok) in decisions.entries() {
            if tok == self.mask_id {
                return Err(Error::Contract(format!(
                    "decision at position {pos} writes the mask token"
                )));
            }
            match tokens.get_mut(pos) {
                None => {
                    return Err(Error::Contract(format!(
                        "decision position {pos} outside a length-{} sequence",
                        self.tokens.len()
                    )))
                }
                Some(slot) if *slot != self.mask_id => {
                    return Err(Error::Contract(format!(
                        "decision on already unmasked position {pos}"
                    )))
                }
                Some(slot) => *slot = tok,
            }
        }
        Ok(Self {
            tokens,
            step_index: target_step,
            mask_id: self.mask_id,
        })
    }
}

pub fn apply_decisions(
    state: &SequenceState,
    decisions: &DecisionSet,
    target_step: usize,
) -> Result<SequenceState> {
    state.apply(decisions, target_step)
}

/// Unmask decisions `{(position, token)}`, kept sorted by position.
///
/// Sorting makes equality of two sets a structural comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, TokenId)>", into = "Vec<(usize, TokenId)>")]
pub struct DecisionSet {
    entries: Vec<(usize, TokenId)>,
}

impl TryFrom<Vec<(usize, TokenId)>> for DecisionSet {
    type Error = Error;

    fn try_from(entries: Vec<(usize, TokenId)>) -> Result<Self> {
        DecisionSet::new(entries)
    }
}

impl From<DecisionSet> for Vec<(usize, TokenId)> {
    fn from(set: DecisionSet) -> Self {
        set.entries
    }
}

impl DecisionSet {
    pub fn new(mut entries: Vec<(usize, TokenId)>) -> Result<Self> {
        entries.sort_unstable();
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract(format!(
                "duplicate decision position {}",
                w[0].0
            )));
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(usize, TokenId)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(p, _)| p)
    }

    /// Set union. Fails if both sides decide the same position.
    pub fn union(&self, other: &DecisionSet) -> Result<DecisionSet> {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        DecisionSet::new(entries)
    }

    /// Union of many sets; `None` when two of them overlap.
    pub fn union_all<'a>(sets: impl IntoIterator<Item = &'a DecisionSet>) -> Option<DecisionSet> {
        let entries = sets
            .into_iter()
            .flat_map(|s| s.entries.iter().copied())
            .collect();
        DecisionSet::new(entries).ok()
    }
}
