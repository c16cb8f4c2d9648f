//! Marginal predictors: the `f(x_t, t)` that decoders query.
//!
//! A predictor maps a partially masked state to one categorical row per
//! masked position. Implementations must be pure functions of
//! `(tokens, step_index)`: decoders rely on a batched evaluation returning
//! bitwise the same rows as single evaluations, whatever the batch shape.
//!
//! Call accounting lives in [`Metered`], which decoders wrap around the
//! predictor for the duration of one session.

mod ngram;
mod table;
mod trace;

pub use ngram::NgramPredictor;
pub use table::TablePredictor;
pub use trace::{
    RecordingPredictor, ReplayPredictor, TraceFile, TraceHeader, TraceMeta, TraceRecord,
    TRACE_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{TokenId, Vocabulary};
use crate::state::SequenceState;

/// Tolerance on row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Dense categorical rows for the masked positions of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    width: usize,
    positions: Vec<usize>,
    probs: Vec<f64>,
}

impl MarginalEstimate {
    /// `probs` holds `positions.len()` rows of `width` entries, row-major.
    pub fn new(width: usize, positions: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width * positions.len() {
            return Err(Error::Predictor(format!(
                "{} probabilities for {} rows of width {width}",
                probs.len(),
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Predictor(
                "row positions must be strictly increasing".into(),
            ));
        }
        let est = Self {
            width,
            positions,
            probs,
        };
        for (pos, row) in est.iter() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Predictor(format!(
                    "row {pos} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Predictor(format!("row {pos} sums to {sum}")));
            }
        }
        Ok(est)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.probs[k * self.width..(k + 1) * self.width]
    }

    pub fn row_for(&self, position: usize) -> Option<&[f64]> {
        self.positions
            .binary_search(&position)
            .ok()
            .map(|k| self.row(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.positions
            .iter()
            .copied()
            .zip(self.probs.chunks_exact(self.width.max(1)))
    }

    /// Highest-probability token of each row, ties to the lower id.
    pub fn argmax_tokens(&self) -> Vec<(usize, TokenId)> {
        self.iter().map(|(p, row)| (p, argmax(row))).collect()
    }

    /// Checks that rows exist exactly for the masked positions of `state`.
    pub fn check_covers(&self, state: &SequenceState) -> Result<()> {
        if !self.positions.iter().copied().eq(state.masked_positions()) {
            return Err(Error::Contract(format!(
                "estimate rows {:?} do not match the state's masked positions",
                self.positions
            )));
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.positions == other.positions
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn argmax(row: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Forward-call accounting for one decode session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeCounter {
    /// Predictor invocations; a batch counts once.
    pub forward_calls: u64,
    /// Sequences evaluated, summed over batches.
    pub sequence_evaluations: u64,
    /// Largest batch seen.
    pub peak_batch: usize,
}

pub trait MarginalPredictor: Send + Sync {
    fn vocab(&self) -> Vocabulary;

    /// Rows for every masked position of `state`, at time index `state.step_index()`.
    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate>;

    fn estimate_batch(&self, states: &[SequenceState]) -> Result<Vec<MarginalEstimate>> {
        states
            .iter()
            .enumerate()
            .map(|(index, s)| {
                self.estimate(s).map_err(|e| Error::BatchElement {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<P: MarginalPredictor + ?Sized> MarginalPredictor for &P {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        (**self).estimate(state)
    }

    fn estimate_batch(&self, states: &[SequenceState]) -> Result<Vec<MarginalEstimate>> {
        (**self).estimate_batch(states)
    }
}

impl<P: MarginalPredictor + ?Sized> MarginalPredictor for Box<P> {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        (**self).estimate(state)
    }

    fn estimate_batch(&self, states: &[SequenceState]) -> Result<Vec<MarginalEstimate>> {
        (**self).estimate_batch(states)
    }
}

/// Shared precondition for every predictor query.
pub(crate) fn check_query(state: &SequenceState, vocab: &Vocabulary, length: usize) -> Result<()> {
    if state.mask_id() != vocab.mask_id() {
        return Err(Error::Contract(format!(
            "state uses mask id {} but the vocabulary's mask is {}",
            state.mask_id(),
            vocab.mask_id()
        )));
    }
    if state.len() != length {
        return Err(Error::Contract(format!(
            "state length {} but predictor serves length {length}",
            state.len()
        )));
    }
    if state.is_complete() {
        return Err(Error::NothingToPredict);
    }
    Ok(())
}

/// Counting wrapper around a predictor for one decode session.
pub struct Metered<'a> {
    inner: &'a dyn MarginalPredictor,
    counter: NfeCounter,
}

impl<'a> Metered<'a> {
    pub fn new(inner: &'a dyn MarginalPredictor) -> Self {
        Self {
            inner,
            counter: NfeCounter::default(),
        }
    }

    pub fn vocab(&self) -> Vocabulary {
        self.inner.vocab()
    }

    pub fn counter(&self) -> NfeCounter {
        self.counter
    }

    pub fn predict(&mut self, state: &SequenceState) -> Result<MarginalEstimate> {
        self.counter.forward_calls += 1;
        self.counter.sequence_evaluations += 1;
        self.counter.peak_batch = self.counter.peak_batch.max(1);
        self.inner.estimate(state)
    }

    pub fn predict_batch(&mut self, states: &[SequenceState]) -> Result<Vec<MarginalEstimate>> {
        if states.is_empty() {
            return Err(Error::Contract("empty predictor batch".into()));
        }
        self.counter.forward_calls += 1;
        self.counter.sequence_evaluations += states.len() as u64;
        self.counter.peak_batch = self.counter.peak_batch.max(states.len());
        self.inner.estimate_batch(states)
    }
}
