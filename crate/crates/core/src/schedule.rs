//! Vocabularies, time schedules, noise schedules and block layouts.
//!
//! A [`TimeSchedule`] fixes the cut points `1 = t_0 > t_1 > ... > t_N = 0`
//! together with how many tokens each step unmasks. Decoders are driven by
//! the quotas; the [`AlphaSchedule`] only matters to the forward/reverse
//! process in [`crate::diffusion`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Token id space with the absorbing mask token and an optional end-of-sequence token.
///
/// Real tokens are the ids in `0..size` other than `mask_id`. The mask id may
/// sit inside that range (as in most pretrained vocabularies) or just past it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary")]
pub struct Vocabulary {
    size: u32,
    mask_id: TokenId,
    eos_id: Option<TokenId>,
}

#[derive(Deserialize)]
struct RawVocabulary {
    size: u32,
    mask_id: TokenId,
    #[serde(default)]
    eos_id: Option<TokenId>,
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        Vocabulary::new(raw.size, raw.mask_id, raw.eos_id)
    }
}

impl Vocabulary {
    pub fn new(size: u32, mask_id: TokenId, eos_id: Option<TokenId>) -> Result<Self> {
        if size == 0 {
            return Err(Error::Vocabulary("size must be positive".into()));
        }
        let vocab = Self {
            size,
            mask_id,
            eos_id,
        };
        if vocab.real_count() == 0 {
            return Err(Error::Vocabulary("no real tokens besides the mask".into()));
        }
        if let Some(eos) = eos_id {
            if eos == mask_id {
                return Err(Error::Vocabulary(format!(
                    "eos_id and mask_id coincide ({eos})"
                )));
            }
            if eos >= size {
                return Err(Error::Vocabulary(format!(
                    "eos_id {eos} must be a real token id below size {size}"
                )));
            }
        }
        Ok(vocab)
    }

    /// Vocabulary of `size` real tokens with the mask placed right after them.
    pub fn with_trailing_mask(size: u32) -> Result<Self> {
        Self::new(size, size, None)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos_id
    }

    /// Width of a probability row: one slot per id in `0..size`.
    pub fn row_width(&self) -> usize {
        self.size as usize
    }

    pub fn id_space(&self) -> u32 {
        self.size.max(self.mask_id + 1)
    }

    pub fn is_real(&self, id: TokenId) -> bool {
        id < self.size && id != self.mask_id
    }

    pub fn real_count(&self) -> usize {
        if self.mask_id < self.size {
            self.size as usize - 1
        } else {
            self.size as usize
        }
    }

    pub fn real_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(move |&id| id != self.mask_id)
    }
}

/// Cut points of a decoding run and the per-step unmask quotas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeSchedule")]
pub struct TimeSchedule {
    steps: Vec<f64>,
    quotas: Vec<usize>,
}

#[derive(Deserialize)]
struct RawTimeSchedule {
    steps: Vec<f64>,
    quotas: Vec<usize>,
}

impl TryFrom<RawTimeSchedule> for TimeSchedule {
    type Error = Error;

    fn try_from(raw: RawTimeSchedule) -> Result<Self> {
        TimeSchedule::new(raw.steps, raw.quotas)
    }
}

impl TimeSchedule {
    pub fn new(steps: Vec<f64>, quotas: Vec<usize>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Schedule("need at least t_0 and t_N".into()));
        }
        if quotas.len() + 1 != steps.len() {
            return Err(Error::Schedule(format!(
                "{} time levels need {} quotas, got {}",
                steps.len(),
                steps.len() - 1,
                quotas.len()
            )));
        }
        if steps[0] != 1.0 || *steps.last().unwrap() != 0.0 {
            return Err(Error::Schedule(
                "schedule must run from t = 1 to t = 0".into(),
            ));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Schedule(
                "time levels must be strictly decreasing".into(),
            ));
        }
        if quotas.contains(&0) {
            return Err(Error::Schedule(
                "every step must unmask at least one token".into(),
            ));
        }
        Ok(Self { steps, quotas })
    }

    /// `N` steps over a length-`L` sequence with `t_i = 1 - i/N`.
    ///
    /// Quotas split `L` as evenly as possible, earlier steps taking the remainder.
    pub fn uniform(length: usize, num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Schedule("step count must be positive".into()));
        }
        if num_steps > length {
            return Err(Error::Schedule(format!(
                "{num_steps} steps over {length} tokens leaves a step with nothing to unmask"
            )));
        }
        let n = num_steps as f64;
        let steps = (0..=num_steps)
            .map(|i| {
                if i == num_steps {
                    0.0
                } else {
                    1.0 - i as f64 / n
                }
            })
            .collect();
        let base = length / num_steps;
        let extra = length % num_steps;
        let quotas = (0..num_steps)
            .map(|i| base + usize::from(i < extra))
            .collect();
        Self::new(steps, quotas)
    }

    pub fn num_steps(&self) -> usize {
        self.quotas.len()
    }

    /// Sequence length `L` (sum of all quotas).
    pub fn length(&self) -> usize {
        self.quotas.iter().sum()
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    pub fn time(&self, i: usize) -> f64 {
        self.steps[i]
    }

    /// Tokens a scheduler must unmask when jumping from step `i` to step `j`.
    pub fn unmask_quota(&self, i: usize, j: usize) -> Result<usize> {
        if i >= j {
            return Err(Error::Schedule(format!(
                "quota needs i < j, got ({i}, {j})"
            )));
        }
        if j > self.num_steps() {
            return Err(Error::Schedule(format!(
                "step {j} past the end of a {}-step schedule",
                self.num_steps()
            )));
        }
        Ok(self.quotas[i..j].iter().sum())
    }

    /// Tokens revealed after reaching step `i` from the all-mask state.
    pub fn revealed_at(&self, i: usize) -> usize {
        self.quotas[..i.min(self.quotas.len())].iter().sum()
    }

    /// Largest step index whose cumulative quota does not exceed `revealed`.
    ///
    /// Used to place off-schedule states (threshold decoding) on the time axis.
    pub fn step_for_revealed(&self, revealed: usize) -> usize {
        let mut acc = 0;
        for (i, q) in self.quotas.iter().enumerate() {
            acc += q;
            if acc > revealed {
                return i;
            }
        }
        self.num_steps()
    }
}

/// Noise schedule `alpha_t`: probability a clean token survives to time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSchedule {
    #[default]
    Linear,
    Cosine,
}

impl AlphaSchedule {
    pub fn alpha(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(match self {
            AlphaSchedule::Linear => 1.0 - t,
            AlphaSchedule::Cosine => {
                if t == 1.0 {
                    0.0
                } else {
                    (std::f64::consts::FRAC_PI_2 * t).cos()
                }
            }
        })
    }
}

pub fn alpha_linear(t: f64) -> Result<f64> {
    AlphaSchedule::Linear.alpha(t)
}

/// Semi-autoregressive block partition `[0,B), [B,2B), ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BlockLayout {
    block_size: usize,
}

impl TryFrom<usize> for BlockLayout {
    type Error = Error;

    fn try_from(block_size: usize) -> Result<Self> {
        BlockLayout::new(block_size)
    }
}

impl From<BlockLayout> for usize {
    fn from(layout: BlockLayout) -> usize {
        layout.block_size
    }
}

impl BlockLayout {
    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        Ok(Self { block_size })
    }

    /// A single block covering the whole sequence.
    pub fn unblocked(length: usize) -> Self {
        Self {
            block_size: length.max(1),
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_of(&self, position: usize) -> usize {
        position / self.block_size
    }

    pub fn num_blocks(&self, length: usize) -> usize {
        length.div_ceil(self.block_size)
    }

    pub fn block_range(&self, block: usize, length: usize) -> std::ops::Range<usize> {
        let start = (block * self.block_size).min(length);
        start..(start + self.block_size).min(length)
    }
}
