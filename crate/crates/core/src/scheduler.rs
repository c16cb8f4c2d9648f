//! Remasking schedulers: which masked positions to reveal, and with what.
//!
//! Every masked position first gets a candidate `(token, confidence)` from
//! its row. The greedy scheduler ranks candidates by
//! `(block, -confidence, position)` and takes as many as the schedule's
//! quota asks for, so earlier blocks are always finished first and a
//! multi-step jump is just a longer prefix of the same ranking. The
//! threshold scheduler takes every candidate of the earliest open block
//! whose confidence clears `tau`, or the single best one if none does.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{argmax, MarginalEstimate};
use crate::rng::DeterministicRng;
use crate::schedule::{BlockLayout, TimeSchedule, TokenId};
use crate::state::{DecisionSet, SequenceState};

/// Stream label for stochastic token draws.
pub const TOKEN_STREAM: &str = "token";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchedulerKind {
    Greedy,
    Threshold { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Argmax,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedulerConfig")]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub layout: BlockLayout,
    pub sampling: SamplingMode,
    pub temperature: f64,
}

#[derive(Deserialize)]
struct RawSchedulerConfig {
    kind: SchedulerKind,
    layout: BlockLayout,
    #[serde(default)]
    sampling: SamplingMode,
    #[serde(default = "default_temperature")]
    temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl TryFrom<RawSchedulerConfig> for SchedulerConfig {
    type Error = Error;

    fn try_from(raw: RawSchedulerConfig) -> Result<Self> {
        SchedulerConfig::new(raw.kind, raw.layout, raw.sampling, raw.temperature)
    }
}

impl SchedulerConfig {
    pub fn new(
        kind: SchedulerKind,
        layout: BlockLayout,
        sampling: SamplingMode,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if let SchedulerKind::Threshold { threshold } = kind {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Config(format!(
                    "threshold must lie in (0, 1], got {threshold}"
                )));
            }
        }
        Ok(Self {
            kind,
            layout,
            sampling,
            temperature,
        })
    }

    /// Greedy argmax scheduler at temperature 1.
    pub fn greedy(layout: BlockLayout) -> Self {
        Self {
            kind: SchedulerKind::Greedy,
            layout,
            sampling: SamplingMode::Argmax,
            temperature: 1.0,
        }
    }

    pub fn threshold(layout: BlockLayout, threshold: f64) -> Result<Self> {
        Self::new(
            SchedulerKind::Threshold { threshold },
            layout,
            SamplingMode::Argmax,
            1.0,
        )
    }

    pub fn with_sampling(mut self, sampling: SamplingMode, temperature: f64) -> Result<Self> {
        self.sampling = sampling;
        self.temperature = temperature;
        Self::new(self.kind, self.layout, self.sampling, self.temperature)
    }

    pub fn with_kind(self, kind: SchedulerKind) -> Result<Self> {
        Self::new(kind, self.layout, self.sampling, self.temperature)
    }
}

/// A masked position's proposed token and the confidence attached to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub position: usize,
    pub token: TokenId,
    pub confidence: f64,
}

/// Scheduler bound to one decode session: config plus the per-position draws.
#[derive(Debug, Clone)]
pub struct Scheduler {
    cfg: SchedulerConfig,
    draws: Option<Vec<f64>>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig, rng: &DeterministicRng, length: usize) -> Self {
        let draws = match cfg.sampling {
            SamplingMode::Argmax => None,
            SamplingMode::Stochastic => Some(rng.uniforms(TOKEN_STREAM, length)),
        };
        Self { cfg, draws }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    fn choose(&self, position: usize, row: &[f64]) -> Candidate {
        let scaled;
        let row = if self.cfg.temperature == 1.0 {
            row
        } else {
            scaled = temper(row, self.cfg.temperature);
            &scaled[..]
        };
        let token = match &self.draws {
            None => argmax(row),
            Some(draws) => inverse_cdf(row, draws[position]),
        };
        Candidate {
            position,
            token,
            confidence: row[token as usize],
        }
    }

    /// One candidate per estimated row, in position order.
    pub fn candidates(&self, estimate: &MarginalEstimate) -> Vec<Candidate> {
        estimate
            .iter()
            .map(|(p, row)| self.choose(p, row))
            .collect()
    }

    /// Candidates in greedy priority order: block, then confidence, then position.
    pub fn ranked(
        &self,
        estimate: &MarginalEstimate,
        state: &SequenceState,
    ) -> Result<Vec<Candidate>> {
        check_estimate(estimate, state)?;
        let layout = self.cfg.layout;
        let mut ranked = self.candidates(estimate);
        ranked.sort_by(|a, b| {
            layout
                .block_of(a.position)
                .cmp(&layout.block_of(b.position))
                .then_with(|| by_confidence(a, b))
        });
        Ok(ranked)
    }

    /// Greedy decisions for a jump from step `i` to step `j`.
    pub fn greedy_schedule(
        &self,
        estimate: &MarginalEstimate,
        state: &SequenceState,
        i: usize,
        j: usize,
        schedule: &TimeSchedule,
    ) -> Result<DecisionSet> {
        let quota = schedule.unmask_quota(i, j)?;
        let ranked = self.ranked(estimate, state)?;
        take_prefix(&ranked, quota)
    }

    /// Greedy decisions for jumps `i -> i+1, i -> i+2, ..., i -> i+count`,
    /// all from the one estimate.
    pub fn greedy_drafts(
        &self,
        estimate: &MarginalEstimate,
        state: &SequenceState,
        i: usize,
        count: usize,
        schedule: &TimeSchedule,
    ) -> Result<Vec<DecisionSet>> {
        let ranked = self.ranked(estimate, state)?;
        (1..=count)
            .map(|k| take_prefix(&ranked, schedule.unmask_quota(i, i + k)?))
            .collect()
    }

    /// Threshold decisions restricted to the earliest block with masked positions.
    pub fn threshold_schedule(
        &self,
        estimate: &MarginalEstimate,
        state: &SequenceState,
        threshold: f64,
    ) -> Result<DecisionSet> {
        check_estimate(estimate, state)?;
        let layout = self.cfg.layout;
        let first_block = layout.block_of(estimate.positions()[0]);
        let open: Vec<Candidate> = self
            .candidates(estimate)
            .into_iter()
            .filter(|c| layout.block_of(c.position) == first_block)
            .collect();
        let mut chosen: Vec<(usize, TokenId)> = open
            .iter()
            .filter(|c| c.confidence >= threshold)
            .map(|c| (c.position, c.token))
            .collect();
        if chosen.is_empty() {
            let best = open
                .iter()
                .min_by(|a, b| by_confidence(a, b))
                .expect("earliest block has a masked position");
            chosen.push((best.position, best.token));
        }
        DecisionSet::new(chosen)
    }
}

fn by_confidence(a: &Candidate, b: &Candidate) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.position.cmp(&b.position))
}

fn check_estimate(estimate: &MarginalEstimate, state: &SequenceState) -> Result<()> {
    if estimate.is_empty() {
        return Err(Error::Contract("scheduler given an empty estimate".into()));
    }
    estimate.check_covers(state)
}

fn take_prefix(ranked: &[Candidate], quota: usize) -> Result<DecisionSet> {
    if quota > ranked.len() {
        return Err(Error::Contract(format!(
            "quota {quota} exceeds the {} masked positions",
            ranked.len()
        )));
    }
    DecisionSet::new(
        ranked[..quota]
            .iter()
            .map(|c| (c.position, c.token))
            .collect(),
    )
}

/// `p^(1/T)`, renormalised. Zero entries stay zero.
fn temper(row: &[f64], temperature: f64) -> Vec<f64> {
    let max_log = row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((p.ln() - max_log) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Smallest id whose cumulative mass exceeds `u`, scanning ids in ascending order.
fn inverse_cdf(row: &[f64], u: f64) -> TokenId {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (v, &p) in row.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = v;
            if u < cum {
                return v as TokenId;
            }
        }
    }
    last_positive as TokenId
}

pub(crate) fn sample_token(row: &[f64], u: f64) -> TokenId {
    inverse_cdf(row, u)
}
