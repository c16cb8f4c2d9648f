//! Static, threshold-parallel and draft-and-verify decoders.
//!
//! Static decoding queries the predictor once per schedule step and reveals
//! the step's quota greedily; its realized path is the oracle path.
//!
//! The draft-and-verify decoder reuses each estimate for more than one
//! step. At step `i` it builds drafts `i -> i+1, ..., i -> i+d_i` from the
//! single current estimate, evaluates all drafts in one batched call, and
//! advances every draft by one more greedy step (its target). Draft `k+1`
//! equal to target `k` certifies that jumping `k+1` steps at once made the
//! same decisions as stepping `k` then one more. The longest run of such
//! matches `m` is accepted: the decoder moves to draft `m+1` and keeps that
//! draft's batch estimate for the next round, so each round costs one call.
//! With a deterministic, batch-invariant predictor the output is bitwise
//! the static-decoding output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{MarginalPredictor, Metered, NfeCounter};
use crate::rng::DeterministicRng;
use crate::schedule::{TimeSchedule, TokenId};
use crate::scheduler::{Scheduler, SchedulerConfig, SchedulerKind};
use crate::state::{DecisionSet, SequenceState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecoderKind {
    Static,
    Threshold,
    Freedave { d: usize },
}

impl DecoderKind {
    pub fn label(&self) -> String {
        match self {
            DecoderKind::Static => "static".into(),
            DecoderKind::Threshold => "threshold".into(),
            DecoderKind::Freedave { d } => format!("freedave-d{d}"),
        }
    }
}

/// One draft-and-verify round.
///
/// `drafts[k]` sits at step `start_step + k + 1`; `targets[k]` is `drafts[k]`
/// advanced one greedy step under its own batch estimate. Drafts with no
/// masked position left have no target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub start_step: usize,
    pub draft_count: usize,
    pub drafts: Vec<SequenceState>,
    pub draft_decisions: Vec<DecisionSet>,
    pub targets: Vec<SequenceState>,
    pub target_decisions: Vec<DecisionSet>,
    pub matched: usize,
    pub accepted_step: usize,
    /// States sent to the predictor this round; 0 for the unverified final step.
    pub batch_size: usize,
}

impl RoundRecord {
    /// Longest run of `drafts[k+1] == targets[k]`, comparing whole sequences.
    pub fn matched_by_sequences(&self) -> usize {
        (0..self.draft_count.saturating_sub(1))
            .take_while(|&k| self.targets.get(k) == Some(&self.drafts[k + 1]))
            .count()
    }

    /// The same count from decision sets: `I(i -> i+k+2) == I(i -> i+k+1) ∪ I(i+k+1 -> i+k+2)`.
    pub fn matched_by_decisions(&self) -> usize {
        (0..self.draft_count.saturating_sub(1))
            .take_while(|&k| {
                let Some(step) = self.target_decisions.get(k) else {
                    return false;
                };
                self.draft_decisions[k]
                    .union(step)
                    .is_ok_and(|u| u == self.draft_decisions[k + 1])
            })
            .count()
    }
}

/// Verifier: how many steps a round may advance given `d` drafts.
pub fn verifier_h(round: &RoundRecord, d: usize) -> usize {
    if d <= 1 {
        1
    } else {
        round.matched_by_sequences() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub decoder: DecoderKind,
    pub tokens: Vec<TokenId>,
    /// Decision set of every jump taken, in order.
    pub path: Vec<DecisionSet>,
    /// Schedule step reached after each jump, starting from 0.
    pub cut_points: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub nfe: NfeCounter,
    pub steps_taken: usize,
    pub mask_id: TokenId,
}

impl DecodeResult {
    /// Rounds that issued a batched predictor call.
    pub fn batched_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.batch_size > 0).count()
    }

    /// Rebuilds the final tokens from `path`, enforcing that each position is
    /// revealed exactly once and never changes afterwards.
    pub fn replay(&self) -> Result<Vec<TokenId>> {
        if self.cut_points.len() != self.path.len() + 1 {
            return Err(Error::Contract(
                "cut points do not match path length".into(),
            ));
        }
        let mut state = SequenceState::all_masked(self.tokens.len(), self.mask_id);
        for (decisions, &step) in self.path.iter().zip(&self.cut_points[1..]) {
            state = state.reveal(decisions, step)?;
        }
        if !state.is_complete() {
            return Err(Error::Contract("path leaves masked positions".into()));
        }
        Ok(state.into_tokens())
    }
}

/// A predictor, scheduler config, schedule and seed: everything one decode needs.
pub struct Engine<'p> {
    predictor: &'p dyn MarginalPredictor,
    scheduler: SchedulerConfig,
    schedule: TimeSchedule,
    rng: DeterministicRng,
}

impl<'p> Engine<'p> {
    pub fn new(
        predictor: &'p dyn MarginalPredictor,
        scheduler: SchedulerConfig,
        schedule: TimeSchedule,
        rng: DeterministicRng,
    ) -> Self {
        Self {
            predictor,
            scheduler,
            schedule,
            rng,
        }
    }

    pub fn schedule(&self) -> &TimeSchedule {
        &self.schedule
    }

    pub fn scheduler_config(&self) -> &SchedulerConfig {
        &self.scheduler
    }

    fn length(&self) -> usize {
        self.schedule.length()
    }

    fn session(&self) -> (Metered<'p>, Scheduler, SequenceState) {
        let mask = self.predictor.vocab().mask_id();
        (
            Metered::new(self.predictor),
            Scheduler::new(self.scheduler, &self.rng, self.length()),
            SequenceState::all_masked(self.length(), mask),
        )
    }

    fn require_greedy(&self) -> Result<()> {
        match self.scheduler.kind {
            SchedulerKind::Greedy => Ok(()),
            SchedulerKind::Threshold { .. } => Err(Error::Config(
                "this decoder needs a greedy scheduler".into(),
            )),
        }
    }

    /// One predictor call and one greedy step per schedule step.
    pub fn decode_static(&self) -> Result<DecodeResult> {
        self.require_greedy()?;
        let (mut meter, sched, mut x) = self.session();
        let n = self.schedule.num_steps();
        let mut path = Vec::with_capacity(n);
        for i in 0..n {
            let step = |e| Error::at_step(i)(e);
            let est = meter.predict(&x).map_err(step)?;
            let decisions = sched
                .greedy_schedule(&est, &x, i, i + 1, &self.schedule)
                .map_err(step)?;
            x = x.apply(&decisions, i + 1).map_err(step)?;
            path.push(decisions);
        }
        Ok(DecodeResult {
            decoder: DecoderKind::Static,
            tokens: x.into_tokens(),
            steps_taken: path.len(),
            cut_points: (0..=n).collect(),
            path,
            rounds: Vec::new(),
            nfe: meter.counter(),
            mask_id: self.predictor.vocab().mask_id(),
        })
    }

    /// Reveals every confident position of the earliest open block per call.
    ///
    /// States are placed on the time axis at the last schedule step whose
    /// cumulative quota they have reached.
    pub fn decode_threshold(&self) -> Result<DecodeResult> {
        let SchedulerKind::Threshold { threshold } = self.scheduler.kind else {
            return Err(Error::Config(
                "threshold decoding needs a threshold scheduler".into(),
            ));
        };
        let (mut meter, sched, mut x) = self.session();
        let length = self.length();
        let mut path = Vec::new();
        let mut cut_points = vec![0];
        while !x.is_complete() {
            let at = x.step_index();
            let step = |e| Error::at_step(at)(e);
            let est = meter.predict(&x).map_err(step)?;
            let decisions = sched
                .threshold_schedule(&est, &x, threshold)
                .map_err(step)?;
            let revealed = length - x.masked_count() + decisions.len();
            let next = self.schedule.step_for_revealed(revealed);
            x = x.reveal(&decisions, next).map_err(step)?;
            cut_points.push(next);
            path.push(decisions);
        }
        Ok(DecodeResult {
            decoder: DecoderKind::Threshold,
            tokens: x.into_tokens(),
            steps_taken: path.len(),
            cut_points,
            path,
            rounds: Vec::new(),
            nfe: meter.counter(),
            mask_id: self.predictor.vocab().mask_id(),
        })
    }

    /// Lossless draft-and-verify decoding with up to `d` drafts per round.
    pub fn decode_freedave(&self, d: usize) -> Result<DecodeResult> {
        if d == 0 {
            return Err(Error::Config("draft steps d must be at least 1".into()));
        }
        self.require_greedy()?;
        let (mut meter, sched, mut x) = self.session();
        let n = self.schedule.num_steps();
        let mut est = meter.predict(&x).map_err(Error::at_step(0))?;
        let mut path = Vec::new();
        let mut cut_points = vec![0];
        let mut rounds = Vec::new();
        let mut i = 0;

        while i < n {
            let ctx = |e| Error::in_round(i)(e);
            let d_i = d.min(n - i);
            let draft_decisions = sched
                .greedy_drafts(&est, &x, i, d_i, &self.schedule)
                .map_err(ctx)?;
            let drafts = draft_decisions
                .iter()
                .enumerate()
                .map(|(k, dec)| x.apply(dec, i + k + 1))
                .collect::<Result<Vec<_>>>()
                .map_err(ctx)?;

            if i == n - 1 {
                // last step: draft 1 is the static step, nothing left to verify
                rounds.push(RoundRecord {
                    start_step: i,
                    draft_count: d_i,
                    drafts: drafts.clone(),
                    draft_decisions: draft_decisions.clone(),
                    targets: Vec::new(),
                    target_decisions: Vec::new(),
                    matched: 0,
                    accepted_step: i + 1,
                    batch_size: 0,
                });
                x = drafts[0].clone();
                path.push(draft_decisions[0].clone());
                cut_points.push(n);
                break;
            }

            // only the draft reaching step N can be fully unmasked, and it needs no target
            let live = drafts.iter().take_while(|s| !s.is_complete()).count();
            let mut batch = meter.predict_batch(&drafts[..live]).map_err(ctx)?;
            let mut targets = Vec::with_capacity(live);
            let mut target_decisions = Vec::with_capacity(live);
            for (k, (draft, draft_est)) in drafts.iter().zip(&batch).enumerate() {
                let from = i + k + 1;
                let step = sched
                    .greedy_schedule(draft_est, draft, from, from + 1, &self.schedule)
                    .map_err(ctx)?;
                targets.push(draft.apply(&step, from + 1).map_err(ctx)?);
                target_decisions.push(step);
            }

            let mut round = RoundRecord {
                start_step: i,
                draft_count: d_i,
                drafts,
                draft_decisions,
                targets,
                target_decisions,
                matched: 0,
                accepted_step: 0,
                batch_size: live,
            };
            let m = round.matched_by_sequences();
            round.matched = m;
            round.accepted_step = i + m + 1;

            i += m + 1;
            x = round.drafts[m].clone();
            path.push(round.draft_decisions[m].clone());
            cut_points.push(i);
            if i < n {
                est = batch.swap_remove(m);
            }
            rounds.push(round);
        }

        Ok(DecodeResult {
            decoder: DecoderKind::Freedave { d },
            tokens: x.into_tokens(),
            steps_taken: path.len(),
            cut_points,
            path,
            rounds,
            nfe: meter.counter(),
            mask_id: self.predictor.vocab().mask_id(),
        })
    }
}
