mod common;

use freedave_core::predictor::{NgramPredictor, TablePredictor, ROW_SUM_TOLERANCE};
use freedave_core::{
    BlockLayout, DecisionSet, DeterministicRng, Engine, MarginalPredictor, Scheduler,
    SchedulerConfig, SequenceState, TimeSchedule, TokenId, Vocabulary,
};
use proptest::prelude::*;

use common::{random_case, LOSSLESS_SPEC};

/// A state over `length` positions with some tokens revealed.
fn arb_state(length: usize, vocab: Vocabulary) -> impl Strategy<Value = SequenceState> {
    let real = vocab.size();
    proptest::collection::vec(proptest::option::of(0..real), length).prop_map(move |slots| {
        let tokens = slots
            .into_iter()
            .map(|s| s.unwrap_or(vocab.mask_id()))
            .collect();
        SequenceState::from_tokens(tokens, 0, vocab.mask_id())
    })
}

fn table(length: usize, size: u32, sigma: f64, seed: u64) -> TablePredictor {
    let vocab = Vocabulary::with_trailing_mask(size).unwrap();
    let target = (0..length as u32).map(|i| (i * 7 + 3) % size).collect();
    TablePredictor::new(vocab, target, sigma, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn rows_are_distributions(
        (state, sigma, seed) in (1usize..12, 2u32..10).prop_flat_map(|(l, v)| {
            (arb_state(l, Vocabulary::with_trailing_mask(v).unwrap()),
             prop::sample::select(vec![0.0, 0.25, 0.5, 0.8, 1.0]),
             any::<u64>())
        })
    ) {
        prop_assume!(!state.is_complete());
        let size = state.mask_id();
        let p = table(state.len(), size, sigma, seed);
        let est = p.estimate(&state).unwrap();
        prop_assert_eq!(est.positions().to_vec(), state.masked_positions().collect::<Vec<_>>());
        for (_, row) in est.iter() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE);
            prop_assert_eq!(row[size as usize..].iter().sum::<f64>(), 0.0);
        }

        let corpus = vec![vec![0, 1, 0, 1], (0..size).collect()];
        let ngram = NgramPredictor::new(Vocabulary::with_trailing_mask(size).unwrap(), &corpus, state.len()).unwrap();
        for (_, row) in ngram.estimate(&state).unwrap().iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE);
        }
    }

    #[test]
    fn predictors_are_deterministic_and_batch_invariant(
        (states, sigma, seed) in (1usize..10, 2u32..8).prop_flat_map(|(l, v)| {
            let vocab = Vocabulary::with_trailing_mask(v).unwrap();
            (proptest::collection::vec(arb_state(l, vocab), 1..6),
             prop::sample::select(vec![0.0, 0.5, 1.0]),
             any::<u64>())
        })
    ) {
        prop_assume!(states.iter().all(|s| !s.is_complete()));
        let p = table(states[0].len(), states[0].mask_id(), sigma, seed);
        let batch = p.estimate_batch(&states).unwrap();
        for (s, b) in states.iter().zip(&batch) {
            let single = p.estimate(s).unwrap();
            prop_assert!(single.bitwise_eq(b));
            prop_assert!(single.bitwise_eq(&p.estimate(s).unwrap()));
        }
        // order inside the batch does not matter
        let reversed: Vec<_> = states.iter().rev().cloned().collect();
        let back = p.estimate_batch(&reversed).unwrap();
        for (a, b) in batch.iter().zip(back.iter().rev()) {
            prop_assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn quotas_add_up(length in 1usize..64, steps in 1usize..64) {
        prop_assume!(steps <= length);
        let s = TimeSchedule::uniform(length, steps).unwrap();
        prop_assert_eq!(s.unmask_quota(0, steps).unwrap(), length);
        for i in 0..steps {
            for j in i + 1..=steps {
                for k in j..=steps {
                    if k > j {
                        prop_assert_eq!(
                            s.unmask_quota(i, k).unwrap(),
                            s.unmask_quota(i, j).unwrap() + s.unmask_quota(j, k).unwrap()
                        );
                    }
                }
            }
        }
        prop_assert!(s.steps().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn decoding_unmasks_monotonically(index in 0u64..10_000) {
        let case = random_case(&LOSSLESS_SPEC, 0x5eed, index);
        let engine = Engine::new(case.predictor.as_ref(), case.scheduler, case.schedule.clone(), case.rng);
        let out = engine.decode_freedave(case.d).unwrap();
        let mut state = SequenceState::all_masked(out.tokens.len(), out.mask_id);
        let mut masked = state.masked_count();
        for (decisions, &step) in out.path.iter().zip(&out.cut_points[1..]) {
            let next = state.apply(decisions, step).unwrap();
            // every revealed token stays put
            for (pos, tok) in state.revealed() {
                prop_assert_eq!(next.tokens()[pos], tok);
            }
            prop_assert_eq!(next.masked_count(), masked - decisions.len());
            prop_assert_eq!(decisions.len(), case.schedule.unmask_quota(state.step_index(), step).unwrap());
            masked = next.masked_count();
            state = next;
        }
        prop_assert_eq!(state.tokens(), &out.tokens[..]);
        prop_assert_eq!(out.replay().unwrap(), out.tokens);
    }

    #[test]
    fn freedave_is_lossless(index in 0u64..1_000_000) {
        let case = random_case(&LOSSLESS_SPEC, 0xfd, index);
        let engine = Engine::new(case.predictor.as_ref(), case.scheduler, case.schedule.clone(), case.rng);
        let reference = engine.decode_static().unwrap();
        let out = engine.decode_freedave(case.d).unwrap();
        prop_assert_eq!(&out.tokens, &reference.tokens, "{}", case.label);
        prop_assert!(out.nfe.forward_calls <= reference.nfe.forward_calls + 1);
        let advanced: usize = out.rounds.iter().map(|r| r.matched + 1).sum();
        prop_assert_eq!(advanced, case.schedule.num_steps());
        for r in &out.rounds {
            prop_assert_eq!(r.matched, r.matched_by_decisions());
        }
    }
}

/// Every state reachable by revealing some subset of positions with target tokens.
fn reachable_states(target: &[TokenId], mask: TokenId) -> Vec<SequenceState> {
    (0u32..1 << target.len())
        .map(|bits| {
            let tokens = target
                .iter()
                .enumerate()
                .map(|(i, &t)| if bits >> i & 1 == 1 { t } else { mask })
                .collect();
            SequenceState::from_tokens(tokens, 0, mask)
        })
        .collect()
}

#[test]
fn context_free_rows_ignore_revealed_tokens() {
    for length in 1..=6 {
        let p = table(length, 4, 0.0, 9);
        let mask = p.vocab().mask_id();
        let all = p
            .estimate(&SequenceState::all_masked(length, mask))
            .unwrap();
        // revealed tokens differ from target here, so only the masked set matters
        for state in reachable_states(&vec![3; length], mask) {
            if state.is_complete() {
                continue;
            }
            let est = p.estimate(&state).unwrap();
            for (pos, row) in est.iter() {
                assert_eq!(row, all.row_for(pos).unwrap());
            }
        }
    }
}

/// With context-free rows, one long greedy jump decides exactly what the
/// single steps it spans decide.
#[test]
fn context_free_union_property() {
    for length in 1..=6 {
        for steps in 1..=length {
            for block in [1, 2, length] {
                let p = table(length, 5, 0.0, 1);
                let schedule = TimeSchedule::uniform(length, steps).unwrap();
                let cfg = SchedulerConfig::greedy(BlockLayout::new(block).unwrap());
                let sched = Scheduler::new(cfg, &DeterministicRng::new(0), length);
                let mask = p.vocab().mask_id();

                let mut states = vec![SequenceState::all_masked(length, mask)];
                let mut single = Vec::new();
                for i in 0..steps {
                    let est = p.estimate(&states[i]).unwrap();
                    let dec = sched
                        .greedy_schedule(&est, &states[i], i, i + 1, &schedule)
                        .unwrap();
                    states.push(states[i].apply(&dec, i + 1).unwrap());
                    single.push(dec);
                }
                for i in 0..steps {
                    let est = p.estimate(&states[i]).unwrap();
                    for j in i + 1..=steps {
                        let jump = sched
                            .greedy_schedule(&est, &states[i], i, j, &schedule)
                            .unwrap();
                        let union = DecisionSet::union_all(&single[i..j]).unwrap();
                        assert_eq!(jump, union, "L={length} N={steps} B={block} {i}->{j}");
                    }
                }
            }
        }
    }
}
