//! Seeded random decoding instances shared by the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use freedave_core::bench::RunConfig;
use freedave_core::hash::mix64;
use freedave_core::predictor::{NgramPredictor, TablePredictor};
use freedave_core::{
    BlockLayout, DeterministicRng, MarginalPredictor, SamplingMode, SchedulerConfig, TimeSchedule,
    TokenId, Vocabulary,
};

pub const SIGMAS: [f64; 5] = [0.0, 0.25, 0.5, 0.8, 1.0];
pub const DRAFT_STEPS: [usize; 5] = [1, 2, 4, 8, 32];

/// Small deterministic stream of choices for one case.
pub struct Dice(u64);

impl Dice {
    pub fn new(stream: u64, index: u64) -> Self {
        Dice(mix64(stream ^ mix64(index)))
    }

    pub fn next(&mut self) -> u64 {
        self.0 = mix64(self.0);
        self.0
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next() % (hi - lo + 1) as u64) as usize
    }

    pub fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.range(0, items.len() - 1)]
    }

    pub fn coin(&mut self) -> bool {
        self.next() & 1 == 1
    }
}

pub struct Case {
    pub predictor: Box<dyn MarginalPredictor>,
    pub scheduler: SchedulerConfig,
    pub schedule: TimeSchedule,
    pub rng: DeterministicRng,
    pub d: usize,
    pub label: String,
}

pub struct CaseSpec {
    pub max_length: usize,
    pub max_steps: usize,
    /// Lower bound on the length relative to the step count.
    pub sigmas: &'static [f64],
    pub ngram: bool,
}

pub const LOSSLESS_SPEC: CaseSpec = CaseSpec {
    max_length: 32,
    max_steps: 32,
    sigmas: &SIGMAS,
    ngram: true,
};

pub const PATHLAB_SPEC: CaseSpec = CaseSpec {
    max_length: 24,
    max_steps: 12,
    sigmas: &[0.25, 0.5, 0.8, 1.0],
    ngram: false,
};

fn vocabulary(dice: &mut Dice) -> Vocabulary {
    // up to 16 real ids plus the mask: 17 ids in all
    let size = dice.range(2, 16) as u32;
    let eos = (size >= 3 && dice.coin()).then_some(size - 1);
    Vocabulary::new(size, size, eos).unwrap()
}

fn plain_tokens(vocab: &Vocabulary) -> Vec<TokenId> {
    vocab
        .real_tokens()
        .filter(|&t| Some(t) != vocab.eos_id())
        .collect()
}

pub fn random_case(spec: &CaseSpec, stream: u64, index: u64) -> Case {
    let mut dice = Dice::new(stream, index);
    let steps = dice.range(1, spec.max_steps);
    let length = dice.range(steps, spec.max_length.max(steps));
    let vocab = vocabulary(&mut dice);
    let plain = plain_tokens(&vocab);
    let seed = dice.next();

    let use_ngram = spec.ngram && dice.range(0, 5) == 0;
    let (predictor, kind): (Box<dyn MarginalPredictor>, String) = if use_ngram {
        let real: Vec<TokenId> = vocab.real_tokens().collect();
        let corpus: Vec<Vec<TokenId>> = (0..dice.range(1, 6))
            .map(|_| (0..dice.range(2, 12)).map(|_| dice.pick(&real)).collect())
            .collect();
        (
            Box::new(NgramPredictor::new(vocab, &corpus, length).unwrap()),
            "ngram".into(),
        )
    } else {
        let sigma = dice.pick(spec.sigmas);
        let target: Vec<TokenId> = (0..length).map(|_| dice.pick(&plain)).collect();
        (
            Box::new(TablePredictor::new(vocab, target, sigma, seed).unwrap()),
            format!("table(sigma={sigma})"),
        )
    };

    let block = dice.pick(&[1, 4, length]);
    let mut scheduler = SchedulerConfig::greedy(BlockLayout::new(block).unwrap());
    let stochastic = dice.coin();
    if stochastic {
        let temperature = dice.pick(&[0.1, 0.5, 1.0, 2.0]);
        scheduler = scheduler
            .with_sampling(SamplingMode::Stochastic, temperature)
            .unwrap();
    }
    let d = dice.pick(&DRAFT_STEPS);
    Case {
        predictor,
        scheduler,
        schedule: TimeSchedule::uniform(length, steps).unwrap(),
        rng: DeterministicRng::new(seed),
        d,
        label: format!(
            "case {index}: {kind} L={length} N={steps} |V|={} block={block} stochastic={stochastic} d={d}",
            vocab.size()
        ),
    }
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn shipped(name: &str) -> RunConfig {
    RunConfig::load(configs_dir().join(name)).unwrap()
}
