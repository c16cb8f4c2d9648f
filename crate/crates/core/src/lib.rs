//! Masked-diffusion decoding: schedules, predictors, remasking schedulers,
//! static / threshold / draft-and-verify decoders, a brute-force path lab
//! and benchmark reporting.

pub mod bench;
pub mod diffusion;
pub mod engine;
pub mod error;
pub mod hash;
pub mod pathlab;
pub mod predictor;
pub mod rng;
pub mod schedule;
pub mod scheduler;
pub mod state;

pub use engine::{verifier_h, DecodeResult, DecoderKind, Engine, RoundRecord};
pub use error::{Error, ErrorClass, Result};
pub use pathlab::{FeasibleGraph, LemmaReport, OptimalPath, PathLab};
pub use predictor::{MarginalEstimate, MarginalPredictor, NfeCounter};
pub use rng::DeterministicRng;
pub use schedule::{AlphaSchedule, BlockLayout, TimeSchedule, TokenId, Vocabulary};
pub use scheduler::{SamplingMode, Scheduler, SchedulerConfig, SchedulerKind};
pub use state::{DecisionSet, SequenceState};
