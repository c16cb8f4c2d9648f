//! JSON run configuration shared by the CLI, the shipped configs and tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{DecodeResult, DecoderKind, Engine};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::predictor::{MarginalPredictor, NgramPredictor, ReplayPredictor, TablePredictor};
use crate::rng::DeterministicRng;
use crate::schedule::{BlockLayout, TimeSchedule, TokenId, Vocabulary};
use crate::scheduler::{SamplingMode, SchedulerConfig, SchedulerKind};

pub const CONFIG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Required unless the predictor is a trace, which carries its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocabulary>,
    pub predictor: PredictorSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub scheduler: SamplingSpec,
    pub decoder: DecoderSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Directory relative trace paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PredictorSpec {
    /// Synthetic table predictor; `seed` defaults to the run seed.
    Table {
        target: Vec<TokenId>,
        sensitivity: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Ngram {
        corpus: Vec<Vec<TokenId>>,
    },
    Trace {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// Defaults to the table target length or the trace header length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    pub steps: usize,
    /// Defaults to the whole sequence as one block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "unit_temperature")]
    pub temperature: f64,
}

fn unit_temperature() -> f64 {
    1.0
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            sampling: SamplingMode::Argmax,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DecoderSpec {
    Static,
    Threshold { threshold: f64 },
    Freedave { d: usize },
}

impl DecoderSpec {
    pub fn kind(&self) -> DecoderKind {
        match *self {
            DecoderSpec::Static => DecoderKind::Static,
            DecoderSpec::Threshold { .. } => DecoderKind::Threshold,
            DecoderSpec::Freedave { d } => DecoderKind::Freedave { d },
        }
    }

    pub fn label(&self) -> String {
        self.kind().label()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg =
            Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Config(format!(
                "unsupported config format {} (expected {CONFIG_FORMAT})",
                self.format
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.vocab.is_none() && !matches!(self.predictor, PredictorSpec::Trace { .. }) {
            return Err(Error::Config("vocab is required for this predictor".into()));
        }
        match self.decoder {
            DecoderSpec::Freedave { d: 0 } => {
                Err(Error::Config("draft steps d must be at least 1".into()))
            }
            DecoderSpec::Threshold { threshold } if !(threshold > 0.0 && threshold <= 1.0) => Err(
                Error::Config(format!("threshold must lie in (0, 1], got {threshold}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn with_decoder(&self, decoder: DecoderSpec) -> Self {
        Self {
            decoder,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Stable digest of the whole config.
    pub fn digest(&self) -> String {
        digest_json(self)
    }

    /// Digest of everything but the decoder choice: runs sharing it can be
    /// compared against one static reference.
    pub fn group_digest(&self) -> String {
        let mut base = self.with_decoder(DecoderSpec::Static);
        base.name = None;
        base.repetitions = 1;
        digest_json(&base)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Builds the predictor, schedule and rng this config describes.
    pub fn prepare(&self) -> Result<Setup> {
        self.check()?;
        let (predictor, default_length, steps_hint): (Box<dyn MarginalPredictor>, usize, _) =
            match &self.predictor {
                PredictorSpec::Table {
                    target,
                    sensitivity,
                    seed,
                } => {
                    let vocab = self.vocab.expect("checked");
                    let p = TablePredictor::new(
                        vocab,
                        target.clone(),
                        *sensitivity,
                        seed.unwrap_or(self.seed),
                    )?;
                    (Box::new(p), target.len(), None)
                }
                PredictorSpec::Ngram { corpus } => {
                    let vocab = self.vocab.expect("checked");
                    let length = self.schedule.length.ok_or_else(|| {
                        Error::Config("an ngram predictor needs schedule.length".into())
                    })?;
                    (
                        Box::new(NgramPredictor::new(vocab, corpus, length)?),
                        length,
                        None,
                    )
                }
                PredictorSpec::Trace { path } => {
                    let replay = ReplayPredictor::open(self.resolve(path))?;
                    let header = replay.header().clone();
                    if let Some(v) = self.vocab {
                        if v != replay.vocab() {
                            return Err(Error::Config(
                                "config vocab disagrees with the trace header".into(),
                            ));
                        }
                    }
                    (Box::new(replay), header.length, Some(header.steps))
                }
            };
        let length = self.schedule.length.unwrap_or(default_length);
        if length != default_length {
            return Err(Error::Config(format!(
                "schedule.length {length} disagrees with the predictor's length {default_length}"
            )));
        }
        if let Some(steps) = steps_hint {
            if steps != self.schedule.steps {
                return Err(Error::Config(format!(
                    "schedule.steps {} disagrees with the trace's {steps}",
                    self.schedule.steps
                )));
            }
        }
        let schedule = TimeSchedule::uniform(length, self.schedule.steps)?;
        let layout = match self.schedule.block_size {
            Some(b) => BlockLayout::new(b)?,
            None => BlockLayout::unblocked(length),
        };
        // validated up front so a bad temperature is a config error for every decoder
        SchedulerConfig::greedy(layout)
            .with_sampling(self.scheduler.sampling, self.scheduler.temperature)?;
        Ok(Setup {
            predictor,
            schedule,
            layout,
            sampling: self.scheduler,
            rng: DeterministicRng::new(self.seed),
        })
    }
}

fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    format!("{:016x}", fnv1a64(&bytes))
}

/// A prepared config: everything needed to run any decoder on it.
pub struct Setup {
    pub predictor: Box<dyn MarginalPredictor>,
    pub schedule: TimeSchedule,
    pub layout: BlockLayout,
    pub sampling: SamplingSpec,
    pub rng: DeterministicRng,
}

impl Setup {
    pub fn vocab(&self) -> Vocabulary {
        self.predictor.vocab()
    }

    pub fn scheduler_config(&self, decoder: DecoderSpec) -> Result<SchedulerConfig> {
        let kind = match decoder {
            DecoderSpec::Threshold { threshold } => SchedulerKind::Threshold { threshold },
            _ => SchedulerKind::Greedy,
        };
        SchedulerConfig::new(
            kind,
            self.layout,
            self.sampling.sampling,
            self.sampling.temperature,
        )
    }

    pub fn engine(&self, decoder: DecoderSpec) -> Result<Engine<'_>> {
        Ok(Engine::new(
            self.predictor.as_ref(),
            self.scheduler_config(decoder)?,
            self.schedule.clone(),
            self.rng,
        ))
    }

    pub fn decode(&self, decoder: DecoderSpec) -> Result<DecodeResult> {
        let engine = self.engine(decoder)?;
        match decoder {
            DecoderSpec::Static => engine.decode_static(),
            DecoderSpec::Threshold { .. } => engine.decode_threshold(),
            DecoderSpec::Freedave { d } => engine.decode_freedave(d),
        }
    }
}
