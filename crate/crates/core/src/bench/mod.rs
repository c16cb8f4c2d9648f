//! Comparison runs, draft-step sweeps and their tabular reports.

mod config;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    DecoderSpec, PredictorSpec, RunConfig, SamplingSpec, ScheduleSpec, Setup, CONFIG_FORMAT,
};

use crate::engine::{DecodeResult, DecoderKind, Engine};
use crate::error::{Error, Result};
use crate::pathlab::{LemmaReport, OptimalPath, PathLab};
use crate::predictor::{MarginalPredictor, RecordingPredictor, TraceFile, TraceMeta};
use crate::schedule::{BlockLayout, TimeSchedule, TokenId, Vocabulary};
use crate::scheduler::{Scheduler, SchedulerConfig};
use crate::state::SequenceState;

/// Tokens before the first end-of-sequence token, not counting masks.
pub fn valid_token_count(tokens: &[TokenId], vocab: &Vocabulary) -> usize {
    let end = vocab
        .eos_id()
        .and_then(|eos| tokens.iter().position(|&t| t == eos))
        .unwrap_or(tokens.len());
    tokens[..end]
        .iter()
        .filter(|&&t| t != vocab.mask_id())
        .count()
}

/// One decoder run within a comparison group. Column order is the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub group: String,
    pub config_digest: String,
    pub decoder: String,
    pub d: Option<usize>,
    pub valid_tokens: usize,
    pub forward_calls: u64,
    pub sequence_evaluations: u64,
    pub rounds: usize,
    pub steps_taken: usize,
    pub peak_batch: usize,
    /// `peak_batch * length * row_width`: probabilities held at once.
    pub peak_memory_proxy: usize,
    pub wall_clock_secs: f64,
    pub throughput_nfe: f64,
    pub throughput_time: f64,
    pub nfe_speedup: f64,
    pub lossless: bool,
}

pub const CSV_HEADER: [&str; 16] = [
    "group",
    "config_digest",
    "decoder",
    "d",
    "valid_tokens",
    "forward_calls",
    "sequence_evaluations",
    "rounds",
    "steps_taken",
    "peak_batch",
    "peak_memory_proxy",
    "wall_clock_secs",
    "throughput_nfe",
    "throughput_time",
    "nfe_speedup",
    "lossless",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Full decode results (tokens, paths, rounds) aligned with `rows`.
    pub results: Vec<DecodeResult>,
}

fn throughput(tokens: usize, per: f64) -> f64 {
    if per > 0.0 {
        tokens as f64 / per
    } else {
        0.0
    }
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Writes JSON for a `.json` path and CSV otherwise.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            self.write_json(path)
        } else {
            self.write_csv(path)
        }
    }

    /// Parses a CSV report and checks every derived column against its inputs.
    pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::Config(format!(
                "unexpected report header {header:?}"
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<BenchRow>, _>>()?;
        check_rows(&rows)?;
        Ok(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

fn check_rows(rows: &[BenchRow]) -> Result<()> {
    let mut static_calls = BTreeMap::new();
    for row in rows.iter().filter(|r| r.decoder == "static") {
        static_calls.insert(row.group.as_str(), row.forward_calls);
    }
    for row in rows {
        let bad = |what: &str| {
            Err(Error::Config(format!(
                "report row {} / {}: {what} does not match its inputs",
                row.group, row.decoder
            )))
        };
        if row.throughput_nfe != throughput(row.valid_tokens, row.forward_calls as f64) {
            return bad("throughput_nfe");
        }
        if row.throughput_time != throughput(row.valid_tokens, row.wall_clock_secs) {
            return bad("throughput_time");
        }
        let Some(&reference) = static_calls.get(row.group.as_str()) else {
            return bad("group without a static row");
        };
        if row.nfe_speedup != reference as f64 / row.forward_calls as f64 {
            return bad("nfe_speedup");
        }
    }
    Ok(())
}

/// Runs `decoder` `repetitions` times; returns the result and the mean wall clock.
fn timed_decode(
    setup: &Setup,
    decoder: DecoderSpec,
    repetitions: usize,
) -> Result<(DecodeResult, f64)> {
    let mut first: Option<DecodeResult> = None;
    let mut total = 0.0;
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = setup.decode(decoder)?;
        total += start.elapsed().as_secs_f64();
        match &first {
            Some(f) if f.tokens != out.tokens || f.nfe != out.nfe => {
                return Err(Error::Contract(format!(
                    "{} is not deterministic across repetitions",
                    decoder.label()
                )));
            }
            Some(_) => {}
            None => first = Some(out),
        }
    }
    Ok((
        first.expect("at least one repetition"),
        total / repetitions as f64,
    ))
}

fn row_for(
    group: &str,
    digest: String,
    setup: &Setup,
    result: &DecodeResult,
    wall: f64,
    reference: &DecodeResult,
) -> BenchRow {
    let vocab = setup.vocab();
    let valid = valid_token_count(&result.tokens, &vocab);
    let d = match result.decoder {
        DecoderKind::Freedave { d } => Some(d),
        _ => None,
    };
    let rounds = if result.rounds.is_empty() {
        result.steps_taken
    } else {
        result.rounds.len()
    };
    BenchRow {
        group: group.to_string(),
        config_digest: digest,
        decoder: result.decoder.label(),
        d,
        valid_tokens: valid,
        forward_calls: result.nfe.forward_calls,
        sequence_evaluations: result.nfe.sequence_evaluations,
        rounds,
        steps_taken: result.steps_taken,
        peak_batch: result.nfe.peak_batch,
        peak_memory_proxy: result.nfe.peak_batch * setup.schedule.length() * vocab.row_width(),
        wall_clock_secs: wall,
        throughput_nfe: throughput(valid, result.nfe.forward_calls as f64),
        throughput_time: throughput(valid, wall),
        nfe_speedup: reference.nfe.forward_calls as f64 / result.nfe.forward_calls as f64,
        lossless: result.tokens == reference.tokens,
    }
}

/// Runs every config and a static reference per group of configs that differ
/// only in their decoder.
pub fn run_comparison(configs: &[RunConfig]) -> Result<BenchReport> {
    let mut groups: Vec<(String, Vec<&RunConfig>)> = Vec::new();
    for cfg in configs {
        let key = cfg.group_digest();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(cfg),
            None => groups.push((key, vec![cfg])),
        }
    }

    let mut report = BenchReport::default();
    for (group, members) in groups {
        let head = members[0];
        let setup = head.prepare()?;
        let static_cfg = head.with_decoder(DecoderSpec::Static);
        let (reference, wall) = timed_decode(&setup, DecoderSpec::Static, head.repetitions)?;
        report.rows.push(row_for(
            &group,
            static_cfg.digest(),
            &setup,
            &reference,
            wall,
            &reference,
        ));
        report.results.push(reference.clone());
        for cfg in members {
            if cfg.decoder == DecoderSpec::Static {
                continue;
            }
            let (result, wall) = timed_decode(&setup, cfg.decoder, cfg.repetitions)?;
            report.rows.push(row_for(
                &group,
                cfg.digest(),
                &setup,
                &result,
                wall,
                &reference,
            ));
            report.results.push(result);
        }
    }
    Ok(report)
}

/// Draft-and-verify at each `d` against one shared static reference.
pub fn sweep_draft_steps(base: &RunConfig, d_values: &[usize]) -> Result<BenchReport> {
    if d_values.is_empty() {
        return Err(Error::Config("empty d list".into()));
    }
    let configs: Vec<RunConfig> = d_values
        .iter()
        .map(|&d| base.with_decoder(DecoderSpec::Freedave { d }))
        .collect();
    for cfg in &configs {
        cfg.prepare().map(|_| ())?;
    }
    run_comparison(&configs)
}

#[derive(Debug, Clone, Serialize)]
pub struct PathLabSummary {
    pub config_digest: String,
    pub steps: usize,
    pub edges: Vec<(usize, usize)>,
    pub optimal: OptimalPath,
    pub lemma: LemmaReport,
    /// Draft-and-verify at the config's `d`, when it names one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freedave: Option<PathLabFreedave>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathLabFreedave {
    pub d: usize,
    pub cut_points: Vec<usize>,
    pub verifier_path: Vec<usize>,
    pub forward_calls: u64,
    /// `forward_calls` never beats one call per optimal jump.
    pub respects_bound: bool,
}

/// Builds the feasible graph for a config and checks decoders against it.
pub fn pathlab_summary(cfg: &RunConfig, step_cap: usize) -> Result<PathLabSummary> {
    let setup = cfg.prepare()?;
    let sched = setup.scheduler_config(DecoderSpec::Static)?;
    let lab = PathLab::build(
        setup.predictor.as_ref(),
        sched,
        setup.schedule.clone(),
        setup.rng,
        step_cap,
    )?;
    let optimal = lab.graph().optimal_path();
    let lemma = lab.check_lemma()?;
    let freedave = match cfg.decoder {
        DecoderSpec::Freedave { d } => {
            let out = setup.decode(cfg.decoder)?;
            Some(PathLabFreedave {
                d,
                verifier_path: lab.greedy_verifier_path(d)?,
                respects_bound: out.nfe.forward_calls >= optimal.len() as u64,
                cut_points: out.cut_points,
                forward_calls: out.nfe.forward_calls,
            })
        }
        _ => None,
    };
    Ok(PathLabSummary {
        config_digest: cfg.digest(),
        steps: setup.schedule.num_steps(),
        edges: lab.graph().edges().to_vec(),
        optimal,
        lemma,
        freedave,
    })
}

/// Records the static path plus every draft state reachable with up to `d`
/// drafts, so the trace replays draft-and-verify for any `d' <= d`.
///
/// Recording always uses the argmax scheduler; that is what replay runs.
pub fn record_trace(cfg: &RunConfig, d: usize, topk: usize) -> Result<TraceFile> {
    if d == 0 {
        return Err(Error::Config("draft steps d must be at least 1".into()));
    }
    let setup = cfg.prepare()?;
    let recorder = RecordingPredictor::new(setup.predictor.as_ref(), setup.schedule.length());
    let sched_cfg = SchedulerConfig::greedy(setup.layout);
    let engine = Engine::new(&recorder, sched_cfg, setup.schedule.clone(), setup.rng);
    let reference = engine.decode_static()?;

    let scheduler = Scheduler::new(sched_cfg, &setup.rng, setup.schedule.length());
    let n = setup.schedule.num_steps();
    let mut x = SequenceState::all_masked(setup.schedule.length(), setup.vocab().mask_id());
    for (i, decisions) in reference.path.iter().enumerate() {
        let est = recorder.estimate(&x)?;
        let drafts = scheduler.greedy_drafts(&est, &x, i, d.min(n - i), &setup.schedule)?;
        for (k, dec) in drafts.iter().enumerate() {
            let draft = x.apply(dec, i + k + 1)?;
            if !draft.is_complete() {
                recorder.estimate(&draft)?;
            }
        }
        x = x.apply(decisions, i + 1)?;
    }

    recorder.to_trace(
        n,
        topk,
        Some(TraceMeta {
            recorder: Some(format!("freedave {}", env!("CARGO_PKG_VERSION"))),
            block_size: Some(setup.layout.block_size()),
            draft_steps: Some(d),
            decoded: Some(reference.tokens),
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceValidation {
    pub records: usize,
    pub static_tokens: Vec<TokenId>,
    /// Static replay equals the recorder's own output, when the trace has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_recorded: Option<bool>,
    /// Draft-and-verify replay at every `d` up to the recorded one, when it names one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freedave_lossless: Option<bool>,
}

/// Validates a trace file and replays static (and draft-and-verify) decoding on it.
///
/// A replay that diverges from the recorded output is a trace error.
pub fn validate_trace(path: impl AsRef<Path>) -> Result<TraceValidation> {
    let trace = TraceFile::read(path)?;
    trace.validate()?;
    let replay = crate::predictor::ReplayPredictor::from_trace(&trace)?;
    let header = &trace.header;
    let meta = header.meta.clone().unwrap_or_default();
    let layout = match meta.block_size {
        Some(b) => BlockLayout::new(b).map_err(|e| Error::TraceFormat(e.to_string()))?,
        None => BlockLayout::unblocked(header.length),
    };
    let schedule = TimeSchedule::uniform(header.length, header.steps)
        .map_err(|e| Error::TraceFormat(format!("header schedule: {e}")))?;
    let engine = Engine::new(
        &replay,
        SchedulerConfig::greedy(layout),
        schedule,
        crate::rng::DeterministicRng::new(0),
    );
    let reference = engine.decode_static()?;
    let matches_recorded = meta.decoded.as_ref().map(|d| *d == reference.tokens);
    if matches_recorded == Some(false) {
        return Err(Error::TraceFormat(
            "static replay differs from the recorder's decoded output".into(),
        ));
    }
    let freedave_lossless = match meta.draft_steps {
        Some(d) => {
            let mut all = true;
            for d in 1..=d {
                all &= engine.decode_freedave(d)?.tokens == reference.tokens;
            }
            Some(all)
        }
        None => None,
    };
    if freedave_lossless == Some(false) {
        return Err(Error::TraceFormat(
            "draft-and-verify replay differs from static replay".into(),
        ));
    }
    Ok(TraceValidation {
        records: trace.records.len(),
        static_tokens: reference.tokens,
        matches_recorded,
        freedave_lossless,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sensitivity: f64) -> RunConfig {
        RunConfig::parse(&format!(
            r#"{{
                "format": 1,
                "vocab": {{"size": 8, "mask_id": 8, "eos_id": 7}},
                "predictor": {{"kind": "table", "target": [0, 1, 2, 3, 4, 5], "sensitivity": {sensitivity}}},
                "schedule": {{"steps": 6, "block_size": 3}},
                "decoder": {{"kind": "freedave", "d": 3}},
                "seed": 4
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn valid_tokens_stop_at_eos() {
        let v = Vocabulary::new(5, 5, Some(4)).unwrap();
        assert_eq!(valid_token_count(&[0, 1, 4, 2], &v), 2);
        assert_eq!(valid_token_count(&[0, 5, 1], &v), 2);
        assert_eq!(valid_token_count(&[4, 1], &v), 0);
        let no_eos = Vocabulary::new(5, 5, None).unwrap();
        assert_eq!(valid_token_count(&[0, 4, 1], &no_eos), 3);
    }

    #[test]
    fn comparison_rows() {
        let base = cfg(0.0);
        let report = run_comparison(&[
            base.clone(),
            base.with_decoder(DecoderSpec::Threshold { threshold: 0.7 }),
        ])
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        let [st, fd, th] = &report.rows[..] else {
            unreachable!()
        };
        assert_eq!(st.decoder, "static");
        assert_eq!(st.forward_calls, 6);
        assert_eq!(fd.d, Some(3));
        assert_eq!(fd.forward_calls, 3);
        assert_eq!(fd.nfe_speedup, 2.0);
        assert!(fd.lossless && st.lossless);
        assert_eq!(th.decoder, "threshold");
        assert_eq!(fd.peak_batch, 3);
        assert_eq!(fd.peak_memory_proxy, 3 * 6 * 8);
    }

    #[test]
    fn csv_round_trip_checks_derived_columns() {
        let report = sweep_draft_steps(&cfg(0.5), &[1, 2, 6]).unwrap();
        let text = report.to_csv().unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(BenchReport::parse_csv(&text).unwrap(), report.rows);

        let tampered = text.replacen(",2.0,", ",2.5,", 1);
        if tampered != text {
            assert!(BenchReport::parse_csv(&tampered).is_err());
        }
    }

    #[test]
    fn recorded_trace_validates() {
        let trace = record_trace(&cfg(0.5), 3, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.fdtrace");
        trace.write(&path).unwrap();
        let v = validate_trace(&path).unwrap();
        assert_eq!(v.matches_recorded, Some(true));
        assert_eq!(v.freedave_lossless, Some(true));
    }
}
