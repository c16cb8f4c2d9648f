//! `FDTRACE1` trace files: recorded predictor outputs keyed by state.
//!
//! Layout, one item per line:
//!
//! ```text
//! FDTRACE1
//! {"vocab_size":..,"mask_id":..,"eos_id":..,"length":..,"steps":..,"topk":..,"schedule_kind":"uniform"}
//! {"key":"<16 hex>","step":3,"state":[5,-1,...],"rows":[[1,[[5,"0.25"],...]],...]}
//! ...
//! ```
//!
//! `key` is the FNV-1a 64 digest of the state encoded as little-endian `i32`
//! values with `-1` for the mask (see [`crate::hash::state_key`]); the full
//! `state` array is stored too so collisions are caught. Probabilities are
//! decimal strings that round-trip to the exact `f64`. Rows list at most
//! `topk` tokens; the remaining mass is spread evenly over the unlisted real
//! tokens on replay.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::state_key;
use crate::schedule::{TokenId, Vocabulary};
use crate::state::SequenceState;

use super::{MarginalEstimate, MarginalPredictor, ROW_SUM_TOLERANCE};

pub const TRACE_MAGIC: &str = "FDTRACE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub vocab_size: u32,
    pub mask_id: TokenId,
    pub eos_id: Option<TokenId>,
    pub length: usize,
    pub steps: usize,
    pub topk: usize,
    pub schedule_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TraceMeta>,
}

/// Optional recorder metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    /// Draft steps the trace was pre-populated for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_steps: Option<usize>,
    /// The recorder's own static-decode output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoded: Option<Vec<TokenId>>,
}

impl TraceHeader {
    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size, self.mask_id, self.eos_id)
            .map_err(|e| Error::TraceFormat(format!("header vocabulary: {e}")))
    }
}

/// One record line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub key: String,
    pub step: usize,
    pub state: Vec<i64>,
    pub rows: Vec<(usize, Vec<(TokenId, String)>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

/// Record with decoded tokens and parsed probabilities.
#[derive(Debug, Clone)]
struct ParsedRecord {
    tokens: Vec<TokenId>,
    rows: Vec<(usize, Vec<(TokenId, f64)>)>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(TRACE_MAGIC) => {}
            Some(other) => {
                return Err(Error::TraceFormat(format!(
                    "bad magic {other:?}, expected {TRACE_MAGIC}"
                )))
            }
            None => return Err(Error::TraceFormat("empty trace file".into())),
        }
        let header: TraceHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::TraceFormat("missing header line".into()))?,
        )
        .map_err(|e| Error::TraceFormat(format!("header: {e}")))?;
        let records = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::TraceFormat(format!("record line {}: {e}", n + 3)))
            })
            .collect::<Result<Vec<TraceRecord>>>()?;
        let trace = Self { header, records };
        trace.validate()?;
        Ok(trace)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(TRACE_MAGIC);
        out.push('\n');
        out.push_str(&serde_json::to_string(&self.header)?);
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render()?)?;
        Ok(())
    }

    /// Checks every record: key digests, row coverage, normalisation and key uniqueness.
    pub fn validate(&self) -> Result<()> {
        self.index().map(|_| ())
    }

    fn parse_record(&self, vocab: &Vocabulary, r: &TraceRecord) -> Result<ParsedRecord> {
        let h = &self.header;
        let bad =
            |msg: String| Error::TraceFormat(format!("record {} step {}: {msg}", r.key, r.step));
        if r.state.len() != h.length {
            return Err(bad(format!(
                "state length {} != {}",
                r.state.len(),
                h.length
            )));
        }
        if r.step > h.steps {
            return Err(bad(format!("step past the {}-step schedule", h.steps)));
        }
        let tokens = r
            .state
            .iter()
            .map(|&v| match v {
                -1 => Ok(vocab.mask_id()),
                v if v >= 0 && vocab.is_real(v as TokenId) => Ok(v as TokenId),
                v => Err(bad(format!("state token {v} is not a real token or -1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let key = state_key(&tokens, vocab.mask_id());
        if key != r.key {
            return Err(bad(format!("key does not match state digest {key}")));
        }
        let masked: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == vocab.mask_id())
            .map(|(i, _)| i)
            .collect();
        if !r.rows.iter().map(|(p, _)| *p).eq(masked.iter().copied()) {
            return Err(bad("rows do not cover exactly the masked positions".into()));
        }
        let mut rows = Vec::with_capacity(r.rows.len());
        for (pos, entries) in &r.rows {
            if entries.len() > h.topk {
                return Err(bad(format!("row {pos} lists more than topk = {}", h.topk)));
            }
            let mut parsed = Vec::with_capacity(entries.len());
            let mut seen = vec![false; vocab.row_width()];
            let mut sum = 0.0;
            for (tok, text) in entries {
                if !vocab.is_real(*tok) || std::mem::replace(&mut seen[*tok as usize], true) {
                    return Err(bad(format!("row {pos}: bad or repeated token {tok}")));
                }
                let p: f64 = text
                    .parse()
                    .map_err(|_| bad(format!("row {pos}: probability {text:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad(format!("row {pos}: probability {p} outside [0, 1]")));
                }
                sum += p;
                parsed.push((*tok, p));
            }
            let complete = parsed.len() == vocab.real_count();
            if sum > 1.0 + ROW_SUM_TOLERANCE || (complete && (sum - 1.0).abs() > ROW_SUM_TOLERANCE)
            {
                return Err(bad(format!("row {pos} lists mass {sum}")));
            }
            rows.push((*pos, parsed));
        }
        Ok(ParsedRecord { tokens, rows })
    }

    fn index(&self) -> Result<HashMap<(String, usize), ParsedRecord>> {
        let vocab = self.header.vocab()?;
        if self.header.topk == 0 {
            return Err(Error::TraceFormat("topk must be at least 1".into()));
        }
        let mut index = HashMap::with_capacity(self.records.len());
        let mut states_by_key: HashMap<&str, &[i64]> = HashMap::new();
        for r in &self.records {
            let parsed = self.parse_record(&vocab, r)?;
            if let Some(prev) = states_by_key.insert(&r.key, &r.state) {
                if prev != r.state.as_slice() {
                    return Err(Error::TraceFormat(format!(
                        "hash collision: two states share key {}",
                        r.key
                    )));
                }
            }
            if index.insert((r.key.clone(), r.step), parsed).is_some() {
                return Err(Error::TraceFormat(format!(
                    "duplicate record for key {} at step {}",
                    r.key, r.step
                )));
            }
        }
        Ok(index)
    }
}

/// Turns a sparse row into a dense one, spreading the unlisted mass evenly.
fn densify(vocab: &Vocabulary, listed: &[(TokenId, f64)]) -> Vec<f64> {
    let mut row = vec![0.0; vocab.row_width()];
    let mut sum = 0.0;
    for &(t, p) in listed {
        row[t as usize] = p;
        sum += p;
    }
    let unlisted = vocab.real_count() - listed.len();
    if unlisted > 0 {
        let share = (1.0 - sum).max(0.0) / unlisted as f64;
        let mut is_listed = vec![false; vocab.row_width()];
        for &(t, _) in listed {
            is_listed[t as usize] = true;
        }
        for v in vocab.real_tokens() {
            if !is_listed[v as usize] {
                row[v as usize] = share;
            }
        }
    }
    row
}

/// Serves estimates straight from a trace file.
#[derive(Debug)]
pub struct ReplayPredictor {
    header: TraceHeader,
    vocab: Vocabulary,
    records: HashMap<(String, usize), ParsedRecord>,
}

impl ReplayPredictor {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_trace(&TraceFile::read(path)?)
    }

    pub fn from_trace(trace: &TraceFile) -> Result<Self> {
        Ok(Self {
            header: trace.header.clone(),
            vocab: trace.header.vocab()?,
            records: trace.index()?,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl MarginalPredictor for ReplayPredictor {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        super::check_query(state, &self.vocab, self.header.length)?;
        let key = state_key(state.tokens(), state.mask_id());
        let step = state.step_index();
        let record = self
            .records
            .get(&(key.clone(), step))
            .ok_or(Error::TraceMiss {
                key: key.clone(),
                step,
            })?;
        if record.tokens != state.tokens() {
            return Err(Error::TraceFormat(format!(
                "state digest {key} collides with a different recorded state"
            )));
        }
        let width = self.vocab.row_width();
        let mut positions = Vec::with_capacity(record.rows.len());
        let mut probs = Vec::with_capacity(record.rows.len() * width);
        for (pos, listed) in &record.rows {
            positions.push(*pos);
            probs.extend(densify(&self.vocab, listed));
        }
        MarginalEstimate::new(width, positions, probs)
            .map_err(|e| Error::TraceFormat(format!("record {key}: {e}")))
    }
}

/// Pass-through predictor that remembers every estimate it served.
pub struct RecordingPredictor<P> {
    inner: P,
    length: usize,
    seen: Mutex<BTreeMap<(String, usize), (SequenceState, MarginalEstimate)>>,
}

impl<P: MarginalPredictor> RecordingPredictor<P> {
    pub fn new(inner: P, length: usize) -> Self {
        Self {
            inner,
            length,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> usize {
        self.seen.lock().expect("recorder lock").len()
    }

    /// Builds a trace keeping the `topk` most likely tokens of every row.
    pub fn to_trace(
        &self,
        steps: usize,
        topk: usize,
        meta: Option<TraceMeta>,
    ) -> Result<TraceFile> {
        if topk == 0 {
            return Err(Error::Config("topk must be at least 1".into()));
        }
        let vocab = self.inner.vocab();
        let seen = self.seen.lock().expect("recorder lock");
        let mut records = Vec::with_capacity(seen.len());
        for ((key, step), (state, est)) in seen.iter() {
            let rows = est
                .iter()
                .map(|(pos, row)| {
                    let mut entries: Vec<(TokenId, f64)> =
                        vocab.real_tokens().map(|t| (t, row[t as usize])).collect();
                    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    entries.truncate(topk);
                    let listed = entries
                        .into_iter()
                        .map(|(t, p)| {
                            let mut s = String::new();
                            write!(s, "{p}").expect("write to string");
                            (t, s)
                        })
                        .collect();
                    (pos, listed)
                })
                .collect();
            let encoded = state
                .tokens()
                .iter()
                .map(|&t| {
                    if t == vocab.mask_id() {
                        -1
                    } else {
                        i64::from(t)
                    }
                })
                .collect();
            records.push(TraceRecord {
                key: key.clone(),
                step: *step,
                state: encoded,
                rows,
            });
        }
        let trace = TraceFile {
            header: TraceHeader {
                vocab_size: vocab.size(),
                mask_id: vocab.mask_id(),
                eos_id: vocab.eos_id(),
                length: self.length,
                steps,
                topk,
                schedule_kind: "uniform".into(),
                meta,
            },
            records,
        };
        trace.validate()?;
        Ok(trace)
    }
}

impl<P: MarginalPredictor> MarginalPredictor for RecordingPredictor<P> {
    fn vocab(&self) -> Vocabulary {
        self.inner.vocab()
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        let est = self.inner.estimate(state)?;
        let key = state_key(state.tokens(), state.mask_id());
        self.seen
            .lock()
            .expect("recorder lock")
            .entry((key, state.step_index()))
            .or_insert_with(|| (state.clone(), est.clone()));
        Ok(est)
    }
}
