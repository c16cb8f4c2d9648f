//! Brute-force ground truth for decoding paths on small instances.
//!
//! The static run fixes the oracle states `x_0..x_N` and the per-step
//! decision sets. A jump `i -> j` is feasible when the greedy scheduler,
//! asked at `x_i` for the whole `i -> j` quota, makes exactly the union of
//! the oracle decisions `i..j`. Every feasible path visits only oracle
//! states (the unions agree), so testing segments at oracle states covers
//! the whole feasible space.
//!
//! Against that graph the lab computes the fewest-jump path, replays the
//! verifier greedily, and reports whether the verifier found an optimal
//! path when allowed drafts as long as the optimal path's longest jump.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{MarginalEstimate, MarginalPredictor};
use crate::rng::DeterministicRng;
use crate::schedule::TimeSchedule;
use crate::scheduler::{Scheduler, SchedulerConfig, SchedulerKind};
use crate::state::{DecisionSet, SequenceState};

pub const DEFAULT_STEP_CAP: usize = 14;

/// Feasible jumps between schedule cut points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibleGraph {
    num_steps: usize,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<bool>>,
    oracle_states: Vec<SequenceState>,
}

impl FeasibleGraph {
    /// Graph from an explicit edge list. Single-step edges are mandatory.
    pub fn from_edges(
        num_steps: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        oracle_states: Vec<SequenceState>,
    ) -> Result<Self> {
        let mut adjacency = vec![vec![false; num_steps + 1]; num_steps + 1];
        for (i, j) in edges {
            if i >= j || j > num_steps {
                return Err(Error::Contract(format!("bad edge ({i}, {j})")));
            }
            adjacency[i][j] = true;
        }
        if let Some(i) = (0..num_steps).find(|&i| !adjacency[i][i + 1]) {
            return Err(Error::Contract(format!(
                "missing single-step edge ({i}, {})",
                i + 1
            )));
        }
        let edges = (0..num_steps)
            .flat_map(|i| (i + 1..=num_steps).map(move |j| (i, j)))
            .filter(|&(i, j)| adjacency[i][j])
            .collect();
        Ok(Self {
            num_steps,
            edges,
            adjacency,
            oracle_states,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn oracle_states(&self) -> &[SequenceState] {
        &self.oracle_states
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < j && j <= self.num_steps && self.adjacency[i][j]
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.num_steps * (self.num_steps + 1) / 2
    }

    /// Whether `cut_points` runs from 0 to N along edges of this graph.
    pub fn is_path(&self, cut_points: &[usize]) -> bool {
        cut_points.first() == Some(&0)
            && cut_points.last() == Some(&self.num_steps)
            && cut_points.windows(2).all(|w| self.has_edge(w[0], w[1]))
    }

    /// Fewest-jump path from 0 to N.
    ///
    /// Among equally short paths the one taking the longest jump first (at
    /// every node) wins.
    pub fn optimal_path(&self) -> OptimalPath {
        let n = self.num_steps;
        let mut dist = vec![usize::MAX; n + 1];
        dist[n] = 0;
        for i in (0..n).rev() {
            dist[i] = (i + 1..=n)
                .filter(|&j| self.adjacency[i][j] && dist[j] != usize::MAX)
                .map(|j| dist[j] + 1)
                .min()
                .expect("single-step edge keeps N reachable");
        }
        let mut cut_points = vec![0];
        let mut at = 0;
        while at < n {
            at = (at + 1..=n)
                .rev()
                .find(|&j| self.adjacency[at][j] && dist[j] + 1 == dist[at])
                .expect("a shortest-path successor exists");
            cut_points.push(at);
        }
        OptimalPath::new(cut_points)
    }

    /// Whether every prefix `i -> k` of each jump `i -> j` on `cut_points` is
    /// itself an edge. Only then do the verifier's intermediate draft states
    /// coincide with oracle states along the whole jump.
    pub fn chain_decomposable(&self, cut_points: &[usize]) -> bool {
        cut_points
            .windows(2)
            .all(|w| (w[0] + 1..=w[1]).all(|k| self.has_edge(w[0], k)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalPath {
    pub cut_points: Vec<usize>,
    /// Longest single jump.
    pub span: usize,
}

impl OptimalPath {
    fn new(cut_points: Vec<usize>) -> Self {
        let span = cut_points
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0);
        Self { cut_points, span }
    }

    /// Number of jumps.
    pub fn len(&self) -> usize {
        self.cut_points.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Static run plus the feasible graph over its cut points.
pub struct PathLab<'p> {
    predictor: &'p dyn MarginalPredictor,
    scheduler: Scheduler,
    schedule: TimeSchedule,
    seed: u64,
    estimates: Vec<MarginalEstimate>,
    oracle_decisions: Vec<DecisionSet>,
    graph: FeasibleGraph,
}

impl<'p> PathLab<'p> {
    pub fn build(
        predictor: &'p dyn MarginalPredictor,
        cfg: SchedulerConfig,
        schedule: TimeSchedule,
        rng: DeterministicRng,
        step_cap: usize,
    ) -> Result<Self> {
        let n = schedule.num_steps();
        if n > step_cap {
            return Err(Error::SizeCap {
                steps: n,
                cap: step_cap,
            });
        }
        if !matches!(cfg.kind, SchedulerKind::Greedy) {
            return Err(Error::Config("path-lab needs a greedy scheduler".into()));
        }
        let scheduler = Scheduler::new(cfg, &rng, schedule.length());
        let mask = predictor.vocab().mask_id();

        let mut states = vec![SequenceState::all_masked(schedule.length(), mask)];
        let mut estimates = Vec::with_capacity(n);
        let mut oracle_decisions = Vec::with_capacity(n);
        for i in 0..n {
            let x = &states[i];
            let est = predictor.estimate(x).map_err(Error::at_step(i))?;
            let dec = scheduler.greedy_schedule(&est, x, i, i + 1, &schedule)?;
            let next = x.apply(&dec, i + 1)?;
            estimates.push(est);
            oracle_decisions.push(dec);
            states.push(next);
        }

        let mut edges = Vec::new();
        for i in 0..n {
            let ranked = scheduler.ranked(&estimates[i], &states[i])?;
            let mut union = DecisionSet::empty();
            for j in i + 1..=n {
                union = union.union(&oracle_decisions[j - 1])?;
                let quota = schedule.unmask_quota(i, j)?;
                let jump = DecisionSet::new(
                    ranked[..quota]
                        .iter()
                        .map(|c| (c.position, c.token))
                        .collect(),
                )?;
                if jump == union {
                    edges.push((i, j));
                }
            }
        }
        let graph = FeasibleGraph::from_edges(n, edges, states)?;
        Ok(Self {
            predictor,
            scheduler,
            schedule,
            seed: rng.seed(),
            estimates,
            oracle_decisions,
            graph,
        })
    }

    pub fn graph(&self) -> &FeasibleGraph {
        &self.graph
    }

    pub fn oracle_decisions(&self) -> &[DecisionSet] {
        &self.oracle_decisions
    }

    /// Cut points chosen by applying the verifier greedily from step 0.
    ///
    /// At node `n` the verifier checks, for `k = 1, 2, ...` below
    /// `min(d, N - n)`, that jumping `k + 1` steps decides the same as
    /// jumping `k` steps and then one scheduler step under a fresh estimate,
    /// and stops at the first failure.
    pub fn greedy_verifier_path(&self, d: usize) -> Result<Vec<usize>> {
        if d == 0 {
            return Err(Error::Config("draft steps d must be at least 1".into()));
        }
        let n = self.schedule.num_steps();
        let mut cut_points = vec![0];
        let mut at = 0;
        while at < n {
            at += self.verify_from(at, d)?;
            cut_points.push(at);
        }
        if !self.graph.is_path(&cut_points) {
            return Err(Error::Contract(format!(
                "verifier path {cut_points:?} leaves the feasible graph"
            )));
        }
        Ok(cut_points)
    }

    fn verify_from(&self, at: usize, d: usize) -> Result<usize> {
        let d_n = d.min(self.schedule.num_steps() - at);
        if d_n <= 1 {
            return Ok(1);
        }
        let x = &self.graph.oracle_states[at];
        let jumps =
            self.scheduler
                .greedy_drafts(&self.estimates[at], x, at, d_n, &self.schedule)?;
        let mut advance = 1;
        for k in 1..d_n {
            let mid = x.apply(&jumps[k - 1], at + k)?;
            let est = self.predictor.estimate(&mid)?;
            let step =
                self.scheduler
                    .greedy_schedule(&est, &mid, at + k, at + k + 1, &self.schedule)?;
            if jumps[k - 1].union(&step).ok().as_ref() != Some(&jumps[k]) {
                break;
            }
            advance = k + 1;
        }
        Ok(advance)
    }

    /// Compares the verifier's path to the optimal one at `d = span` and `d = L`.
    pub fn check_lemma(&self) -> Result<LemmaReport> {
        let optimal = self.graph.optimal_path();
        let at_span = self.greedy_verifier_path(optimal.span.max(1))?;
        let at_length = self.greedy_verifier_path(self.schedule.length())?;
        let agree_at_span = at_span.len() == optimal.cut_points.len();
        let agree_at_length = at_length.len() == optimal.cut_points.len();
        let optimal_chain_decomposable = self.graph.chain_decomposable(&optimal.cut_points);
        let counterexample = (!(agree_at_span && agree_at_length)).then(|| Counterexample {
            seed: self.seed,
            graph: self.graph.clone(),
            optimal: optimal.clone(),
            verifier_at_span: at_span.clone(),
            verifier_at_length: at_length.clone(),
        });
        Ok(LemmaReport {
            steps: self.schedule.num_steps(),
            optimal,
            verifier_at_span: at_span,
            verifier_at_length: at_length,
            agree_at_span,
            agree_at_length,
            optimal_chain_decomposable,
            counterexample,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub steps: usize,
    pub optimal: OptimalPath,
    pub verifier_at_span: Vec<usize>,
    pub verifier_at_length: Vec<usize>,
    pub agree_at_span: bool,
    pub agree_at_length: bool,
    /// The optimal path has only chain-decomposable jumps.
    pub optimal_chain_decomposable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

impl LemmaReport {
    pub fn agrees(&self) -> bool {
        self.agree_at_span && self.agree_at_length
    }
}

/// Everything needed to inspect a case where the verifier missed the optimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub seed: u64,
    pub graph: FeasibleGraph,
    pub optimal: OptimalPath,
    pub verifier_at_span: Vec<usize>,
    pub verifier_at_length: Vec<usize>,
}
