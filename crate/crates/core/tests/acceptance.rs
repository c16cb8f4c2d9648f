//! Acceptance suite: one line per criterion, non-zero exit on any hard failure.
//!
//! Runs without the libtest harness so the lines always show up under
//! `cargo test`.

mod common;

use std::time::Instant;

use freedave_core::bench::{run_comparison, sweep_draft_steps, DecoderSpec};
use freedave_core::diffusion::{forward_corrupt, reverse_transition};
use freedave_core::pathlab::DEFAULT_STEP_CAP;
use freedave_core::{AlphaSchedule, DeterministicRng, Engine, LemmaReport, PathLab, SequenceState};
use rayon::prelude::*;
use serde::Serialize;

use common::{random_case, shipped, CaseSpec, LOSSLESS_SPEC, PATHLAB_SPEC};

const LOSSLESS_CASES: u64 = 1200;
const PATHLAB_CASES: u64 = 600;
const LEMMA_TARGET: f64 = 0.99;
const SWEEP_DS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    /// Reported rather than enforced: a failure here does not fail the run.
    advisory: bool,
}

impl Outcome {
    fn hard(name: &'static str, pass: bool, detail: String) -> Self {
        Outcome {
            name,
            pass,
            detail,
            advisory: false,
        }
    }
}

fn main() {
    let started = Instant::now();
    let mut outcomes = Vec::new();
    outcomes.extend(lossless_and_nfe());
    outcomes.push(context_free_speedup());
    outcomes.extend(pathlab_checks());
    outcomes.push(diffusion_math());
    outcomes.push(threshold_witness());
    outcomes.push(sweep_shape());

    println!();
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if o.advisory && !o.pass {
            " (reported, not enforced)"
        } else {
            ""
        };
        println!("[{tag}] {}: {}{note}", o.name, o.detail);
    }
    let hard_failures = outcomes.iter().filter(|o| !o.pass && !o.advisory).count();
    println!(
        "acceptance: {} criteria, {hard_failures} hard failures, {:.1}s",
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

struct LosslessCase {
    label: String,
    lossless: bool,
    within_bound: bool,
    steps_accounted: bool,
}

fn lossless_and_nfe() -> Vec<Outcome> {
    let t0 = Instant::now();
    let cases: Vec<LosslessCase> = (0..LOSSLESS_CASES)
        .into_par_iter()
        .map(|index| {
            let case = random_case(&LOSSLESS_SPEC, 0xacce, index);
            let engine = Engine::new(
                case.predictor.as_ref(),
                case.scheduler,
                case.schedule.clone(),
                case.rng,
            );
            let reference = engine.decode_static().unwrap();
            let out = engine.decode_freedave(case.d).unwrap();
            let advanced: usize = out.rounds.iter().map(|r| r.matched + 1).sum();
            LosslessCase {
                label: case.label,
                lossless: out.tokens == reference.tokens,
                within_bound: out.nfe.forward_calls <= reference.nfe.forward_calls + 1,
                steps_accounted: advanced == case.schedule.num_steps(),
            }
        })
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    let first_bad = |f: fn(&LosslessCase) -> bool| {
        cases
            .iter()
            .find(|c| !f(c))
            .map(|c| format!("; first failure {}", c.label))
            .unwrap_or_default()
    };
    let lossless = cases.iter().filter(|c| c.lossless).count();
    let bounded = cases
        .iter()
        .filter(|c| c.within_bound && c.steps_accounted)
        .count();
    vec![
        Outcome::hard(
            "lossless equivalence",
            lossless == cases.len() && secs < 60.0,
            format!(
                "{lossless}/{} random configs decode identically ({secs:.1}s){}",
                cases.len(),
                first_bad(|c| c.lossless)
            ),
        ),
        Outcome::hard(
            "forward-call bound",
            bounded == cases.len(),
            format!(
                "{bounded}/{} within static + 1 calls with sum(m + 1) = N{}",
                cases.len(),
                first_bad(|c| c.within_bound && c.steps_accounted)
            ),
        ),
    ]
}

fn context_free_speedup() -> Outcome {
    let cfg = shipped("context_free.json");
    let report = run_comparison(&[cfg]).unwrap();
    let (reference, fd) = (&report.rows[0], &report.rows[1]);
    let batched = report.results[1].batched_rounds();
    let pass = reference.forward_calls == 32
        && fd.forward_calls == 5
        && batched == 4
        && fd.nfe_speedup == 6.4
        && fd.lossless;
    Outcome::hard(
        "context-free speedup",
        pass,
        format!(
            "{} = {} calls ({batched} batched rounds) vs {} static, speedup {}x",
            fd.decoder, fd.forward_calls, reference.forward_calls, fd.nfe_speedup
        ),
    )
}

#[derive(Serialize)]
struct LemmaArtifact {
    label: String,
    report: LemmaReport,
}

struct PathLabCase {
    label: String,
    verifier_in_graph: bool,
    rounds_match: bool,
    sandwiched: bool,
    lemma: LemmaReport,
}

fn pathlab_checks() -> Vec<Outcome> {
    let spec: &CaseSpec = &PATHLAB_SPEC;
    let t0 = Instant::now();
    let cases: Vec<PathLabCase> = (0..PATHLAB_CASES)
        .into_par_iter()
        .map(|index| {
            let case = random_case(spec, 0x7e0, index);
            let lab = PathLab::build(
                case.predictor.as_ref(),
                case.scheduler,
                case.schedule.clone(),
                case.rng,
                DEFAULT_STEP_CAP,
            )
            .unwrap();
            let greedy = lab.greedy_verifier_path(case.d).unwrap();
            let engine = Engine::new(
                case.predictor.as_ref(),
                case.scheduler,
                case.schedule.clone(),
                case.rng,
            );
            let out = engine.decode_freedave(case.d).unwrap();
            let jumps = greedy.len() - 1;
            let optimal = lab.graph().optimal_path().len();
            PathLabCase {
                label: case.label,
                verifier_in_graph: lab.graph().is_path(&greedy),
                rounds_match: out.rounds.len() == jumps && out.cut_points == greedy,
                sandwiched: optimal <= jumps && jumps <= case.schedule.num_steps(),
                lemma: lab.check_lemma().unwrap(),
            }
        })
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    let n = cases.len();

    let in_graph = cases.iter().filter(|c| c.verifier_in_graph).count();
    let rounds = cases
        .iter()
        .filter(|c| c.rounds_match && c.sandwiched)
        .count();
    let theorem_bad = cases
        .iter()
        .find(|c| !(c.verifier_in_graph && c.rounds_match && c.sandwiched))
        .map(|c| format!("; first failure {}", c.label))
        .unwrap_or_default();
    let theorem = Outcome::hard(
        "verifier path is feasible",
        in_graph == n && rounds == n && secs < 300.0,
        format!(
            "{in_graph}/{n} verifier paths lie in the feasible graph, \
             {rounds}/{n} round counts equal the path length ({secs:.1}s){theorem_bad}"
        ),
    );

    let agree = cases.iter().filter(|c| c.lemma.agrees()).count();
    let at_span = cases.iter().filter(|c| c.lemma.agree_at_span).count();
    let at_length = cases.iter().filter(|c| c.lemma.agree_at_length).count();
    let decomposable: Vec<_> = cases
        .iter()
        .filter(|c| c.lemma.optimal_chain_decomposable)
        .collect();
    let decomposable_agree = decomposable.iter().filter(|c| c.lemma.agrees()).count();
    let rate = agree as f64 / n as f64;

    let artifacts: Vec<LemmaArtifact> = cases
        .iter()
        .filter(|c| !c.lemma.agrees())
        .map(|c| LemmaArtifact {
            label: c.label.clone(),
            report: c.lemma.clone(),
        })
        .collect();
    let artifact_path =
        std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("lemma_counterexamples.json");
    std::fs::write(
        &artifact_path,
        serde_json::to_string_pretty(&artifacts).unwrap(),
    )
    .unwrap();

    let lemma = Outcome {
        name: "verifier path is optimal",
        pass: rate >= LEMMA_TARGET,
        advisory: true,
        detail: format!(
            "agreement {:.1}% (target {:.0}%): {at_span}/{n} at d = span, {at_length}/{n} at d = L; \
             {decomposable_agree}/{} where the optimal path is chain-decomposable; \
             {} counterexamples in {}",
            100.0 * rate,
            100.0 * LEMMA_TARGET,
            decomposable.len(),
            artifacts.len(),
            artifact_path.display()
        ),
    };
    vec![theorem, lemma]
}

fn diffusion_math() -> Outcome {
    let mut problems = Vec::new();

    // forward corruption: masked fraction within three standard errors of 1 - alpha_t
    let positions = 10_000;
    let clean = SequenceState::from_tokens(vec![0; positions], 0, 1);
    let rng = DeterministicRng::new(0xd1ff);
    let mut worst_z: f64 = 0.0;
    for k in 1..=9 {
        let t = k as f64 / 10.0;
        let noisy = forward_corrupt(&clean, t, AlphaSchedule::Linear, &rng).unwrap();
        let p = 1.0 - AlphaSchedule::Linear.alpha(t).unwrap();
        let frac = noisy.masked_count() as f64 / positions as f64;
        let z = (frac - p).abs() / (p * (1.0 - p) / positions as f64).sqrt();
        worst_z = worst_z.max(z);
        if z > 3.0 {
            problems.push(format!(
                "t = {t}: masked fraction {frac} is {z:.2} sigma off"
            ));
        }
    }

    // reverse two-step consistency and normalization on a 50 x 50 grid
    let mut worst_identity: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for alpha in [AlphaSchedule::Linear, AlphaSchedule::Cosine] {
        for i in 1..=50 {
            for j in 0..50 {
                let (t, s) = (i as f64 / 50.0, j as f64 / 50.0);
                if s >= t {
                    continue;
                }
                let u = 0.5 * (t + s);
                let direct = reverse_transition(t, s, alpha).unwrap();
                let first = reverse_transition(t, u, alpha).unwrap();
                let second = reverse_transition(u, s, alpha).unwrap();
                let stay =
                    (first.stay_mask_prob * second.stay_mask_prob - direct.stay_mask_prob).abs();
                let unmask = (first.unmask_prob + first.stay_mask_prob * second.unmask_prob
                    - direct.unmask_prob)
                    .abs();
                worst_identity = worst_identity.max(stay).max(unmask);
                worst_norm =
                    worst_norm.max((direct.stay_mask_prob + direct.unmask_prob - 1.0).abs());
            }
        }
    }
    if worst_identity > 1e-12 {
        problems.push(format!("two-step identity off by {worst_identity:e}"));
    }
    if worst_norm > 1e-12 {
        problems.push(format!("normalization off by {worst_norm:e}"));
    }

    Outcome::hard(
        "diffusion process",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "worst mask-fraction deviation {worst_z:.2} sigma, two-step error {worst_identity:.1e}, \
                 normalization error {worst_norm:.1e}"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn threshold_witness() -> Outcome {
    let cfg = shipped("threshold_witness.json");
    let setup = cfg.prepare().unwrap();
    let reference = setup.decode(DecoderSpec::Static).unwrap();
    let threshold = setup.decode(cfg.decoder).unwrap();
    let freedave = setup.decode(DecoderSpec::Freedave { d: 8 }).unwrap();
    let pass = matches!(cfg.decoder, DecoderSpec::Threshold { .. })
        && threshold.tokens != reference.tokens
        && freedave.tokens == reference.tokens;
    let differing = threshold
        .tokens
        .iter()
        .zip(&reference.tokens)
        .filter(|(a, b)| a != b)
        .count();
    Outcome::hard(
        "threshold lossiness witness",
        pass,
        format!(
            "threshold_witness.json (seed {}): threshold differs at {differing} positions \
             in {} calls, freedave-d8 matches static in {} calls",
            cfg.seed, threshold.nfe.forward_calls, freedave.nfe.forward_calls
        ),
    )
}

fn sweep_shape() -> Outcome {
    let mut problems = Vec::new();
    let mut shipped_calls = Vec::new();

    let cfg = shipped("context_free.json");
    let setup = cfg.prepare().unwrap();
    let steps = setup.schedule.num_steps();
    let lab = PathLab::build(
        setup.predictor.as_ref(),
        setup.scheduler_config(DecoderSpec::Static).unwrap(),
        setup.schedule.clone(),
        setup.rng,
        steps,
    )
    .unwrap();
    let span = lab.graph().optimal_path().span;
    let report = sweep_draft_steps(&cfg, &SWEEP_DS).unwrap();
    for row in &report.rows[1..] {
        shipped_calls.push(row.forward_calls);
    }
    if !report.rows.iter().all(|r| r.lossless) {
        problems.push("context_free.json sweep has a lossy row".to_string());
    }
    check_sweep(
        "context_free.json",
        &SWEEP_DS,
        &shipped_calls,
        span,
        &mut problems,
    );

    // random context-free instances
    let context_free = CaseSpec {
        max_length: 32,
        max_steps: 12,
        sigmas: &[0.0],
        ngram: false,
    };
    let random: Vec<String> = (0..200u64)
        .into_par_iter()
        .flat_map_iter(|index| {
            let case = random_case(&context_free, 0x5ee9, index);
            let lab = PathLab::build(
                case.predictor.as_ref(),
                case.scheduler,
                case.schedule.clone(),
                case.rng,
                DEFAULT_STEP_CAP,
            )
            .unwrap();
            let span = lab.graph().optimal_path().span;
            let engine = Engine::new(
                case.predictor.as_ref(),
                case.scheduler,
                case.schedule.clone(),
                case.rng,
            );
            let calls: Vec<u64> = SWEEP_DS
                .iter()
                .map(|&d| engine.decode_freedave(d).unwrap().nfe.forward_calls)
                .collect();
            let mut local = Vec::new();
            check_sweep(&case.label, &SWEEP_DS, &calls, span, &mut local);
            local
        })
        .collect();
    problems.extend(random);

    Outcome::hard(
        "draft-step sweep shape",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "context_free.json forward calls {shipped_calls:?} for d = {SWEEP_DS:?}, \
                 flat from d = {span}; 200 random context-free configs agree"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn check_sweep(label: &str, ds: &[usize], calls: &[u64], span: usize, problems: &mut Vec<String>) {
    if calls.windows(2).any(|w| w[1] > w[0]) {
        problems.push(format!("{label}: forward calls {calls:?} increase with d"));
    }
    let flat: Vec<u64> = ds
        .iter()
        .zip(calls)
        .filter(|(&d, _)| d >= span)
        .map(|(_, &c)| c)
        .collect();
    if flat.windows(2).any(|w| w[0] != w[1]) {
        problems.push(format!(
            "{label}: forward calls {calls:?} still move once d >= {span}"
        ));
    }
}
