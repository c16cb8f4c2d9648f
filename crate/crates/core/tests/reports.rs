mod common;

use freedave_core::bench::{
    pathlab_summary, run_comparison, sweep_draft_steps, BenchReport, DecoderSpec, RunConfig,
};
use freedave_core::pathlab::DEFAULT_STEP_CAP;

use common::{configs_dir, shipped};

fn all_shipped() -> Vec<(String, RunConfig)> {
    let mut out: Vec<_> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, RunConfig::load(&p).unwrap())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn shipped_configs_are_lossless() {
    let configs = all_shipped();
    assert!(configs.len() >= 6);
    for (name, cfg) in &configs {
        let d = match cfg.decoder {
            DecoderSpec::Freedave { d } => d,
            _ => 4,
        };
        let suite = [cfg.clone(), cfg.with_decoder(DecoderSpec::Freedave { d })];
        let report = run_comparison(&suite).unwrap();
        for row in report
            .rows
            .iter()
            .filter(|r| r.decoder.starts_with("freedave"))
        {
            assert!(row.lossless, "{name}: {row:?}");
        }
        let text = report.to_csv().unwrap();
        assert_eq!(BenchReport::parse_csv(&text).unwrap(), report.rows);
    }
}

#[test]
fn shipped_presets_use_expected_decoders() {
    assert_eq!(
        shipped("trado_like.json").decoder,
        DecoderSpec::Freedave { d: 8 }
    );
    assert_eq!(
        shipped("dream_like.json").decoder,
        DecoderSpec::Freedave { d: 4 }
    );
    assert_eq!(
        shipped("trado_like_threshold.json").decoder,
        DecoderSpec::Threshold { threshold: 0.9 }
    );
    assert_eq!(shipped("dream_like.json").scheduler.temperature, 0.1);
}

#[test]
fn context_free_speedup_row() {
    let report = run_comparison(&[shipped("context_free.json")]).unwrap();
    let fd = &report.rows[1];
    assert_eq!(report.rows[0].forward_calls, 32);
    assert_eq!(fd.forward_calls, 5);
    assert_eq!(fd.nfe_speedup, 6.4);
    assert!(fd.lossless);

    let d1 =
        run_comparison(
            &[shipped("context_free.json").with_decoder(DecoderSpec::Freedave { d: 1 })],
        )
        .unwrap();
    assert_eq!(d1.rows[1].nfe_speedup, 1.0);
    assert!(d1.rows[1].lossless);
}

#[test]
fn sweep_shape_on_context_free_config() {
    let ds = [1, 2, 4, 8, 16, 32];
    let report = sweep_draft_steps(&shipped("context_free.json"), &ds).unwrap();
    let calls: Vec<u64> = report.rows[1..].iter().map(|r| r.forward_calls).collect();
    assert_eq!(calls, vec![32, 17, 9, 5, 3, 2]);
    let tput: Vec<f64> = report.rows[1..].iter().map(|r| r.throughput_nfe).collect();
    assert!(tput.windows(2).all(|w| w[0] <= w[1]));
    let memory: Vec<usize> = report.rows[1..]
        .iter()
        .map(|r| r.peak_memory_proxy)
        .collect();
    assert!(memory.windows(2).all(|w| w[0] <= w[1]));
    assert!(report.rows.iter().all(|r| r.lossless));
}

#[test]
fn shipped_witness_is_lossy_for_threshold_only() {
    let cfg = shipped("threshold_witness.json");
    let report = run_comparison(&[
        cfg.clone(),
        cfg.with_decoder(DecoderSpec::Freedave { d: 8 }),
    ])
    .unwrap();
    let by_name = |n: &str| report.rows.iter().find(|r| r.decoder == n).unwrap();
    assert!(!by_name("threshold").lossless);
    assert!(by_name("freedave-d8").lossless);
}

#[test]
fn shipped_pathlab_config() {
    let summary = pathlab_summary(&shipped("pathlab_small.json"), DEFAULT_STEP_CAP).unwrap();
    let fd = summary.freedave.as_ref().unwrap();
    assert_eq!(fd.cut_points, fd.verifier_path);
    assert!(fd.respects_bound);
    let jumps = fd.cut_points.len() - 1;
    assert!(summary.optimal.len() <= jumps);
    let json = serde_json::to_value(&summary).unwrap();
    assert!(json["edges"].as_array().unwrap().len() >= summary.steps);
}

#[test]
fn json_report_carries_rounds() {
    let report = run_comparison(&[shipped("dream_like.json")]).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    let rounds = json["results"][1]["rounds"].as_array().unwrap();
    assert!(!rounds.is_empty());
    assert!(rounds[0]["drafts"].is_array());
}
