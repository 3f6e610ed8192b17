use trisleep_core::{CoreError, FusionMode};
use trisleep_harness::{
    load_data, run_ablation, run_eval, run_finetune, suite_configs, Checkpoint, ExperimentConfig, HarnessError, Suite,
};
use trisleep_numcore::{Execution, ParamStore, SeedStream};
use trisleep_sync::Modality;

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "seed = {seed}\nwindow_secs = 2\nfamilies = 4\nduration_secs = 90\nsteps = 12\nbatch_size = 4\nlr = 0.001\n"
    ))
    .unwrap()
}

#[test]
fn early_and_cross_runs_emit_comparable_reports() {
    let cfg = small(1);
    let splits = load_data(&cfg).unwrap();
    for mode in [FusionMode::Early, FusionMode::Cross] {
        let run = run_finetune(&ExperimentConfig { fusion: mode, ..cfg.clone() }, &splits).unwrap();
        let c = &run.report.confusion;
        assert_eq!(c.total() as usize, splits.test.len(), "{mode}");
        assert_eq!(run.history.losses.len(), 12);
        assert!(run.test_loss.is_finite());
        let log = run.run_log();
        for key in trisleep_harness::KEYS {
            assert!(log.contains(&format!("\n{key} = ")), "{key} missing from run log");
        }
        assert!(log.contains("# code version: "));
    }
}

#[test]
fn identical_seed_and_config_reproduce_everything() {
    let cfg = small(5);
    let a = run_finetune(&cfg, &load_data(&cfg).unwrap()).unwrap();
    let b = run_finetune(&cfg, &load_data(&cfg).unwrap()).unwrap();
    assert_eq!(a.history.losses, b.history.losses);
    assert_eq!(a.report, b.report);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}

#[test]
fn sequential_and_parallel_execution_agree() {
    let cfg = small(6);
    let splits = load_data(&cfg).unwrap();
    let par = run_finetune(&ExperimentConfig { exec: Execution::Parallel, ..cfg.clone() }, &splits).unwrap();
    let seq = run_finetune(&ExperimentConfig { exec: Execution::Sequential, ..cfg }, &splits).unwrap();
    assert_eq!(par.history.losses, seq.history.losses);
    assert_eq!(par.report, seq.report);
    // The embedded config records the execution mode; the weights must not.
    assert_eq!(par.checkpoint.tensors, seq.checkpoint.tensors);
}

#[test]
fn written_checkpoint_evaluates_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let splits = load_data(&cfg).unwrap();
    let run = run_finetune(&cfg, &splits).unwrap();
    run.write(dir.path()).unwrap();
    for f in ["model.lbck", "report.txt", "report.json", "run.log"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let (loss, report) = run_eval(&dir.path().join("model.lbck"), &splits).unwrap();
    assert_eq!(report, run.report);
    assert!((loss - run.test_loss).abs() < 1e-12);
}

#[test]
fn incompatible_pretrained_weights_name_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audio.lbck");
    // The tiny preset has a wider conv stack than the toy model.
    let tiny = trisleep_core::Model::new(trisleep_core::ModelConfig::tiny(), SeedStream::new(0)).unwrap();
    let mut audio = ParamStore::new();
    for (_, p) in tiny.store.iter().filter(|(_, p)| p.name.starts_with("audio.")) {
        audio.add(p.name.clone(), p.value.clone()).unwrap();
    }
    Checkpoint::from_store("", &audio).save(&path).unwrap();
    let mut cfg = small(3);
    cfg.pretrained.audio = Some(path);
    let splits = load_data(&cfg).unwrap();
    match run_finetune(&cfg, &splits) {
        Err(HarnessError::Core(CoreError::Load { name, .. })) => assert!(name.starts_with("audio.frontend.conv"), "{name}"),
        other => panic!("expected a load error, got {:?}", other.map(|r| r.report)),
    }
}

#[test]
fn suites_enumerate_the_table_rows() {
    let base = small(0);
    let dir = std::path::Path::new("/nonexistent");
    let labels = |s| suite_configs(s, &base, dir).unwrap().into_iter().map(|(l, _)| l).collect::<Vec<_>>();
    assert_eq!(labels(Suite::Schedules), ["none", "mod2", "mod4", "mod6", "first4", "mid4", "last4"]);
    assert_eq!(labels(Suite::Pretraining), ["none", "imu", "audio+imu", "ecg+imu", "all"]);
    assert_eq!(labels(Suite::Fusion), ["early", "late", "cross"]);
    assert_eq!(labels(Suite::Modalities), ["audio", "ecg", "imu", "cross"]);
    let pre = suite_configs(Suite::Pretraining, &base, dir).unwrap();
    let loaded = |i: usize| Modality::ALL.map(|m| pre[i].1.pretrained.get(m).is_some());
    assert_eq!(loaded(0), [false, false, false]);
    assert_eq!(loaded(1), [false, false, true]);
    assert_eq!(loaded(2), [true, false, true]);
    assert_eq!(loaded(3), [false, true, true]);
    assert_eq!(loaded(4), [true, true, true]);
}

#[test]
fn ablation_table_keeps_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        steps: Some(2),
        ..small(4)
    };
    let splits = load_data(&cfg).unwrap();
    // Two-layer branches cannot host the four-layer range schedules.
    let table = run_ablation(Suite::Schedules, &cfg, &splits, dir.path()).unwrap();
    assert_eq!(table.cells.len(), 7);
    for label in ["first4", "mid4", "last4"] {
        assert!(table.cell(label).unwrap().report().is_none(), "{label}");
    }
    let text = table.to_text();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().filter(|l| l.starts_with("last4")).all(|l| l.contains(" -  ")));
    let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 7);
}

#[test]
fn toy_cross_beats_the_majority_baseline() {
    let mut accs = Vec::new();
    let mut majority = Vec::new();
    for seed in 0..3 {
        let cfg = ExperimentConfig::parse(&format!(
            "seed = {seed}\nwindow_secs = 2\nfamilies = 8\nduration_secs = 180\nsteps = 200\nbatch_size = 8\nlr = 0.001\n"
        ))
        .unwrap();
        let splits = load_data(&cfg).unwrap();
        let run = run_finetune(&cfg, &splits).unwrap();
        let sleep = splits.test.iter().filter(|s| s.label == 1).count() as f64 / splits.test.len() as f64;
        accs.push(run.report.accuracy);
        majority.push(sleep.max(1.0 - sleep));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&accs) > mean(&majority).max(0.5), "accuracy {accs:?} vs majority {majority:?}");
}
