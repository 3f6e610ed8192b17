use proptest::prelude::*;
use trisleep_core::{FusionMode, Schedule};
use trisleep_harness::{DataSource, ExperimentConfig, HarnessError, Preset, KEYS};
use trisleep_sync::Modality;

#[test]
fn defaults_follow_the_documented_values() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.preset, Preset::Toy);
    assert_eq!(cfg.fusion, FusionMode::Cross);
    assert_eq!(cfg.schedule, Schedule::Modulo(4));
    assert_eq!((cfg.epochs, cfg.batch_size), (2, 16));
    assert_eq!(cfg.lr, 1e-4);
    assert_eq!(cfg.warmup_frac, 0.1);
    assert_eq!(cfg.seed, None);
    assert!(cfg.validate().is_err(), "a seed is mandatory");
}

#[test]
fn parses_comments_blanks_and_overrides() {
    let text = "# toy run\n\npreset = tiny\nfusion=late\nschedule = last4\nlayers = 12\nseed = 5\n  lr = 0.003  \ngrad_clip = none\npretrained.imu = /tmp/imu.lbck\ndata = seg.lbsg\nexec = sequential\n";
    let cfg = ExperimentConfig::parse(text).unwrap();
    assert_eq!(cfg.preset, Preset::Tiny);
    assert_eq!(cfg.fusion, FusionMode::Late);
    assert_eq!(cfg.schedule, Schedule::Range(8, 12));
    assert_eq!(cfg.layers, Some(12));
    assert_eq!(cfg.seed, Some(5));
    assert_eq!(cfg.lr, 0.003);
    assert_eq!(cfg.grad_clip, None);
    assert_eq!(cfg.pretrained.imu.as_deref(), Some(std::path::Path::new("/tmp/imu.lbck")));
    assert_eq!(cfg.data, DataSource::Segments("seg.lbsg".into()));
    let model = cfg.model_config();
    assert!(Modality::ALL.iter().all(|&m| model.branch(m).num_layers == 12));
    assert_eq!(model.branch(Modality::Audio).dropout, 0.0);
}

#[test]
fn unknown_key_reports_its_line() {
    let err = ExperimentConfig::parse("seed = 1\n\nlearning_rate = 0.1\n").unwrap_err();
    match err {
        HarnessError::Config { line, detail } => {
            assert_eq!(line, 3);
            assert!(detail.contains("learning_rate"), "{detail}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn malformed_lines_and_values_are_errors() {
    for (text, line) in [
        ("seed = 1\nno equals sign\n", 2),
        ("lr = fast\n", 1),
        ("fusion = mid\n", 1),
        ("schedule = mod5\n", 1),
        ("preset = huge\n", 1),
        ("seed = -3\n", 1),
        ("exec = gpu\n", 1),
    ] {
        match ExperimentConfig::parse(text) {
            Err(HarnessError::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?} gave {other:?}"),
        }
    }
}

#[test]
fn canonical_text_lists_every_key_and_round_trips() {
    let mut cfg = ExperimentConfig::parse("seed = 11\nfusion = ecg\npretrained.audio = a.lbck\nsteps = 40\n").unwrap();
    cfg.window_secs = 2.5;
    let text = cfg.to_text();
    for key in KEYS {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing");
        assert!(cfg.get(key).is_some());
    }
    assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    assert_eq!(ExperimentConfig::parse(&text).unwrap().hash(), cfg.hash());
}

#[test]
fn validation_catches_inconsistent_settings() {
    let ok = ExperimentConfig::parse("seed = 1\n").unwrap();
    ok.validate().unwrap();
    for text in [
        "seed = 1\nschedule = last4\n",
        "seed = 1\nbatch_size = 0\n",
        "seed = 1\npretrained.ecg = /definitely/missing.lbck\n",
        "seed = 1\npretrain.first_family = 5\n",
        "seed = 1\nwindow_secs = 400\n",
    ] {
        assert!(ExperimentConfig::parse(text).unwrap().validate().is_err(), "{text:?}");
    }
}

#[test]
fn epochs_set_the_step_count_unless_steps_is_given() {
    let mut cfg = ExperimentConfig::parse("seed = 2\nepochs = 2\nbatch_size = 16\n").unwrap();
    assert_eq!(cfg.train_config(100).unwrap().steps, 13);
    cfg.steps = Some(7);
    assert_eq!(cfg.train_config(100).unwrap().steps, 7);
}

proptest! {
    #[test]
    fn numeric_values_round_trip(
        seed in any::<u64>(),
        lr in 1e-8f64..1.0,
        window in 0.5f64..60.0,
        batch in 1usize..512,
        clip in proptest::option::of(0.01f64..100.0),
    ) {
        let cfg = ExperimentConfig {
            seed: Some(seed),
            lr,
            window_secs: window,
            batch_size: batch,
            grad_clip: clip,
            ..ExperimentConfig::default()
        };
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
