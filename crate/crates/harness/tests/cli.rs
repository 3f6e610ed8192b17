use std::path::Path;
use std::process::{Command, Output};

fn trisleep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trisleep"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = trisleep(&["finetune", "--bogus", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stochastic_commands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synth", "--hours", "0.02", "--out", "d"][..],
        &["finetune", "--out", "r"][..],
        &["pretrain", "--out", "p"][..],
        &["ablate", "--suite", "fusion", "--out", "a"][..],
    ] {
        let out = trisleep(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim().lines().count(), 1, "{err}");
        assert!(err.contains("seed"), "{err}");
    }
}

#[test]
fn bad_config_file_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "seed = 1\nwidth = 3\n").unwrap();
    let out = trisleep(&["finetune", "--config", "bad.cfg", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 2"));
}

#[test]
fn synth_then_sync_writes_streams_labels_and_segments() {
    let dir = tempfile::tempdir().unwrap();
    let out = trisleep(&["synth", "--seed", "7", "--hours", "0.02", "--out", "data"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["audio.lbcs", "ecg.lbcs", "imu.lbcs", "labels.csv"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let out = trisleep(&["sync", "--in", "data", "--window-secs", "2", "--out", "seg.lbsg"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let batch = trisleep_sync::io::load_segments(&dir.path().join("seg.lbsg")).unwrap();
    assert!(batch.segments.len() >= 30);
}

#[test]
fn finetune_eval_and_ablate_produce_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy.cfg");
    let cfg = cfg.to_str().unwrap();
    let small = ["--seed", "3", "--families", "3", "--set", "duration_secs=80", "--steps", "4"];
    let mut args = vec!["finetune", "--config", cfg, "--fusion", "cross", "--schedule", "mod4", "--out", "run"];
    args.extend(small);
    let out = trisleep(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.lbck", "report.txt", "report.json", "run.log"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
    let out = trisleep(&["eval", "--checkpoint", "run/model.lbck"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("run/report.txt")).unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().starts_with(&report));

    let mut args = vec!["ablate", "--config", cfg, "--suite", "fusion", "--out", "abl"];
    args.extend(small);
    let out = trisleep(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("abl/table.txt")).unwrap();
    for row in ["early", "late", "cross"] {
        assert!(table.lines().any(|l| l.starts_with(row)), "{table}");
    }
}

#[test]
fn gradcheck_prints_a_table_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tiny.cfg");
    let out = trisleep(&["gradcheck", "--config", cfg.to_str().unwrap(), "--max-elements", "2"], dir.path());
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{table}");
    assert!(table.lines().next().unwrap().starts_with("parameter"));
    assert!(table.lines().skip(1).all(|l| l.trim_end().ends_with("pass")), "{table}");
}
