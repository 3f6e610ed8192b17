//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trisleep_core::{report, ConfusionMatrix, FusionMode, Model, ModelConfig, Schedule};
use trisleep_harness::{
    load_data, prepare_recording, run_eval, run_finetune, run_gradcheck, run_pretrain, save_pretrained,
    synth_generate, Checkpoint, ExperimentConfig, FinetuneOutcome, PipelineConfig, Splits, SynthSpec,
};
use trisleep_numcore::{GradcheckConfig, Graph, SeedStream, Tensor};
use trisleep_sync::{
    align_overlap, assign_labels, segment, zero_fill, Chunk, ChunkedStream, LabelInterval, LabelTrack, Modality,
    SegmentOptions, Trimodal,
};

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fine-tuning runs shared between criteria, keyed by (label, seed).
#[derive(Default)]
struct Runs {
    splits: HashMap<u64, Splits>,
    finetuned: HashMap<(String, u64), FinetuneOutcome>,
}

impl Runs {
    fn base(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::load(&config_path("toy.cfg")).expect("toy config parses");
        cfg.seed = Some(seed);
        cfg
    }

    fn splits(&mut self, seed: u64) -> &Splits {
        self.splits
            .entry(seed)
            .or_insert_with(|| load_data(&Self::base(seed)).expect("benchmark builds"))
    }

    fn finetune(&mut self, label: &str, cfg: ExperimentConfig) -> &FinetuneOutcome {
        let seed = cfg.seed.expect("seeded");
        let key = (label.to_string(), seed);
        if !self.finetuned.contains_key(&key) {
            let splits = self.splits(seed).clone();
            let run = run_finetune(&cfg, &splits).expect("fine-tuning runs");
            self.finetuned.insert(key.clone(), run);
        }
        &self.finetuned[&key]
    }

    fn mode(&mut self, mode: FusionMode, seed: u64) -> &FinetuneOutcome {
        let cfg = ExperimentConfig { fusion: mode, ..Self::base(seed) };
        self.finetune(&mode.to_string(), cfg)
    }
}

fn gradients(_: &mut Runs) -> Outcome {
    let cfg = ExperimentConfig::load(&config_path("tiny.cfg")).map_err(|e| e.to_string())?;
    let model = cfg.model_config();
    for m in Modality::ALL {
        let b = model.branch(m);
        ensure(b.num_layers == 2 && b.dropout == 0.0, || format!("{m} branch is not the tiny shape"))?;
    }
    let widths = Modality::ALL.map(|m| model.branch(m).hidden);
    ensure(widths == [16, 16, 8] && model.schedule == Schedule::Modulo(4), || {
        format!("tiny widths {widths:?}, schedule {}", model.schedule)
    })?;
    let check = GradcheckConfig::default();
    ensure(check.rel_tol == 1e-3, || format!("tolerance {}", check.rel_tol))?;
    let start = Instant::now();
    let report = run_gradcheck(&cfg, &check).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = report.params.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ensure(failed.is_empty(), || format!("failing parameters: {failed:?}"))?;
    ensure(secs < 300.0, || format!("took {secs:.0} s"))?;
    Ok(format!("{} parameters within 1e-3 in {secs:.0} s", report.params.len()))
}

fn reduction_identity(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for instance in 0..20u64 {
        let model = Model::new(ModelConfig::toy(), SeedStream::new(instance)).map_err(|e| e.to_string())?;
        let m = Modality::ALL[rng.gen_range(0..3)];
        let branch = model.net.branch(m).expect("cross model has every branch");
        let layer = &branch.layers[rng.gen_range(0..branch.layers.len())];
        let frames = rng.gen_range(1..40);
        let h = Tensor::from_fn(&[frames, model.config().branch(m).hidden], |_| rng.gen_range(-3.0f32..3.0));
        let mut g = Graph::<f32>::inference(model.store.values());
        let hv = g.constant(h).map_err(|e| e.to_string())?;
        let a = layer.self_attention(&mut g, &hv).map_err(|e| e.to_string())?;
        let b = layer.cross_attention(&mut g, &hv, &hv).map_err(|e| e.to_string())?;
        let same = a.shape() == b.shape()
            && a.value().data().iter().zip(b.value().data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("instance {instance} ({m}) differs"))?;
    }
    Ok("20 random toy instances bit-identical".into())
}

fn schedules(_: &mut Runs) -> Outcome {
    let literal: [(&str, &[usize]); 7] = [
        ("none", &[]),
        ("mod2", &[1, 3, 5, 7, 9, 11]),
        ("mod4", &[1, 5, 9]),
        ("mod6", &[1, 7]),
        ("first4", &[0, 1, 2, 3]),
        ("mid4", &[4, 5, 6, 7]),
        ("last4", &[8, 9, 10, 11]),
    ];
    ensure(Schedule::PRESETS.len() == literal.len(), || "preset list changed".into())?;
    for (name, layers) in literal {
        let s: Schedule = name.parse().map_err(|e: trisleep_core::CoreError| e.to_string())?;
        let got = s.cross_layers(12);
        ensure(got == layers, || format!("{name} gives {got:?}"))?;
    }
    Ok("mod4 -> {1, 5, 9}; all 7 presets literal".into())
}

fn full_scale_shapes(_: &mut Runs) -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        seed: 0,
        duration_secs: 60.0,
        ..SynthSpec::default()
    };
    let rec = synth_generate(&spec).map_err(|e| e.to_string())?;
    let batch = prepare_recording(&rec, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let seg = &batch.segments.first().ok_or("no 30 s segment")?.segment;
    let cfg = ModelConfig::full();
    let model = Model::new(cfg.clone(), SeedStream::new(0)).map_err(|e| e.to_string())?;
    let mut g = Graph::<f32>::inference(model.store.values());
    let fwd = model.forward(&mut g, &seg.signals).map_err(|e| e.to_string())?;
    let pooled: Vec<usize> = fwd.pooled.iter().map(|p| p.value().len()).collect();
    let frames: Vec<usize> = fwd.frames.iter().map(|&(_, n)| n).collect();
    let secs = start.elapsed().as_secs_f64();
    ensure(pooled == [768, 768, 72], || format!("pooled {pooled:?}"))?;
    ensure(cfg.pooled_width() == 1608 && pooled.iter().sum::<usize>() == 1608, || "concat width".into())?;
    ensure(fwd.logits.value().len() == 2, || format!("logits {:?}", fwd.logits.shape()))?;
    ensure(frames[..2] == [1499, 1499], || format!("frames {frames:?}"))?;
    ensure(secs <= 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!("pooled 768/768/72, concat 1608, logits 2, frames 1499 in {secs:.0} s"))
}

/// Nonzero, position-dependent sample value.
fn sample_value(m: Modality, channel: usize, k: i64) -> f32 {
    1.0 + ((m.code() as i64 * 7919 + channel as i64 * 104_729 + k * 31).rem_euclid(9973)) as f32
}

struct SyncCase {
    streams: Trimodal<ChunkedStream>,
    /// Recorded samples by absolute grid index `k` (time `k / rate`).
    recorded: Trimodal<BTreeMap<i64, Vec<f32>>>,
    /// Integer-second UTC span of each stream.
    spans: Trimodal<(i64, i64)>,
    labels: Vec<LabelInterval>,
    window: i64,
}

fn sync_case(rng: &mut ChaCha8Rng) -> SyncCase {
    const RATES: [u32; 5] = [1, 2, 4, 5, 8];
    let mut recorded = Trimodal::from_fn(|_| BTreeMap::new());
    let mut spans = Trimodal::from_fn(|_| (0, 0));
    let streams = Trimodal::from_fn(|m| {
        let rate = RATES[rng.gen_range(0..RATES.len())];
        let ch = m.channels();
        let mut t = rng.gen_range(0..20i64);
        let mut first = None;
        let mut s = 0u64;
        let mut chunks = Vec::new();
        for _ in 0..rng.gen_range(1..5) {
            t += rng.gen_range(0..6);
            first.get_or_insert(t);
            let len = rng.gen_range(1..30i64);
            let capacity = rate as i64 * len;
            let n = if rng.gen_bool(0.5) { capacity } else { rng.gen_range(0..=capacity) };
            let mut samples = Vec::with_capacity(n as usize * ch);
            for j in 0..n {
                let k = rate as i64 * t + j;
                let frame: Vec<f32> = (0..ch).map(|c| sample_value(m, c, k)).collect();
                samples.extend(&frame);
                recorded.get_mut(m).insert(k, frame);
            }
            chunks.push(Chunk {
                t_start: t as f64,
                t_end: (t + len) as f64,
                s_start: s,
                s_end: s + n as u64,
                samples,
            });
            s += n as u64;
            t += len;
        }
        *spans.get_mut(m) = (first.expect("at least one chunk"), t);
        ChunkedStream {
            modality: m,
            sample_rate: rate,
            channels: ch,
            chunks,
        }
    });
    let mut labels = Vec::new();
    let mut t = rng.gen_range(0..30i64);
    while t < 150 {
        let len = rng.gen_range(1..25i64);
        let label = rng.gen_range(0..3u8);
        if label < 2 {
            labels.push(LabelInterval {
                t_start: t as f64,
                t_end: (t + len) as f64,
                label,
            });
        }
        t += len;
    }
    SyncCase {
        streams,
        recorded,
        spans,
        labels,
        window: rng.gen_range(1..8),
    }
}

/// Value of stream `m` at grid index `k` on the per-sample timeline.
fn raster(case: &SyncCase, m: Modality, k: i64) -> Vec<f32> {
    case.recorded
        .get(m)
        .get(&k)
        .cloned()
        .unwrap_or_else(|| vec![0.0; m.channels()])
}

fn check_sync_case(case: &SyncCase) -> Result<usize, String> {
    let rate = |m: Modality| case.streams.get(m).sample_rate as i64;
    let dense = Trimodal::try_from_fn(|m| zero_fill(case.streams.get(m))).map_err(|e| e.to_string())?;
    for (m, d) in dense.iter() {
        let (a, b) = *case.spans.get(m);
        let span = case.streams.get(m).chunks.last().unwrap().t_end - case.streams.get(m).chunks[0].t_start;
        let expected = (rate(m) as f64 * span).round() as usize;
        ensure(d.frames() == expected, || format!("{m} zero_fill holds {} frames, expected {expected}", d.frames()))?;
        for i in 0..(rate(m) * (b - a)) {
            let want = raster(case, m, rate(m) * a + i);
            ensure(d.samples[i as usize * m.channels()..][..m.channels()] == want[..], || {
                format!("{m} zero_fill differs at frame {i}")
            })?;
        }
    }
    let aligned = align_overlap(&dense);
    let start = Modality::ALL.iter().map(|&m| case.spans.get(m).0).max().unwrap();
    let end = Modality::ALL.iter().map(|&m| case.spans.get(m).1).min().unwrap();
    let overlap = (end - start).max(0);
    for (m, d) in aligned.iter() {
        ensure(d.frames() as i64 == rate(m) * overlap, || format!("{m} aligned length {}", d.frames()))?;
        ensure(overlap == 0 || d.t0 == start as f64, || format!("{m} aligned start {}", d.t0))?;
    }
    let track = LabelTrack::new(case.labels.clone()).map_err(|e| e.to_string())?;
    let w = case.window;
    let segs = segment(&aligned, w as f64, SegmentOptions::default()).map_err(|e| e.to_string())?;
    let labeled = assign_labels(segs, &track, w as f64);
    let mut expected = Vec::new();
    for win in 0..overlap / w {
        let t0 = start + win * w;
        let mut seconds = [0usize; 2];
        for sec in t0..t0 + w {
            let mid = sec as f64 + 0.5;
            if let Some(iv) = case.labels.iter().find(|iv| iv.t_start <= mid && mid < iv.t_end) {
                seconds[iv.label as usize] += 1;
            }
        }
        if seconds[0] + seconds[1] > 0 {
            expected.push((t0, u8::from(seconds[1] > seconds[0])));
        }
    }
    ensure(labeled.len() == expected.len(), || {
        format!("{} labeled windows, oracle has {}", labeled.len(), expected.len())
    })?;
    for (seg, &(t0, label)) in labeled.iter().zip(&expected) {
        ensure(seg.segment.t_start == t0 as f64 && seg.label == label, || {
            format!("window at {} labeled {}, oracle {t0} labeled {label}", seg.segment.t_start, seg.label)
        })?;
        for (m, x) in seg.segment.signals.iter() {
            let len = (rate(m) * w) as usize;
            ensure(x.shape() == [m.channels(), len], || format!("{m} window shape {:?}", x.shape()))?;
            for t in 0..len {
                let want = raster(case, m, rate(m) * t0 + t as i64);
                for (c, v) in want.into_iter().enumerate() {
                    ensure(x.data()[c * len + t] == v, || format!("{m} window at {t0} differs at {c},{t}"))?;
                }
            }
        }
    }
    Ok(expected.len())
}

fn sync_oracle(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut windows = 0;
    for i in 0..100 {
        let case = sync_case(&mut rng);
        windows += check_sync_case(&case).map_err(|e| format!("case {i}: {e}"))?;
    }
    // Off-grid chunk boundaries: only the zero_fill length is predictable.
    for i in 0..100 {
        let rate = rng.gen_range(1..500u32);
        let mut t = rng.gen_range(-100.0..100.0);
        let mut chunks = Vec::new();
        for _ in 0..rng.gen_range(1..6) {
            t += rng.gen_range(0.0..3.0);
            let len = rng.gen_range(0.05..4.0);
            let n = (rate as f64 * len).round() as u64 / 2;
            chunks.push(Chunk {
                t_start: t,
                t_end: t + len,
                s_start: 0,
                s_end: n,
                samples: vec![1.0; n as usize],
            });
            t += len;
        }
        let span = chunks.last().unwrap().t_end - chunks[0].t_start;
        let stream = ChunkedStream {
            modality: Modality::Ecg,
            sample_rate: rate,
            channels: 1,
            chunks,
        };
        let d = zero_fill(&stream).map_err(|e| format!("off-grid case {i}: {e}"))?;
        let expected = (rate as f64 * span).round() as usize;
        ensure(d.frames() == expected, || format!("off-grid case {i}: {} frames, expected {expected}", d.frames()))?;
    }
    Ok(format!("100 trimodal cases ({windows} labeled windows) match the raster; 400 zero_fill lengths exact"))
}

fn metrics_oracle(_: &mut Runs) -> Outcome {
    struct Brute {
        accuracy: f64,
        precision: Option<f64>,
        recall: Option<f64>,
        f1: Option<f64>,
        kappa: Option<f64>,
    }
    // Expands the matrix into prediction/label pairs and counts them.
    fn brute(cm: &ConfusionMatrix) -> Brute {
        let mut pairs = Vec::new();
        for (p, l, n) in [(1u8, 1u8, cm.tp), (1, 0, cm.fp), (0, 1, cm.fn_), (0, 0, cm.tn)] {
            pairs.extend(std::iter::repeat_n((p, l), n as usize));
        }
        let n = pairs.len() as f64;
        let count = |f: &dyn Fn(&(u8, u8)) -> bool| pairs.iter().filter(|x| f(x)).count() as f64;
        let agree = count(&|(p, l)| p == l);
        let both = count(&|&(p, l)| p == 1 && l == 1);
        let pred_pos = count(&|&(p, _)| p == 1);
        let label_pos = count(&|&(_, l)| l == 1);
        let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        let p_o = agree / n;
        let p_e = (pred_pos / n) * (label_pos / n) + (1.0 - pred_pos / n) * (1.0 - label_pos / n);
        Brute {
            accuracy: p_o,
            precision: div(both, pred_pos),
            recall: div(both, label_pos),
            f1: div(2.0 * both, pred_pos + label_pos),
            kappa: (pred_pos != label_pos || (pred_pos != 0.0 && pred_pos != n)).then(|| (p_o - p_e) / (1.0 - p_e)),
        }
    }
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let mut draw = || if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..300u64) };
        let cm = ConfusionMatrix {
            tp: draw(),
            fp: draw(),
            fn_: draw(),
            tn: draw(),
        };
        if cm.total() == 0 {
            ensure(report(&cm).is_err(), || "empty matrix accepted".into())?;
            continue;
        }
        let r = report(&cm).map_err(|e| e.to_string())?;
        let b = brute(&cm);
        let fields = [
            ("accuracy", Some(r.accuracy), Some(b.accuracy)),
            ("precision", r.precision, b.precision),
            ("recall", r.recall, b.recall),
            ("f1", r.f1, b.f1),
            ("kappa", r.kappa, b.kappa),
        ];
        for (name, got, want) in fields {
            ensure(close(got, want), || format!("matrix {i} {cm:?}: {name} {got:?} vs {want:?}"))?;
            if let (Some(g), Some(w)) = (got, want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    let hand = report(&ConfusionMatrix {
        tp: 45,
        fp: 5,
        fn_: 5,
        tn: 45,
    })
    .map_err(|e| e.to_string())?;
    let kappa = hand.kappa.ok_or("hand case kappa undefined")?;
    ensure((kappa - 0.8).abs() <= 1e-12, || format!("hand case kappa {kappa}"))?;
    Ok(format!("1000 matrices, max deviation {worst:.1e}; 45/45/5/5 kappa {kappa:.12}"))
}

fn modality_benefit(runs: &mut Runs) -> Outcome {
    let modes = [
        FusionMode::Single(Modality::Audio),
        FusionMode::Single(Modality::Ecg),
        FusionMode::Single(Modality::Imu),
        FusionMode::Cross,
    ];
    let mut means = Vec::new();
    for mode in modes {
        let accs: Vec<f64> = SEEDS.iter().map(|&s| runs.mode(mode, s).report.accuracy).collect();
        means.push((mode, mean(&accs)));
    }
    let (cross, best) = (means[3].1, means[..3].iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap());
    let table: Vec<String> = means.iter().map(|(m, a)| format!("{m} {a:.3}")).collect();
    ensure(cross > best.1, || format!("cross does not beat {}: {}", best.0, table.join(", ")))?;
    Ok(format!("mean accuracy over 3 seeds: {}", table.join(", ")))
}

fn pretraining_benefit(runs: &mut Runs) -> Outcome {
    let mut pre = Vec::new();
    let mut scratch = Vec::new();
    for &seed in &SEEDS {
        let mut cfg = Runs::base(seed);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let outcomes = run_pretrain(&cfg, &Modality::ALL).map_err(|e| e.to_string())?;
        let paths = save_pretrained(&cfg, &outcomes, dir.path()).map_err(|e| e.to_string())?;
        for (o, p) in outcomes.iter().zip(paths) {
            *cfg.pretrained.get_mut(o.modality) = Some(p);
        }
        pre.push(runs.finetune("pretrained", cfg).report.accuracy);
        scratch.push(runs.mode(FusionMode::Cross, seed).report.accuracy);
    }
    let (p, s) = (mean(&pre), mean(&scratch));
    let detail = format!("pretrained {p:.3} vs scratch {s:.3} (seeds {pre:.3?} vs {scratch:.3?})");
    ensure(p >= s, || detail.clone())?;
    Ok(detail)
}

fn fusion_table(_: &mut Runs) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_trisleep"))
        .args(["ablate", "--suite", "fusion", "--seed", "0", "--out", "table", "--config"])
        .arg(config_path("toy.cfg"))
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).trim().to_string())?;
    let json = std::fs::read_to_string(dir.path().join("table/table.json")).map_err(|e| e.to_string())?;
    let table: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let cells = table["cells"].as_array().ok_or("no cells")?;
    let mut summary = Vec::new();
    for (cell, want) in cells.iter().zip(["early", "late", "cross"]) {
        let (Some(init), Some(last)) = (cell["initial_test_loss"].as_f64(), cell["test_loss"].as_f64()) else {
            return Err(format!("{want}: {}", cell["status"]));
        };
        ensure(cell["setting"] == want && cell["status"] == "ok", || format!("{want}: {}", cell["status"]))?;
        ensure(last.is_finite() && last < init, || format!("{want}: {init:.3} -> {last:.3}"))?;
        summary.push(format!("{want} {init:.3}->{last:.3}"));
    }
    ensure(cells.len() == 3, || format!("{} cells", cells.len()))?;
    Ok(format!("one command, all converged (test CE {})", summary.join(", ")))
}

fn determinism(runs: &mut Runs) -> Outcome {
    let first = runs.mode(FusionMode::Cross, 0).clone();
    let splits = load_data(&Runs::base(0)).map_err(|e| e.to_string())?;
    let again = run_finetune(&Runs::base(0), &splits).map_err(|e| e.to_string())?;
    ensure(first.report == again.report && first.test_loss == again.test_loss, || "metrics differ".into())?;
    ensure(first.history.losses == again.history.losses, || "loss curves differ".into())?;
    let bytes = first.checkpoint.to_bytes();
    ensure(bytes == again.checkpoint.to_bytes(), || "checkpoints differ".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.lbck");
    first.checkpoint.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(loaded.to_bytes() == bytes && std::fs::read(&path).unwrap() == bytes, || "round trip changed bytes".into())?;
    let (loss, report) = run_eval(&path, &splits).map_err(|e| e.to_string())?;
    ensure(report == first.report && loss == first.test_loss, || "reloaded model scores differently".into())?;
    Ok(format!("rerun identical; {} byte checkpoint round-trips and re-scores identically", bytes.len()))
}

type Criterion = fn(&mut Runs) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient suite", gradients),
        ("reduction identity", reduction_identity),
        ("schedule correctness", schedules),
        ("full-scale shapes", full_scale_shapes),
        ("sync oracle", sync_oracle),
        ("metrics oracle", metrics_oracle),
        ("modality benefit", modality_benefit),
        ("pretraining benefit", pretraining_benefit),
        ("fusion comparison", fusion_table),
        ("determinism and persistence", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut runs = Runs::default();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut runs))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(n);
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {status} {name}: {detail} [{secs:.0} s]");
    }
    let _ = std::panic::take_hook();
    if !failed.is_empty() {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
